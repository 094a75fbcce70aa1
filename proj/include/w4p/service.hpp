#pragma once

// JSON-over-HTTP facade for retrieval and the curation verdict loop. All
// routes live under /api/v1.
//
//   POST /api/v1/retrieve          {image_id | image_b64, caption, mode, tinet_ids, k}
//   GET  /api/v1/curation/next     highest-similarity unresolved pair, 204 when done
//   POST /api/v1/curation/verdict  {pair_id, decision, annotator}
//   GET  /api/v1/images/<id>       PNG thumbnail
//   GET  /api/v1/tinets            loaded TINet ids and metadata
//   GET  /api/v1/health

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "w4p/curation.hpp"
#include "w4p/dataset.hpp"
#include "w4p/error.hpp"
#include "w4p/feature_cache.hpp"
#include "w4p/retrieval.hpp"

namespace w4p {

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

int http_status(ErrorKind kind);

struct CurationSession {
  std::vector<Candidate> candidates;
  std::filesystem::path verdict_log;
  std::filesystem::path triplets_path;  // rewritten when a verdict accepts a pair
};

class Service {
 public:
  // `image_sets` resolve thumbnail ids to files read through `images`.
  Service(const RetrievalEngine& engine, std::vector<Dataset> image_sets = {},
          ImageSource images = load_dataset_image, std::optional<CurationSession> curation = std::nullopt);

  HttpResponse handle(const std::string& method, const std::string& path, const std::string& body = "");

  HttpResponse retrieve(const std::string& body) const;
  HttpResponse curation_next() const;
  HttpResponse curation_verdict(const std::string& body);
  HttpResponse image(const std::string& id) const;
  HttpResponse tinets() const;

  int thumbnail_height = 128;

 private:
  const RetrievalEngine& engine_;
  std::vector<Dataset> image_sets_;
  ImageSource images_;
  std::optional<CurationSession> curation_;
  mutable std::mutex curation_mutex_;
};

// "host:port", "host" or ":port"; defaults 127.0.0.1 and 8080.
std::pair<std::string, int> parse_bind(std::string_view spec);

class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Port 0 picks a free port; returns the bound port.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace w4p
