#include "w4p/service.hpp"

#include <algorithm>
#include <set>

#include "httplib.h"
#include "json.hpp"
#include "w4p/image.hpp"
#include "w4p/util.hpp"

namespace w4p {

using nlohmann::json;

namespace {

constexpr const char* kPrefix = "/api/v1";

HttpResponse json_response(int status, const json& body) { return {status, "application/json", body.dump()}; }

HttpResponse error_response(ErrorKind kind, const std::string& message) {
  return json_response(http_status(kind), {{"error", {{"kind", std::string(to_string(kind))}, {"message", message}}}});
}

json parse_body(const std::string& body) {
  try {
    json j = json::parse(body);
    require(j.is_object(), ErrorKind::InvalidArgument, "request body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidArgument, std::string("malformed JSON body: ") + e.what());
  }
}

template <typename T>
T field(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::InvalidArgument, std::string("field '") + key + "' is missing or has the wrong type");
  }
}

std::string image_url(const std::string& id) { return std::string(kPrefix) + "/images/" + id; }

template <typename F>
HttpResponse guarded(F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    return error_response(e.kind(), e.what());
  } catch (const std::exception& e) {
    return json_response(500, {{"error", {{"kind", "internal"}, {"message", e.what()}}}});
  }
}

}  // namespace

int http_status(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument:
    case ErrorKind::Parse:
    case ErrorKind::Config:
    case ErrorKind::Empty:
      return 400;
    case ErrorKind::NotFound:
      return 404;
    case ErrorKind::Conflict:
    case ErrorKind::FingerprintMismatch:
      return 409;
    case ErrorKind::Numeric:
    case ErrorKind::Io:
      return 500;
  }
  return 500;
}

Service::Service(const RetrievalEngine& engine, std::vector<Dataset> image_sets, ImageSource images,
                 std::optional<CurationSession> curation)
    : engine_(engine), image_sets_(std::move(image_sets)), images_(std::move(images)), curation_(std::move(curation)) {}

HttpResponse Service::handle(const std::string& method, const std::string& path, const std::string& body) {
  const std::string p(kPrefix);
  if (path.rfind(p, 0) != 0) return error_response(ErrorKind::NotFound, "no route for " + path);
  const std::string route = path.substr(p.size());
  if (method == "POST" && route == "/retrieve") return retrieve(body);
  if (method == "GET" && route == "/curation/next") return curation_next();
  if (method == "POST" && route == "/curation/verdict") return curation_verdict(body);
  if (method == "GET" && route == "/tinets") return tinets();
  if (method == "GET" && route == "/health") return json_response(200, {{"status", "ok"}});
  if (method == "GET" && route.rfind("/images/", 0) == 0) return image(route.substr(8));
  return error_response(ErrorKind::NotFound, "no route for " + method + " " + path);
}

HttpResponse Service::retrieve(const std::string& body) const {
  return guarded([&] {
    const json req = parse_body(body);
    for (const auto& [key, value] : req.items()) {
      static const std::set<std::string> known = {"image_id", "image_b64", "caption", "mode", "tinet_ids", "k"};
      require(known.count(key) > 0, ErrorKind::InvalidArgument, "unknown field '" + key + "'");
    }
    QuerySpec spec;
    spec.mode = query_mode_from_string(field<std::string>(req, "mode"));
    if (req.contains("image_id")) spec.image_id = field<std::string>(req, "image_id");
    if (req.contains("caption")) spec.caption = field<std::string>(req, "caption");
    if (req.contains("tinet_ids")) spec.tinet_ids = field<std::vector<std::string>>(req, "tinet_ids");
    const long long k = req.contains("k") ? field<long long>(req, "k") : 10;
    require(k >= 1, ErrorKind::InvalidArgument, "k must be >= 1");
    require(!(req.contains("image_id") && req.contains("image_b64")), ErrorKind::InvalidArgument,
            "give either image_id or image_b64, not both");

    std::optional<Eigen::VectorXd> f_v;
    if (req.contains("image_b64")) {
      const auto bytes = base64_decode(field<std::string>(req, "image_b64"));
      Image img;
      try {
        img = decode_image(bytes);
      } catch (const Error& e) {
        fail(ErrorKind::InvalidArgument, std::string("image_b64: ") + e.what());
      }
      f_v = engine_.encoder().encode_image(img);
    }
    const auto res = engine_.retrieve(spec, static_cast<std::size_t>(k), {}, f_v);
    json results = json::array();
    for (std::size_t i = 0; i < res.ranked_ids.size(); ++i)
      results.push_back(
          {{"image_id", res.ranked_ids[i]}, {"score", res.scores[i]}, {"thumbnail_url", image_url(res.ranked_ids[i])}});
    return json_response(200, {{"mode", to_string(spec.mode)}, {"k", k}, {"results", results}});
  });
}

HttpResponse Service::curation_next() const {
  return guarded([&] {
    require(curation_.has_value(), ErrorKind::NotFound, "no active curation session");
    std::lock_guard lock(curation_mutex_);
    std::set<std::string> done;
    for (const auto& v : VerdictLog(curation_->verdict_log).read()) done.insert(v.pair_id);
    const Candidate* best = nullptr;
    std::size_t remaining = 0;
    for (const auto& c : curation_->candidates) {
      if (done.count(c.pair_id)) continue;
      ++remaining;
      if (!best || c.similarity > best->similarity) best = &c;
    }
    if (!best) return HttpResponse{204, "application/json", ""};
    return json_response(200, {{"pair_id", best->pair_id},
                               {"target_id", best->target_id},
                               {"candidate_id", best->candidate_id},
                               {"similarity", best->similarity},
                               {"remaining", remaining},
                               {"image_urls", {{"target", image_url(best->target_id)},
                                               {"candidate", image_url(best->candidate_id)}}}});
  });
}

HttpResponse Service::curation_verdict(const std::string& body) {
  return guarded([&] {
    require(curation_.has_value(), ErrorKind::NotFound, "no active curation session");
    const json req = parse_body(body);
    const auto pair_id = field<std::string>(req, "pair_id");
    const auto decision = decision_from_string(field<std::string>(req, "decision"));
    const auto annotator = req.contains("annotator") ? field<std::string>(req, "annotator") : std::string();

    std::lock_guard lock(curation_mutex_);
    const auto it = std::find_if(curation_->candidates.begin(), curation_->candidates.end(),
                                 [&](const Candidate& c) { return c.pair_id == pair_id; });
    require(it != curation_->candidates.end(), ErrorKind::NotFound, "unknown pair_id '" + pair_id + "'");
    const Verdict v{pair_id, it->target_id, it->candidate_id, decision, annotator, iso8601_now()};
    VerdictLog(curation_->verdict_log).append(v);
    if (decision == Decision::Accept && !curation_->triplets_path.empty()) {
      const auto applied = apply_verdicts(TripletSet::load(curation_->triplets_path), curation_->candidates, {v});
      applied.triplets.save(curation_->triplets_path);
    }
    return json_response(200, {{"status", "recorded"}, {"pair_id", pair_id}, {"decision", to_string(decision)}});
  });
}

HttpResponse Service::image(const std::string& id) const {
  return guarded([&] {
    for (const auto& ds : image_sets_) {
      auto row = ds.find(id);
      if (!row) continue;
      Image img = images_(ds, *row);
      const int h = thumbnail_height;
      const int w = std::max(1, static_cast<int>(std::lround(static_cast<double>(img.width) * h / img.height)));
      const auto png = encode_png(resize_image(img, h, w));
      return HttpResponse{200, "image/png", std::string(png.begin(), png.end())};
    }
    fail(ErrorKind::NotFound, "unknown image_id '" + id + "'");
  });
}

HttpResponse Service::tinets() const {
  json list = json::array();
  for (const auto& [id, net] : engine_.tinets())
    list.push_back({{"id", id}, {"config", net.config().to_json()}, {"metadata", net.metadata()}});
  return json_response(200, {{"tinets", list}});
}

std::pair<std::string, int> parse_bind(std::string_view spec) {
  std::string host = "127.0.0.1";
  int port = 8080;
  if (spec.empty()) return {host, port};
  const auto colon = spec.rfind(':');
  std::string_view h = colon == std::string_view::npos ? spec : spec.substr(0, colon);
  if (!h.empty()) host = std::string(h);
  if (colon != std::string_view::npos) {
    const std::string p(spec.substr(colon + 1));
    try {
      std::size_t used = 0;
      port = std::stoi(p, &used);
      require(used == p.size(), ErrorKind::Config, "");
    } catch (const std::exception&) {
      fail(ErrorKind::Config, "bind address '" + std::string(spec) + "' has an invalid port");
    }
    require(port >= 0 && port <= 65535, ErrorKind::Config, "bind port out of range");
  }
  return {host, port};
}

struct HttpServer::Impl {
  httplib::Server server;
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>()) {
  auto forward = [&service](const httplib::Request& req, httplib::Response& res) {
    const auto out = service.handle(req.method, req.path, req.body);
    res.status = out.status;
    if (out.status != 204) res.set_content(out.body, out.content_type);
  };
  impl_->server.Get(R"(/api/v1/.*)", forward);
  impl_->server.Post(R"(/api/v1/.*)", forward);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    require(p > 0, ErrorKind::Io, "cannot bind " + host);
    return p;
  }
  require(impl_->server.bind_to_port(host, port), ErrorKind::Io, "cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace w4p
