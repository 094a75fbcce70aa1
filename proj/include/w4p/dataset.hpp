#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "w4p/match_labels.hpp"

namespace w4p {

struct ImageRecord {
  std::string image_id;
  std::string identity_id;
  std::string path;
  int width = 0;
  int height = 0;
  std::string source;

  bool operator==(const ImageRecord&) const = default;
};

struct CaptionRecord {
  std::string image_id;
  std::string text;

  bool operator==(const CaptionRecord&) const = default;
};

struct Triplet {
  std::string query_image_id;
  std::string relative_caption;
  std::vector<std::string> target_image_ids;

  bool operator==(const Triplet&) const = default;
};

enum class ManifestKind { ImageCaption, ImageOnly, Triplets };

ManifestKind manifest_kind_from_string(std::string_view s);

// Immutable image manifest (optionally with one caption per image). Copies
// share the underlying records.
class Dataset {
 public:
  Dataset() = default;

  // JSONL manifest. ImageCaption requires a caption on every line; ImageOnly
  // drops captions if present.
  static Dataset load(const std::filesystem::path& path, ManifestKind kind);
  static Dataset from_records(std::vector<ImageRecord> images, std::vector<std::string> captions = {},
                              std::filesystem::path base_dir = {});

  std::size_t size() const { return data_ ? data_->images.size() : 0; }
  bool empty() const { return size() == 0; }
  const ImageRecord& image(std::size_t i) const { return data_->images.at(i); }
  std::span<const ImageRecord> images() const;
  bool has_captions() const { return data_ && !data_->captions.empty(); }
  CaptionRecord caption(std::size_t i) const;
  std::optional<std::size_t> find(std::string_view image_id) const;
  std::size_t index_of(std::string_view image_id) const;
  std::filesystem::path resolve_path(std::size_t i) const;
  const std::filesystem::path& base_dir() const;
  std::vector<std::string> identity_ids() const;

  Dataset subset(std::span<const std::size_t> indices) const;
  void save(const std::filesystem::path& path) const;

  bool operator==(const Dataset& other) const;

 private:
  struct Data {
    std::vector<ImageRecord> images;
    std::vector<std::string> captions;  // empty, or one per image
    std::unordered_map<std::string, std::size_t> index;
    std::filesystem::path base_dir;
  };
  std::shared_ptr<const Data> data_;
};

inline Dataset load_manifest(const std::filesystem::path& path, ManifestKind kind) { return Dataset::load(path, kind); }

class TripletSet {
 public:
  TripletSet() = default;
  explicit TripletSet(std::vector<Triplet> triplets);

  static TripletSet load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  const std::vector<Triplet>& triplets() const { return triplets_; }
  std::size_t size() const { return triplets_.size(); }

  // Every query id resolves in `query_images`, every target in `gallery`, and
  // no query lists itself as a target.
  void validate(const Dataset& query_images, const Dataset& gallery) const;

  // One query per distinct (image, caption); targets merged in file order.
  std::vector<Triplet> queries() const;

 private:
  std::vector<Triplet> triplets_;
};

struct Batch {
  std::vector<std::size_t> indices;  // rows of the source dataset
  std::vector<ImageRecord> images;
  std::optional<std::vector<CaptionRecord>> captions;
  std::vector<std::string> identity_ids;

  std::size_t size() const { return indices.size(); }
};

struct SamplerConfig {
  bool identity_aware = true;
  int max_per_identity = 2;
};

// Deterministic epoch-wise sampler. Each epoch is a seeded permutation packed
// into batches; with identity_aware set, a batch holds at most
// max_per_identity records of any identity and overflow is deferred to the
// next batch. batch(epoch, step) is a pure function of its arguments.
class BatchSampler {
 public:
  BatchSampler(Dataset dataset, std::size_t batch_size, std::uint64_t seed, SamplerConfig cfg = {});

  std::size_t steps_per_epoch(std::size_t epoch) const;
  Batch batch(std::size_t epoch, std::size_t step) const;
  std::vector<std::vector<std::size_t>> epoch_plan(std::size_t epoch) const;
  std::size_t batch_size() const { return batch_size_; }

 private:
  Dataset dataset_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  SamplerConfig cfg_;
};

Batch make_batch(const Dataset& dataset, std::vector<std::size_t> indices);
Batch sample_batch(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed, std::size_t epoch = 0,
                   std::size_t step = 0, SamplerConfig cfg = {});

}  // namespace w4p
