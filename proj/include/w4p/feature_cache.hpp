#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "w4p/dataset.hpp"
#include "w4p/encoder.hpp"
#include "w4p/hash.hpp"

namespace w4p {

// id -> float32 row. Row order is insertion order and doubles as the gallery
// index used for tie-breaking.
class FeatureTable {
 public:
  FeatureTable() = default;
  explicit FeatureTable(int dim);

  void add(const std::string& id, const Eigen::VectorXd& v);
  void set_row(std::size_t row, const Eigen::VectorXd& v);

  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  int dim() const { return dim_; }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::string& id(std::size_t row) const { return ids_.at(row); }
  std::optional<std::size_t> find(const std::string& id) const;
  Eigen::VectorXd row(std::size_t row) const;
  Eigen::VectorXd at(const std::string& id) const;
  const std::vector<float>& data() const { return data_; }

  // Binary rows plus a {"image_id": row} JSON sidecar.
  void save(const std::filesystem::path& bin, const std::filesystem::path& index, const Fingerprint& fp) const;
  static FeatureTable load(const std::filesystem::path& bin, const std::filesystem::path& index, Fingerprint* fp);

  bool operator==(const FeatureTable& o) const { return dim_ == o.dim_ && ids_ == o.ids_ && data_ == o.data_; }

 private:
  int dim_ = 0;
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<float> data_;
};

struct FeatureCache {
  FeatureTable images;
  std::optional<FeatureTable> texts;  // keyed by image_id; absent for image-only corpora
  Fingerprint fingerprint{};

  void save(const std::filesystem::path& dir) const;
  // Throws ErrorKind::FingerprintMismatch when `expected` is given and differs.
  static FeatureCache load(const std::filesystem::path& dir, const std::optional<Fingerprint>& expected = std::nullopt);
};

using ImageSource = std::function<Image(const Dataset&, std::size_t)>;

// Reads dataset.resolve_path(i) from disk.
Image load_dataset_image(const Dataset& dataset, std::size_t i);

// One f^v per image and, when the dataset has captions, one f^t per caption.
// Requires a frozen encoder. Rows are sharded over `threads` workers.
FeatureCache build_feature_cache(const DualEncoder& encoder, const Dataset& dataset,
                                 const ImageSource& images = load_dataset_image, int threads = 1);

void check_fingerprint(const Fingerprint& expected, const Fingerprint& actual, const std::string& what);

}  // namespace w4p
