#pragma once

// Query construction in the four modes and exact cosine ranking over a
// gallery of cached image features.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "w4p/encoder.hpp"
#include "w4p/feature_cache.hpp"
#include "w4p/tinet.hpp"

namespace w4p {

enum class QueryMode { ImageOnly, TextOnly, Avg, Composed };

std::string to_string(QueryMode mode);
QueryMode query_mode_from_string(std::string_view s);

struct QuerySpec {
  QueryMode mode = QueryMode::Composed;
  std::optional<std::string> image_id;
  std::optional<std::string> caption;
  std::vector<std::string> tinet_ids;
};

struct RetrievalResult {
  std::vector<std::string> ranked_ids;
  std::vector<double> scores;
  std::vector<std::size_t> gallery_rows;
  QuerySpec query;
};

// Unit vector; throws ErrorKind::Numeric on a zero or non-finite vector.
Eigen::VectorXd normalized(const Eigen::VectorXd& v);

// Pseudo-word from every TINet, each spliced into the inference template
// (or the train template when `caption` is empty), text-encoded, normalized,
// averaged and renormalized.
Eigen::VectorXd compose_query(const DualEncoder& encoder, std::span<const Tinet* const> tinets,
                              const Eigen::VectorXd& f_v, std::string_view caption);

// ImageOnly -> f^v, TextOnly -> f^t of the caption, Avg -> renormalized mean
// of the two unit vectors. Composed is rejected here.
Eigen::VectorXd baseline_query(const DualEncoder& encoder, QueryMode mode, const std::optional<Eigen::VectorXd>& f_v,
                               const std::optional<std::string>& caption);

struct RankOptions {
  std::vector<std::string> exclude_ids;
  // Partial sort of the top k instead of a full sort; same order either way.
  bool partial = true;
};

// Descending cosine score, ties by ascending gallery row. k = 0 ranks the
// whole gallery.
RetrievalResult rank_gallery(const Eigen::VectorXd& query, const FeatureTable& gallery, std::size_t k,
                             const RankOptions& opts = {});

// Holds the loaded state a query needs: encoder, gallery features, reference
// image features and named TINets.
class RetrievalEngine {
 public:
  RetrievalEngine(const DualEncoder& encoder, FeatureCache gallery);

  const DualEncoder& encoder() const { return *encoder_; }
  const FeatureCache& gallery() const { return gallery_; }

  // Reference images looked up by id; gallery rows are used as a fallback.
  void add_references(const FeatureTable& refs);
  void add_tinet(const std::string& id, Tinet tinet);
  const std::map<std::string, Tinet>& tinets() const { return tinets_; }

  std::optional<Eigen::VectorXd> reference(const std::string& image_id) const;

  // f_v overrides the image_id lookup (e.g. an uploaded image).
  Eigen::VectorXd query_vector(const QuerySpec& spec, const std::optional<Eigen::VectorXd>& f_v = std::nullopt) const;
  RetrievalResult retrieve(const QuerySpec& spec, std::size_t k, const RankOptions& opts = {},
                           const std::optional<Eigen::VectorXd>& f_v = std::nullopt) const;

 private:
  const DualEncoder* encoder_;
  FeatureCache gallery_;
  FeatureTable references_;
  std::map<std::string, Tinet> tinets_;
};

}  // namespace w4p
