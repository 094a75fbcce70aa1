#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "w4p/dataset.hpp"
#include "w4p/retrieval.hpp"

namespace w4p {

// Both functions take a full ranking of the gallery; every ground-truth id
// must occur in it.
bool rank_k(const RetrievalResult& result, const std::set<std::string>& gt_ids, std::size_t k);
double average_precision(const RetrievalResult& result, const std::set<std::string>& gt_ids);

// 1-based rank of the first ground-truth hit.
std::size_t first_hit_rank(const RetrievalResult& result, const std::set<std::string>& gt_ids);

struct QueryOutcome {
  std::string query_id;
  std::string image_id;
  std::string caption;
  std::size_t first_hit = 0;
  double ap = 0.0;
  std::vector<std::string> top;  // first ten ranked ids
};

struct EvalReport {
  double rank1 = 0.0;  // percentages
  double rank5 = 0.0;
  double rank10 = 0.0;
  double map = 0.0;
  std::vector<QueryOutcome> per_query;
  nlohmann::json config;

  // Metrics rounded to three decimals; the config fingerprint is the SHA-256
  // of config.dump().
  nlohmann::json to_json() const;
  std::string csv_header() const;
  std::string csv_row(const std::string& label) const;
  void save(const std::filesystem::path& json_path, const std::optional<std::filesystem::path>& csv_path = {},
            const std::string& label = "") const;
};

double round3(double v);

using QueryRunner = std::function<RetrievalResult(const Triplet& query)>;

// One query per distinct (image, caption); each query's result must rank the
// whole gallery.
EvalReport evaluate(const std::vector<Triplet>& queries, const QueryRunner& run, nlohmann::json config = {});
EvalReport evaluate(const TripletSet& triplets, const RetrievalEngine& engine, const QuerySpec& base,
                    const RankOptions& opts = {}, nlohmann::json config = {});

}  // namespace w4p
