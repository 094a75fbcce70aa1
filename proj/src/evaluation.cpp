#include "w4p/evaluation.hpp"

#include <cmath>

#include "w4p/error.hpp"
#include "w4p/hash.hpp"
#include "w4p/util.hpp"

namespace w4p {

using nlohmann::json;

namespace {

void check_gt(const RetrievalResult& result, const std::set<std::string>& gt_ids) {
  require(!gt_ids.empty(), ErrorKind::InvalidArgument, "ground-truth set is empty");
  std::size_t found = 0;
  for (const auto& id : result.ranked_ids) found += gt_ids.count(id);
  if (found == gt_ids.size()) return;
  for (const auto& g : gt_ids) {
    bool present = false;
    for (const auto& id : result.ranked_ids) present = present || id == g;
    require(present, ErrorKind::NotFound, "ground-truth id '" + g + "' is not in the ranked gallery");
  }
}

}  // namespace

double round3(double v) { return std::round(v * 1000.0) / 1000.0; }

std::size_t first_hit_rank(const RetrievalResult& result, const std::set<std::string>& gt_ids) {
  check_gt(result, gt_ids);
  for (std::size_t r = 0; r < result.ranked_ids.size(); ++r)
    if (gt_ids.count(result.ranked_ids[r])) return r + 1;
  return 0;
}

bool rank_k(const RetrievalResult& result, const std::set<std::string>& gt_ids, std::size_t k) {
  require(k >= 1, ErrorKind::InvalidArgument, "rank_k: k must be >= 1");
  return first_hit_rank(result, gt_ids) <= k;
}

double average_precision(const RetrievalResult& result, const std::set<std::string>& gt_ids) {
  check_gt(result, gt_ids);
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < result.ranked_ids.size(); ++r) {
    if (!gt_ids.count(result.ranked_ids[r])) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  return sum / static_cast<double>(gt_ids.size());
}

json EvalReport::to_json() const {
  json pq = json::array();
  for (const auto& q : per_query)
    pq.push_back({{"query_id", q.query_id},
                  {"image_id", q.image_id},
                  {"caption", q.caption},
                  {"first_hit_rank", q.first_hit},
                  {"ap", q.ap},
                  {"top", q.top}});
  return {{"metrics", {{"rank1", round3(rank1)}, {"rank5", round3(rank5)}, {"rank10", round3(rank10)}, {"map", round3(map)}}},
          {"num_queries", per_query.size()},
          {"config", config},
          {"config_fingerprint", to_hex(sha256(config.dump()))},
          {"per_query", pq}};
}

std::string EvalReport::csv_header() const { return "label,num_queries,rank1,rank5,rank10,map\n"; }

std::string EvalReport::csv_row(const std::string& label) const {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%zu,%.3f,%.3f,%.3f,%.3f\n", per_query.size(), round3(rank1), round3(rank5),
                round3(rank10), round3(map));
  return label + "," + buf;
}

void EvalReport::save(const std::filesystem::path& json_path, const std::optional<std::filesystem::path>& csv_path,
                      const std::string& label) const {
  write_file_atomic(json_path, to_json().dump(2) + "\n");
  if (csv_path) write_file_atomic(*csv_path, csv_header() + csv_row(label));
}

EvalReport evaluate(const std::vector<Triplet>& queries, const QueryRunner& run, json config) {
  require(!queries.empty(), ErrorKind::Empty, "evaluation: query set is empty");
  EvalReport rep;
  rep.config = std::move(config);
  std::size_t h1 = 0, h5 = 0, h10 = 0;
  double ap_sum = 0.0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto& q = queries[i];
    const std::set<std::string> gt(q.target_image_ids.begin(), q.target_image_ids.end());
    const auto res = run(q);
    QueryOutcome o;
    o.query_id = "q" + std::to_string(i);
    o.image_id = q.query_image_id;
    o.caption = q.relative_caption;
    o.first_hit = first_hit_rank(res, gt);
    o.ap = average_precision(res, gt);
    for (std::size_t r = 0; r < res.ranked_ids.size() && r < 10; ++r) o.top.push_back(res.ranked_ids[r]);
    h1 += o.first_hit <= 1;
    h5 += o.first_hit <= 5;
    h10 += o.first_hit <= 10;
    ap_sum += o.ap;
    rep.per_query.push_back(std::move(o));
  }
  const double n = static_cast<double>(queries.size());
  rep.rank1 = 100.0 * static_cast<double>(h1) / n;
  rep.rank5 = 100.0 * static_cast<double>(h5) / n;
  rep.rank10 = 100.0 * static_cast<double>(h10) / n;
  rep.map = 100.0 * ap_sum / n;
  return rep;
}

EvalReport evaluate(const TripletSet& triplets, const RetrievalEngine& engine, const QuerySpec& base,
                    const RankOptions& opts, json config) {
  RankOptions full = opts;
  return evaluate(
      triplets.queries(),
      [&](const Triplet& t) {
        QuerySpec spec = base;
        spec.image_id = t.query_image_id;
        spec.caption = t.relative_caption;
        return engine.retrieve(spec, 0, full);
      },
      std::move(config));
}

}  // namespace w4p
