#include <algorithm>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "w4p/error.hpp"
#include "w4p/evaluation.hpp"
#include "w4p/util.hpp"

using namespace w4p;

namespace {

RetrievalResult ranking(std::vector<std::string> ids) {
  RetrievalResult r;
  r.ranked_ids = std::move(ids);
  for (std::size_t i = 0; i < r.ranked_ids.size(); ++i) {
    r.scores.push_back(1.0 - 0.01 * static_cast<double>(i));
    r.gallery_rows.push_back(i);
  }
  return r;
}

std::vector<std::string> names(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("g" + std::to_string(i));
  return out;
}

}  // namespace

TEST_CASE("rank-k semantics") {
  const auto r = ranking(names(20));
  CHECK(rank_k(r, {"g0"}, 1));
  CHECK(rank_k(r, {"g0"}, 10));
  CHECK_FALSE(rank_k(r, {"g5"}, 5));
  CHECK(rank_k(r, {"g5"}, 10));
  CHECK(rank_k(r, {"g3", "g8"}, 5));
  CHECK(first_hit_rank(r, {"g3", "g8"}) == 4);
  CHECK_THROWS_AS(rank_k(r, {"g0"}, 0), Error);
  try {
    rank_k(r, {"absent"}, 5);
    FAIL("expected not found");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NotFound);
  }
}

TEST_CASE("average precision") {
  const auto r = ranking(names(10));
  CHECK(average_precision(r, {"g0"}) == 1.0);
  CHECK(average_precision(r, {"g0", "g2"}) == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-15));
  CHECK(std::abs(average_precision(r, {"g0", "g2"}) - 0.833333) <= 5e-7);
  CHECK(average_precision(r, {"g9"}) == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("metrics match brute-force references on 1,000 random rankings") {
  Rng rng(2024);
  double worst = 0.0;
  std::size_t rank_mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 5 + rng.below(60);
    auto ids = names(n);
    rng.shuffle(ids);
    std::set<std::string> gt;
    const std::size_t g = 1 + rng.below(std::min<std::size_t>(n, 6));
    while (gt.size() < g) gt.insert("g" + std::to_string(rng.below(n)));
    const auto r = ranking(ids);
    worst = std::max(worst, std::abs(average_precision(r, gt) - oracle::average_precision(ids, gt)));
    for (std::size_t k : {1u, 5u, 10u}) rank_mismatches += rank_k(r, gt, k) != oracle::rank_k_hit(ids, gt, k);
  }
  CHECK(worst <= 1e-12);
  CHECK(rank_mismatches == 0);
}

TEST_CASE("evaluate") {
  std::vector<Triplet> queries = {{"q1", "red", {"g1"}}, {"q2", "blue", {"g4", "g2"}}, {"q1", "red", {"g1"}}};
  std::map<std::string, std::vector<std::string>> answers = {
      {"q1", {"g1", "g2", "g3", "g4", "g5", "g6", "g7", "g8", "g9", "g10", "g11"}},
      {"q2", {"g3", "g1", "g5", "g6", "g7", "g8", "g9", "g10", "g11", "g2", "g4"}}};
  auto report = evaluate(queries, [&](const Triplet& t) { return ranking(answers.at(t.query_image_id)); },
                         {{"mode", "composed"}});
  CHECK(report.rank1 == doctest::Approx(200.0 / 3.0));
  CHECK(report.rank5 == doctest::Approx(200.0 / 3.0));
  CHECK(report.rank10 == doctest::Approx(100.0));
  const double ap2 = (1.0 / 10.0 + 2.0 / 11.0) / 2.0;
  CHECK(report.map == doctest::Approx(100.0 * (2.0 + ap2) / 3.0).epsilon(1e-12));
  CHECK(report.per_query[0].ap == report.per_query[2].ap);
  CHECK(report.per_query[1].query_id == "q1");
  CHECK(report.per_query[1].first_hit == 10);
  CHECK(report.per_query[0].top.size() == 10);

  const auto j = report.to_json();
  for (const char* key : {"rank1", "rank5", "rank10", "map"}) CHECK(j.at("metrics").contains(key));
  CHECK(j.at("metrics").at("rank1") == 66.667);
  CHECK(j.at("num_queries") == 3);
  CHECK(j.at("config_fingerprint") == to_hex(sha256(report.config.dump())));

  const auto dir = std::filesystem::temp_directory_path() / "w4p_eval_test";
  std::filesystem::remove_all(dir);
  report.save(dir / "report.json", dir / "report.csv", "toy");
  CHECK(nlohmann::json::parse(read_file(dir / "report.json")) == j);
  CHECK(read_file(dir / "report.csv") == report.csv_header() + report.csv_row("toy"));
  CHECK(report.csv_row("toy").rfind("toy,3,66.667,66.667,100.000,", 0) == 0);
  std::filesystem::remove_all(dir);

  CHECK(round3(1.23456) == 1.235);
  CHECK_THROWS_AS(evaluate({}, [&](const Triplet&) { return ranking(names(3)); }), Error);
}
