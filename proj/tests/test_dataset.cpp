#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "json.hpp"
#include "w4p/dataset.hpp"
#include "w4p/error.hpp"
#include "w4p/rng.hpp"
#include "w4p/toy_data.hpp"

using namespace w4p;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("w4p_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_lines(const fs::path& p, const std::vector<json>& lines) {
  std::ofstream out(p);
  for (const auto& l : lines) out << l.dump() << "\n";
}

json image_line(const std::string& id, const std::string& identity, int w = 64, int h = 128) {
  return {{"image_id", id}, {"identity_id", identity}, {"path", "img/" + id + ".png"},
          {"width", w},     {"height", h},             {"source", "test"}};
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Io;
}

Dataset identities(int n, int per) {
  std::vector<ImageRecord> recs;
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < per; ++k)
      recs.push_back({"p" + std::to_string(i) + "_" + std::to_string(k), "id" + std::to_string(i), "x.png", 8, 8, "t"});
  return Dataset::from_records(recs);
}

}  // namespace

TEST_CASE("manifests load and validate") {
  TempDir dir("dataset");
  SUBCASE("three image-caption lines") {
    std::vector<json> lines;
    for (int i = 0; i < 3; ++i) {
      auto l = image_line("im" + std::to_string(i), "p" + std::to_string(i % 2));
      l["caption"] = "a person " + std::to_string(i);
      lines.push_back(l);
    }
    write_lines(dir.path / "m.jsonl", lines);
    auto ds = Dataset::load(dir.path / "m.jsonl", ManifestKind::ImageCaption);
    CHECK(ds.size() == 3);
    CHECK(ds.caption(2).text == "a person 2");
    CHECK(ds.index_of("im1") == 1);
    CHECK(ds.resolve_path(0) == dir.path / "img/im0.png");
    CHECK(ds.identity_ids() == std::vector<std::string>{"p0", "p1", "p0"});
    auto image_only = Dataset::load(dir.path / "m.jsonl", ManifestKind::ImageOnly);
    CHECK_FALSE(image_only.has_captions());
    ds.save(dir.path / "copy.jsonl");
    CHECK(Dataset::load(dir.path / "copy.jsonl", ManifestKind::ImageCaption) == ds);
  }
  SUBCASE("parse errors name the line") {
    write_lines(dir.path / "bad.jsonl", {image_line("a", "p"), json{{"image_id", "b"}}});
    try {
      Dataset::load(dir.path / "bad.jsonl", ManifestKind::ImageOnly);
      FAIL("expected parse error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Parse);
      CHECK(std::string(e.what()).find(":2") != std::string::npos);
    }
    write_lines(dir.path / "dup.jsonl", {image_line("a", "p"), image_line("a", "q")});
    CHECK(kind_of([&] { Dataset::load(dir.path / "dup.jsonl", ManifestKind::ImageOnly); }) == ErrorKind::Parse);
    write_lines(dir.path / "nocap.jsonl", {image_line("a", "p")});
    CHECK(kind_of([&] { Dataset::load(dir.path / "nocap.jsonl", ManifestKind::ImageCaption); }) == ErrorKind::Parse);
    CHECK(kind_of([&] { Dataset::load(dir.path / "missing.jsonl", ManifestKind::ImageOnly); }) == ErrorKind::Io);
  }
  SUBCASE("dangling triplet target") {
    write_lines(dir.path / "g.jsonl", {image_line("g1", "p1"), image_line("g2", "p2")});
    write_lines(dir.path / "q.jsonl", {image_line("q1", "p1")});
    write_lines(dir.path / "t.jsonl", {json{{"query_image_id", "q1"}, {"relative_caption", "red"},
                                            {"target_image_ids", {"g1", "g9"}}}});
    auto t = TripletSet::load(dir.path / "t.jsonl");
    auto q = Dataset::load(dir.path / "q.jsonl", ManifestKind::ImageOnly);
    auto g = Dataset::load(dir.path / "g.jsonl", ManifestKind::ImageOnly);
    try {
      t.validate(q, g);
      FAIL("expected dangling reference");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::NotFound);
      CHECK(std::string(e.what()).find("g9") != std::string::npos);
    }
  }
  SUBCASE("query listing itself as target") {
    write_lines(dir.path / "self.jsonl",
                {json{{"query_image_id", "q"}, {"relative_caption", "x"}, {"target_image_ids", {"q"}}}});
    CHECK(kind_of([&] { TripletSet::load(dir.path / "self.jsonl"); }) == ErrorKind::Parse);
  }
}

TEST_CASE("full-scale test-set layout: 2,225 triplets over 2,202 queries and 20,510 gallery images") {
  TempDir dir("full_layout");
  Rng rng(12);
  std::vector<json> gallery, queries, triplets;
  for (int i = 0; i < 20510; ++i)
    gallery.push_back(image_line("g" + std::to_string(i), "p" + std::to_string(i % 1199)));
  for (int i = 0; i < 2202; ++i) queries.push_back(image_line("q" + std::to_string(i), "p" + std::to_string(i % 1199)));
  for (int i = 0; i < 2225; ++i) {
    const int q = i < 2202 ? i : static_cast<int>(rng.below(2202));
    triplets.push_back({{"query_image_id", "q" + std::to_string(q)},
                        {"relative_caption", "wearing outfit " + std::to_string(q)},
                        {"target_image_ids", {"g" + std::to_string(i)}}});
  }
  write_lines(dir.path / "gallery.jsonl", gallery);
  write_lines(dir.path / "queries.jsonl", queries);
  write_lines(dir.path / "triplets.jsonl", triplets);
  const auto g = Dataset::load(dir.path / "gallery.jsonl", ManifestKind::ImageOnly);
  const auto q = Dataset::load(dir.path / "queries.jsonl", ManifestKind::ImageOnly);
  const auto t = TripletSet::load(dir.path / "triplets.jsonl");
  CHECK_NOTHROW(t.validate(q, g));
  CHECK(g.size() == 20510);
  CHECK(t.size() == 2225);
  const auto merged = t.queries();
  CHECK(merged.size() == 2202);
  std::size_t targets = 0;
  for (const auto& m : merged) targets += m.target_image_ids.size();
  CHECK(targets == 2225);
}

TEST_CASE("queries merge targets of the same image and caption") {
  TripletSet t({{"a", "red", {"x"}}, {"b", "red", {"y"}}, {"a", "red", {"z", "x"}}, {"a", "blue", {"w"}}});
  auto q = t.queries();
  REQUIRE(q.size() == 3);
  CHECK(q[0].target_image_ids == std::vector<std::string>{"x", "z"});
  CHECK(q[1].query_image_id == "b");
  CHECK(q[2].relative_caption == "blue");
}

TEST_CASE("match labels") {
  auto m = build_match_labels(std::vector<std::string>{"a", "a", "b"}, std::vector<std::string>{"a", "a", "b"});
  Eigen::MatrixXd want(3, 3);
  want << 1, 1, 0, 1, 1, 0, 0, 0, 1;
  CHECK(m.labels == want);
  CHECK(m.true_match(0, 0) == 0.5);
  CHECK(m.true_match(0, 1) == 0.5);
  CHECK(m.true_match(0, 2) == 0.0);
  CHECK(m.true_match(2, 2) == 1.0);
  CHECK_THROWS_AS(build_match_labels(std::vector<std::string>{"a"}, std::vector<std::string>{"b"}), Error);
  CHECK_THROWS_AS(build_match_labels(std::vector<std::string>{}, std::vector<std::string>{}), Error);
}

TEST_CASE("batch sampler") {
  const auto ds = identities(16, 4);
  SUBCASE("seeded batches are reproducible") {
    auto a = sample_batch(ds, 8, 7, 3, 1);
    auto b = sample_batch(ds, 8, 7, 3, 1);
    CHECK(a.indices == b.indices);
    CHECK(sample_batch(ds, 8, 8, 3, 1).indices != a.indices);
  }
  SUBCASE("batch of 128 exceeds the identity-aware capacity of 16 x 2") {
    CHECK_THROWS_AS(BatchSampler(ds, 128, 0), Error);
    CHECK_THROWS_AS(BatchSampler(ds, 128, 0, {false, 2}), Error);
  }
  SUBCASE("batch of 8 over 16 identities") {
    for (std::size_t step = 0; step < 3; ++step) {
      auto b = sample_batch(ds, 8, 0, 0, step);
      CHECK(b.size() == 8);
      std::set<std::string> distinct(b.identity_ids.begin(), b.identity_ids.end());
      CHECK(distinct.size() >= 4);
    }
  }
  SUBCASE("every batch respects the per-identity cap, no record repeats within an epoch") {
    BatchSampler s(ds, 16, 3, {true, 2});
    for (std::size_t epoch = 0; epoch < 5; ++epoch) {
      std::set<std::size_t> seen;
      for (const auto& batch : s.epoch_plan(epoch)) {
        CHECK(batch.size() == 16);
        std::map<std::string, int> counts;
        for (auto i : batch) {
          CHECK(seen.insert(i).second);
          CHECK(++counts[ds.image(i).identity_id] <= 2);
        }
      }
    }
  }
  SUBCASE("plain shuffling covers the epoch") {
    BatchSampler s(ds, 16, 3, {false, 2});
    auto plan = s.epoch_plan(0);
    CHECK(plan.size() == 4);
    std::set<std::size_t> all;
    for (const auto& b : plan) all.insert(b.begin(), b.end());
    CHECK(all.size() == 64);
  }
  SUBCASE("step beyond the epoch") { CHECK_THROWS_AS(BatchSampler(ds, 16, 0).batch(0, 99), Error); }
}

TEST_CASE("toy fixture") {
  ToyConfig cfg;
  auto fx = make_toy_fixture(cfg);
  CHECK(fx.train.size() == 64);
  CHECK(fx.gallery.size() == 16);
  CHECK(fx.triplets.size() == 16);
  CHECK_NOTHROW(fx.triplets.validate(fx.train, fx.gallery));
  auto ids = toy_identities(cfg);
  std::set<std::pair<std::string, std::string>> pairs;
  for (const auto& id : ids) {
    CHECK(id.upper != id.lower);
    CHECK(pairs.insert(std::minmax(id.upper, id.lower)).second);
  }
  auto src = toy_image_source(cfg);
  auto a = src(fx.train, 0), b = src(fx.train, 0);
  CHECK(a.pixels == b.pixels);
  CHECK(a.height == cfg.image_height);
  for (float p : a.pixels) CHECK(std::abs(p * 255.0f - std::round(p * 255.0f)) <= 1e-4f);

  auto corpus = make_resolution_corpus(1000, 0);
  CHECK(corpus.size() == 1000);
  CHECK(make_resolution_corpus(1000, 0) == corpus);
}
