#include <filesystem>
#include <thread>

#include "doctest.h"
#include "json.hpp"
#include "w4p/service.hpp"
#include "w4p/toy_data.hpp"
#include "w4p/util.hpp"

// After Eigen: <resolv.h> defines a _res macro.
#include "httplib.h"

using namespace w4p;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  ToyConfig toy;
  ToyFixture fx;
  ImageSource images;
  DualEncoder encoder;
  FeatureCache train_cache;
  std::unique_ptr<RetrievalEngine> engine;

  Fixture()
      : toy(small_toy()), fx(make_toy_fixture(toy)), images(toy_image_source(toy)), encoder(make_encoder(fx)),
        train_cache(build_feature_cache(encoder, fx.train, images)) {
    engine = std::make_unique<RetrievalEngine>(encoder, build_feature_cache(encoder, fx.gallery, images));
    engine->add_references(train_cache.images);
    TinetConfig t;
    t.depth = 2;
    t.hidden_width = 16;
    t.d_in = encoder.embed_dim();
    t.d_out = encoder.token_dim();
    Tinet a(t);
    a.set_encoder_fingerprint(encoder.fingerprint());
    engine->add_tinet("text", std::move(a));
  }

  static ToyConfig small_toy() {
    ToyConfig t;
    t.identities = 6;
    t.image_height = 48;
    t.image_width = 16;
    return t;
  }
  static DualEncoder make_encoder(const ToyFixture& fx) {
    std::vector<std::string> texts;
    for (std::size_t i = 0; i < fx.train.size(); ++i) texts.push_back(fx.train.caption(i).text);
    EncoderConfig c;
    c.d_embed = 16;
    c.d_token = 12;
    c.d_hidden = 12;
    c.image_height = 48;
    c.image_width = 16;
    c.patch = 8;
    c.max_len = 24;
    DualEncoder e(c, Tokenizer(Vocabulary::build(texts), 24));
    e.set_frozen(true);
    return e;
  }
};

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("w4p_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

const std::string kComposed = R"({"image_id":"p002_0","caption":"red shirt","mode":"composed","tinet_ids":["text"],"k":5})";

}  // namespace

TEST_CASE("retrieve endpoint") {
  Fixture f;
  Service svc(*f.engine, {f.fx.train, f.fx.gallery}, f.images);

  SUBCASE("composed query returns k non-increasing results, byte-identical on repeat") {
    auto r = svc.handle("POST", "/api/v1/retrieve", kComposed);
    REQUIRE(r.status == 200);
    const auto j = json::parse(r.body);
    REQUIRE(j.at("results").size() == 5);
    for (std::size_t i = 1; i < 5; ++i)
      CHECK(j["results"][i - 1]["score"].get<double>() >= j["results"][i]["score"].get<double>());
    CHECK(j["results"][0]["thumbnail_url"] == "/api/v1/images/" + j["results"][0]["image_id"].get<std::string>());
    CHECK(svc.handle("POST", "/api/v1/retrieve", kComposed).body == r.body);

    const auto direct = f.engine->retrieve({QueryMode::Composed, std::string("p002_0"), std::string("red shirt"), {"text"}}, 5);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(j["results"][i]["image_id"] == direct.ranked_ids[i]);
      CHECK(j["results"][i]["score"].get<double>() == direct.scores[i]);
    }
  }
  SUBCASE("baselines and uploaded images") {
    for (const char* mode : {"image-only", "text-only", "avg"}) {
      json req = {{"image_id", "p001_0"}, {"caption", "blue pants"}, {"mode", mode}, {"k", 3}};
      auto r = svc.handle("POST", "/api/v1/retrieve", req.dump());
      CHECK(r.status == 200);
      CHECK(json::parse(r.body).at("results").size() == 3);
    }
    const auto png = encode_png(toy_image(f.toy, 1, 0));
    json up = {{"image_b64", httplib::detail::base64_encode(std::string(png.begin(), png.end()))},
               {"mode", "image-only"},
               {"k", 3}};
    json by_id = {{"image_id", "p001_0"}, {"mode", "image-only"}, {"k", 3}};
    // Cached features are stored as float32, the upload is encoded at full precision.
    const auto a = json::parse(svc.handle("POST", "/api/v1/retrieve", up.dump()).body).at("results");
    const auto b = json::parse(svc.handle("POST", "/api/v1/retrieve", by_id.dump()).body).at("results");
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i]["image_id"] == b[i]["image_id"]);
      CHECK(std::abs(a[i]["score"].get<double>() - b[i]["score"].get<double>()) <= 1e-6);
    }
  }
  SUBCASE("errors map to status codes") {
    auto missing = svc.handle("POST", "/api/v1/retrieve", R"({"image_id":"nope","mode":"image-only"})");
    CHECK(missing.status == 404);
    CHECK(json::parse(missing.body).at("error").at("kind") == "not_found");
    CHECK(svc.handle("POST", "/api/v1/retrieve", R"({"image_id":"p001_0","mode":"fused"})").status == 400);
    CHECK(svc.handle("POST", "/api/v1/retrieve", R"({"image_id":"p001_0","mode":"image-only","colour":1})").status ==
          400);
    CHECK(svc.handle("POST", "/api/v1/retrieve", "{not json").status == 400);
    CHECK(svc.handle("POST", "/api/v1/retrieve", R"({"image_id":"p001_0","mode":"image-only","k":0})").status == 400);
    CHECK(svc.handle("POST", "/api/v1/retrieve", R"({"image_b64":"AAAA","mode":"image-only"})").status == 400);
    CHECK(svc.handle("GET", "/api/v1/nothing").status == 404);
  }
}

TEST_CASE("read-only endpoints") {
  Fixture f;
  Service svc(*f.engine, {f.fx.train, f.fx.gallery}, f.images);
  CHECK(json::parse(svc.handle("GET", "/api/v1/health").body) == json{{"status", "ok"}});
  const auto t = json::parse(svc.handle("GET", "/api/v1/tinets").body);
  REQUIRE(t.at("tinets").size() == 1);
  CHECK(t["tinets"][0]["id"] == "text");
  CHECK(t["tinets"][0]["config"]["depth"] == 2);

  auto img = svc.handle("GET", "/api/v1/images/p003_1");
  CHECK(img.status == 200);
  CHECK(img.content_type == "image/png");
  const auto decoded = decode_image(std::span(reinterpret_cast<const std::uint8_t*>(img.body.data()), img.body.size()));
  CHECK(decoded.height == 128);
  CHECK(svc.handle("GET", "/api/v1/images/p999_0").status == 404);
  CHECK(svc.handle("GET", "/api/v1/curation/next").status == 404);
}

TEST_CASE("curation loop") {
  Fixture f;
  TempDir dir("service_curation");
  f.fx.triplets.save(dir.path / "triplets.jsonl");
  auto cands = false_negative_candidates(f.encoder.fingerprint(), {"p000_1", "p001_1", "p002_1"}, {},
                                         build_feature_cache(f.encoder, f.fx.gallery, f.images), 1);
  REQUIRE(cands.size() == 3);
  const CurationSession session{cands, dir.path / "verdicts.jsonl", dir.path / "triplets.jsonl"};
  Service svc(*f.engine, {f.fx.gallery}, f.images, session);

  std::vector<std::string> served;
  for (int i = 0; i < 3; ++i) {
    auto next = svc.handle("GET", "/api/v1/curation/next");
    REQUIRE(next.status == 200);
    const auto j = json::parse(next.body);
    CHECK(j.at("remaining") == 3 - i);
    served.push_back(j.at("pair_id"));
    json v = {{"pair_id", j["pair_id"]}, {"decision", i == 0 ? "accept" : "reject"}, {"annotator", "t"}};
    CHECK(svc.handle("POST", "/api/v1/curation/verdict", v.dump()).status == 200);
  }
  CHECK(svc.handle("GET", "/api/v1/curation/next").status == 204);
  CHECK(std::set<std::string>(served.begin(), served.end()).size() == 3);

  json replay = {{"pair_id", served[1]}, {"decision", "accept"}};
  CHECK(svc.handle("POST", "/api/v1/curation/verdict", replay.dump()).status == 409);
  CHECK(svc.handle("POST", "/api/v1/curation/verdict", R"({"pair_id":"0000000000000000","decision":"accept"})")
            .status == 404);
  CHECK(svc.handle("POST", "/api/v1/curation/verdict", R"({"pair_id":"x","decision":"maybe"})").status == 400);

  const auto log = VerdictLog(dir.path / "verdicts.jsonl").read();
  REQUIRE(log.size() == 3);
  CHECK(log[0].pair_id == served[0]);
  CHECK(log[0].decision == Decision::Accept);

  const auto accepted = std::find_if(cands.begin(), cands.end(), [&](const Candidate& c) { return c.pair_id == served[0]; });
  REQUIRE(accepted != cands.end());
  std::size_t targets_with_new = 0;
  const auto rewritten = TripletSet::load(dir.path / "triplets.jsonl");
  for (const auto& t : rewritten.triplets())
    if (std::find(t.target_image_ids.begin(), t.target_image_ids.end(), accepted->target_id) != t.target_image_ids.end()) {
      CHECK(std::count(t.target_image_ids.begin(), t.target_image_ids.end(), accepted->candidate_id) ==
            (t.query_image_id == accepted->candidate_id ? 0 : 1));
      ++targets_with_new;
    }
  CHECK(targets_with_new >= 1);

  Service reopened(*f.engine, {f.fx.gallery}, f.images, session);
  CHECK(reopened.handle("GET", "/api/v1/curation/next").status == 204);
}

TEST_CASE("bind specs") {
  CHECK(parse_bind("") == std::pair<std::string, int>{"127.0.0.1", 8080});
  CHECK(parse_bind(":9000") == std::pair<std::string, int>{"127.0.0.1", 9000});
  CHECK(parse_bind("0.0.0.0:81") == std::pair<std::string, int>{"0.0.0.0", 81});
  CHECK(parse_bind("localhost") == std::pair<std::string, int>{"localhost", 8080});
  CHECK_THROWS_AS(parse_bind(":http"), Error);
  CHECK_THROWS_AS(parse_bind(":70000"), Error);
}

TEST_CASE("http server over a socket") {
  Fixture f;
  Service svc(*f.engine, {f.fx.gallery}, f.images);
  HttpServer server(svc);
  const int port = server.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread loop([&] { server.listen(); });

  httplib::Client client("127.0.0.1", port);
  httplib::Result health;
  for (int attempt = 0; attempt < 50 && !(health = client.Get("/api/v1/health")); ++attempt)
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  REQUIRE(health);
  CHECK(health->status == 200);
  auto r = client.Post("/api/v1/retrieve", kComposed, "application/json");
  REQUIRE(r);
  CHECK(r->status == 200);
  CHECK(r->body == svc.handle("POST", "/api/v1/retrieve", kComposed).body);
  auto missing = client.Post("/api/v1/retrieve", R"({"image_id":"nope","mode":"image-only"})", "application/json");
  REQUIRE(missing);
  CHECK(missing->status == 404);

  server.stop();
  loop.join();
}
