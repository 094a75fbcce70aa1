#include "w4p/toy_data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include "w4p/error.hpp"
#include "w4p/rng.hpp"

namespace w4p {

namespace {

struct Colour {
  const char* name;
  std::array<float, 3> rgb;
};

constexpr Colour kPalette[] = {
    {"red", {0.85f, 0.10f, 0.10f}},   {"blue", {0.10f, 0.20f, 0.85f}},  {"green", {0.10f, 0.65f, 0.20f}},
    {"yellow", {0.95f, 0.85f, 0.10f}}, {"black", {0.08f, 0.08f, 0.08f}}, {"white", {0.95f, 0.95f, 0.95f}},
    {"purple", {0.55f, 0.15f, 0.65f}}, {"orange", {0.95f, 0.50f, 0.05f}},
};
constexpr int kColours = sizeof(kPalette) / sizeof(kPalette[0]);

// One (upper, lower) assignment per unordered colour pair, so no two
// identities share the same bag of caption words.
std::vector<std::pair<int, int>> colour_pairs(std::uint64_t seed) {
  Rng rng(derive_seed({seed, 0x70c0}));
  std::vector<std::pair<int, int>> pairs;
  for (int a = 0; a < kColours; ++a)
    for (int b = a + 1; b < kColours; ++b) pairs.push_back(rng.below(2) ? std::pair{a, b} : std::pair{b, a});
  rng.shuffle(pairs);
  return pairs;
}

std::string image_id(int identity, int instance) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "p%03d_%d", identity, instance);
  return buf;
}

std::string identity_id(int identity) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "id%03d", identity);
  return buf;
}

std::string toy_caption(const std::string& upper, const std::string& lower, int instance) {
  switch (instance % 4) {
    case 0: return "a person wearing a " + upper + " shirt and " + lower + " pants";
    case 1: return "the pedestrian is in a " + upper + " shirt with " + lower + " pants";
    case 2: return "someone with " + lower + " pants and a " + upper + " shirt";
    default: return "a " + upper + " shirt and " + lower + " pants";
  }
}

float quantize(double v) { return static_cast<float>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0f; }

}  // namespace

std::vector<ToyIdentity> toy_identities(const ToyConfig& cfg) {
  require(cfg.identities >= 1 && cfg.per_identity >= 2, ErrorKind::InvalidArgument,
          "toy data needs >= 1 identity and >= 2 images per identity");
  const auto pairs = colour_pairs(cfg.seed);
  require(cfg.identities <= static_cast<int>(pairs.size()), ErrorKind::InvalidArgument,
          "toy data supports at most " + std::to_string(pairs.size()) + " identities");
  std::vector<ToyIdentity> out;
  for (int i = 0; i < cfg.identities; ++i) {
    const auto [u, l] = pairs[static_cast<std::size_t>(i)];
    std::string upper = kPalette[u].name, lower = kPalette[l].name;
    out.push_back({identity_id(i), upper, lower, toy_caption(upper, lower, 0)});
  }
  return out;
}

Image toy_image(const ToyConfig& cfg, int identity, int instance) {
  const auto pairs = colour_pairs(cfg.seed);
  const auto [u, l] = pairs.at(static_cast<std::size_t>(identity));
  Rng rng(derive_seed({cfg.seed, static_cast<std::uint64_t>(identity), static_cast<std::uint64_t>(instance), 0x1a6e}));
  const int h = cfg.image_height, w = cfg.image_width;
  Image img = make_image(h, w);
  const double bg = rng.uniform(0.3, 0.7);
  const double gain = rng.uniform(0.9, 1.1);
  const int shift = static_cast<int>(rng.below(9)) - 4;
  const int left = w / 5 + static_cast<int>(rng.below(5)) - 2;
  const int right = w - w / 5 + static_cast<int>(rng.below(5)) - 2;
  const std::array<float, 3> skin = {0.85f, 0.70f, 0.60f}, shoes = {0.20f, 0.15f, 0.10f};
  for (int y = 0; y < h; ++y) {
    const double t = static_cast<double>(y - shift) / h;
    for (int x = 0; x < w; ++x) {
      const bool body = x >= left && x < right && t >= 0.02 && t < 0.97;
      for (int c = 0; c < 3; ++c) {
        double v = bg;
        if (body) {
          if (t < 0.15)
            v = skin[c];
          else if (t < 0.5)
            v = kPalette[u].rgb[c] * gain;
          else if (t < 0.85)
            v = kPalette[l].rgb[c] * gain;
          else
            v = shoes[c];
        }
        img.at(y, x, c) = quantize(v + rng.normal(0.0, cfg.noise));
      }
    }
  }
  return img;
}

ToyFixture make_toy_fixture(const ToyConfig& cfg) {
  const auto people = toy_identities(cfg);
  std::vector<ImageRecord> records, targets;
  std::vector<std::string> captions, target_captions;
  std::vector<Triplet> triplets;
  for (int i = 0; i < cfg.identities; ++i) {
    const auto& p = people[static_cast<std::size_t>(i)];
    for (int k = 0; k < cfg.per_identity; ++k) {
      ImageRecord r{image_id(i, k), p.id, "images/" + image_id(i, k) + ".png", cfg.image_width, cfg.image_height,
                    "toy"};
      records.push_back(r);
      captions.push_back(toy_caption(p.upper, p.lower, k));
      if (k == 1) {
        targets.push_back(r);
        target_captions.push_back(captions.back());
      }
    }
    triplets.push_back({image_id(i, 0), "wearing a " + p.upper + " shirt and " + p.lower + " pants", {image_id(i, 1)}});
  }
  return {Dataset::from_records(std::move(records), std::move(captions)),
          Dataset::from_records(std::move(targets), std::move(target_captions)), TripletSet(std::move(triplets))};
}

ImageSource toy_image_source(const ToyConfig& cfg) {
  return [cfg](const Dataset& dataset, std::size_t i) {
    const auto& id = dataset.image(i).image_id;
    int identity = 0, instance = 0;
    require(std::sscanf(id.c_str(), "p%d_%d", &identity, &instance) == 2, ErrorKind::InvalidArgument,
            "'" + id + "' is not a toy image id");
    return toy_image(cfg, identity, instance);
  };
}

ToyFixture write_toy_fixture(const ToyConfig& cfg, const std::filesystem::path& dir) {
  auto fx = make_toy_fixture(cfg);
  std::filesystem::create_directories(dir / "images");
  for (int i = 0; i < cfg.identities; ++i)
    for (int k = 0; k < cfg.per_identity; ++k)
      save_image(toy_image(cfg, i, k), dir / "images" / (image_id(i, k) + ".png"));
  fx.train.save(dir / "train.jsonl");
  fx.gallery.save(dir / "gallery.jsonl");
  fx.triplets.save(dir / "triplets.jsonl");
  return {Dataset::load(dir / "train.jsonl", ManifestKind::ImageCaption),
          Dataset::load(dir / "gallery.jsonl", ManifestKind::ImageCaption), TripletSet::load(dir / "triplets.jsonl")};
}

Dataset make_resolution_corpus(int n, std::uint64_t seed) {
  Rng rng(derive_seed({seed, 0xc0de5}));
  std::vector<ImageRecord> records;
  for (int i = 0; i < n; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "img%05d", i);
    const int h = 64 + static_cast<int>(rng.below(449));
    const int w = 32 + static_cast<int>(rng.below(225));
    records.push_back({buf, "u" + std::to_string(i % 97), std::string("images/") + buf + ".jpg", w, h, "synthetic"});
  }
  return Dataset::from_records(std::move(records));
}

nlohmann::json toy_run_config(const ToyConfig& cfg, bool with_corpus) {
  using nlohmann::json;
  json data = {{"train", "train.jsonl"}, {"gallery", "gallery.jsonl"}, {"triplets", "triplets.jsonl"}};
  if (with_corpus) data["corpus"] = "corpus.jsonl";
  const json stage = {{"epochs", 50}, {"batch_size", 16}, {"base_lr", 1e-3}, {"warmup_epochs", 1}, {"max_steps", 200}};
  json finetune = stage;
  finetune["head_lr"] = 1e-3;
  json tinet = stage;
  tinet["name"] = "text";
  tinet["mode"] = "Text";
  return {{"seed", cfg.seed},
          {"run_dir", "run"},
          {"data", data},
          {"encoder", {{"d_embed", 64}, {"d_token", 64}, {"d_hidden", 64}}},
          {"finetune", finetune},
          {"train_tinet", tinet},
          {"eval", {{"mode", "composed"}, {"tinets", {"text"}}}},
          {"probe_vocab", {{"tinet", "text"}, {"k", 5}}},
          {"self_retrieval", {{"tinets", {"text"}}}},
          {"curate_mine", {{"k", 3}}},
          {"filter_corpus", {{"top_fraction", 0.2}}}};
}

}  // namespace w4p
