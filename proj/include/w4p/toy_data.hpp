#pragma once

// Synthetic person identities for desk-scale runs: each identity wears an
// (upper, lower) colour pair, every image of it is a noisy rendering, and
// every caption names the two colours.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "w4p/dataset.hpp"
#include "w4p/feature_cache.hpp"
#include "w4p/image.hpp"

namespace w4p {

struct ToyConfig {
  int identities = 16;
  int per_identity = 4;
  int image_height = 192;
  int image_width = 64;
  double noise = 0.04;
  std::uint64_t seed = 0;
};

struct ToyIdentity {
  std::string id;
  std::string upper;
  std::string lower;
  std::string caption;
};

std::vector<ToyIdentity> toy_identities(const ToyConfig& cfg);

// Rendered and quantized to 8 bits, so PNG round trips are exact.
Image toy_image(const ToyConfig& cfg, int identity, int instance);

struct ToyFixture {
  Dataset train;       // identities x per_identity image-caption records
  Dataset gallery;     // the triplet targets (instance 1 of each identity)
  TripletSet triplets; // instance 0 -> instance 1 of the same identity
};

ToyFixture make_toy_fixture(const ToyConfig& cfg);

// Renders images on demand from the record's identity and instance.
ImageSource toy_image_source(const ToyConfig& cfg);

// Images under dir/images plus train.jsonl, gallery.jsonl, triplets.jsonl.
ToyFixture write_toy_fixture(const ToyConfig& cfg, const std::filesystem::path& dir);

// Run config for a fixture written by write_toy_fixture: both stages reach
// their overfit targets in about 200 steps each. Paths are relative to the
// fixture directory.
nlohmann::json toy_run_config(const ToyConfig& cfg, bool with_corpus);

// Image-only manifest of n records with random sizes (no pixel data).
Dataset make_resolution_corpus(int n, std::uint64_t seed);

}  // namespace w4p
