// Writes the synthetic toy fixture plus a config that trains on it in
// seconds.

#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "w4p/error.hpp"
#include "w4p/toy_data.hpp"
#include "w4p/util.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate the toy fixture"};
  std::string out = "toy";
  w4p::ToyConfig cfg;
  int corpus = 0;
  app.add_option("--out,-o", out, "output directory");
  app.add_option("--seed", cfg.seed);
  app.add_option("--identities", cfg.identities)->check(CLI::Range(2, 28));
  app.add_option("--per-identity", cfg.per_identity)->check(CLI::Range(2, 64));
  app.add_option("--corpus", corpus, "also write an image-only manifest of this many records")->check(CLI::NonNegativeNumber);
  CLI11_PARSE(app, argc, argv);

  namespace fs = std::filesystem;
  using nlohmann::json;
  try {
    const fs::path dir(out);
    const auto fx = w4p::write_toy_fixture(cfg, dir);
    if (corpus > 0) w4p::make_resolution_corpus(corpus, cfg.seed).save(dir / "corpus.jsonl");
    const json config = w4p::toy_run_config(cfg, corpus > 0);
    w4p::write_file_atomic(dir / "toy.json", config.dump(2) + "\n");
    std::cout << json{{"dir", dir.string()},
                      {"train", fx.train.size()},
                      {"gallery", fx.gallery.size()},
                      {"triplets", fx.triplets.size()},
                      {"config", (dir / "toy.json").string()}}
                     .dump()
              << std::endl;
  } catch (const w4p::Error& e) {
    std::cerr << json{{"error", {{"kind", w4p::to_string(e.kind())}, {"message", e.what()}}}}.dump() << std::endl;
    return 3;
  }
  return 0;
}
