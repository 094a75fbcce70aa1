#include "w4p/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "w4p/analysis.hpp"
#include "w4p/curation.hpp"
#include "w4p/dataset.hpp"
#include "w4p/encoder.hpp"
#include "w4p/error.hpp"
#include "w4p/evaluation.hpp"
#include "w4p/feature_cache.hpp"
#include "w4p/retrieval.hpp"
#include "w4p/service.hpp"
#include "w4p/tinet.hpp"
#include "w4p/training.hpp"
#include "w4p/util.hpp"

namespace w4p::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> fields)
      : Error(ErrorKind::Config, summary(fields)), fields_(std::move(fields)) {}
  const std::vector<std::string>& fields() const { return fields_; }

 private:
  static std::string summary(const std::vector<std::string>& f) {
    std::string s = "invalid config: ";
    for (std::size_t i = 0; i < f.size(); ++i) s += (i ? "; " : "") + f[i];
    return s;
  }
  std::vector<std::string> fields_;
};

const std::map<std::string, std::set<std::string>>& schema() {
  static const std::set<std::string> train_keys = {"epochs",   "batch_size",     "base_lr",          "head_lr",
                                                   "warmup_epochs", "tau",       "epsilon",          "seed",
                                                   "max_steps", "identity_aware", "max_per_identity", "irr_norm",
                                                   "mask_rate", "contrastive"};
  auto with_train = [&](std::set<std::string> extra) {
    extra.insert(train_keys.begin(), train_keys.end());
    return extra;
  };
  static const std::map<std::string, std::set<std::string>> s = {
      {"", {"seed", "run_dir", "data", "encoder", "finetune", "cache", "train_tinet", "eval", "probe_vocab",
            "self_retrieval", "curate_mine", "curate_apply", "filter_corpus", "serve"}},
      {"data", {"train", "gallery", "queries", "triplets", "corpus"}},
      {"encoder", {"backend", "d_embed", "d_token", "d_hidden", "image_height", "image_width", "patch", "max_len",
                   "seed", "vocab_capacity", "checkpoint"}},
      {"finetune", with_train({"checkpoint_every"})},
      {"cache", {"threads"}},
      {"train_tinet", with_train({"name", "mode", "depth", "hidden", "activation", "checkpoint_every"})},
      {"eval", {"mode", "tinets", "label", "exclude_query"}},
      {"probe_vocab", {"tinet", "k", "limit"}},
      {"self_retrieval", {"tinets", "label"}},
      {"curate_mine", {"k"}},
      {"curate_apply", {"verdicts", "candidates", "output", "audit"}},
      {"filter_corpus", {"top_fraction", "manifest", "kind", "output"}},
      {"serve", {"bind", "tinets"}},
  };
  return s;
}

// Unknown keys anywhere in the file are reported together.
void check_schema(const json& cfg) {
  std::vector<std::string> problems;
  if (!cfg.is_object()) throw ConfigError({"config root must be a JSON object"});
  const auto& s = schema();
  for (const auto& [key, value] : cfg.items()) {
    if (!s.at("").count(key)) {
      problems.push_back(key + ": unknown key");
      continue;
    }
    auto sec = s.find(key);
    if (sec == s.end()) continue;
    if (!value.is_object()) {
      problems.push_back(key + ": must be an object");
      continue;
    }
    for (const auto& [k, v] : value.items())
      if (!sec->second.count(k)) problems.push_back(key + "." + k + ": unknown key");
  }
  if (!problems.empty()) throw ConfigError(problems);
}

struct Context {
  json cfg;
  fs::path base;
  fs::path run_dir;

  const json& section(const std::string& name) const {
    static const json empty = json::object();
    auto it = cfg.find(name);
    return it == cfg.end() ? empty : *it;
  }
  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : base / path;
  }
  std::optional<fs::path> data_path(const std::string& key) const {
    const auto& d = section("data");
    if (!d.contains(key) || d.at(key).is_null()) return std::nullopt;
    return resolve(d.at(key).get<std::string>());
  }
  fs::path require_data(const std::string& key) const {
    auto p = data_path(key);
    if (!p) throw ConfigError({"data." + key + ": required by this command"});
    return *p;
  }
};

// Typed read with problems collected instead of thrown one at a time.
class Reader {
 public:
  Reader(const json& sec, std::string name) : sec_(sec), name_(std::move(name)) {}

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!sec_.contains(key) || sec_.at(key).is_null()) return fallback;
    try {
      return sec_.at(key).get<T>();
    } catch (const json::exception&) {
      problems.push_back(name_ + "." + key + ": wrong type");
      return fallback;
    }
  }
  void check(bool ok, const std::string& key, const std::string& msg) {
    if (!ok) problems.push_back(name_ + "." + key + ": " + msg);
  }
  void finish() const {
    if (!problems.empty()) throw ConfigError(problems);
  }

  std::vector<std::string> problems;

 private:
  const json& sec_;
  std::string name_;
};

std::uint64_t top_seed(const Context& ctx) { return ctx.cfg.value("seed", std::uint64_t{0}); }

TrainConfig train_config(const Context& ctx, const std::string& name, const std::set<std::string>& local_keys,
                         TrainConfig defaults) {
  json sub = json::object();
  for (const auto& [k, v] : ctx.section(name).items())
    if (!local_keys.count(k)) sub[k] = v;
  if (!sub.contains("seed")) sub["seed"] = top_seed(ctx);
  json merged = defaults.to_json();
  merged.erase("max_steps");
  for (const auto& [k, v] : sub.items()) merged[k] = v;
  TrainConfig c;
  try {
    c = TrainConfig::from_json(merged);
  } catch (const Error& e) {
    throw ConfigError({name + ": " + e.what()});
  }
  std::vector<std::string> problems;
  for (const auto& p : c.problems()) problems.push_back(name + "." + p);
  if (!problems.empty()) throw ConfigError(problems);
  return c;
}

EncoderConfig encoder_config(const Context& ctx, int* vocab_capacity) {
  Reader r(ctx.section("encoder"), "encoder");
  EncoderConfig c;
  c.backend = r.get<std::string>("backend", c.backend);
  c.d_embed = r.get<int>("d_embed", c.d_embed);
  c.d_token = r.get<int>("d_token", c.d_token);
  c.d_hidden = r.get<int>("d_hidden", c.d_hidden);
  c.image_height = r.get<int>("image_height", c.image_height);
  c.image_width = r.get<int>("image_width", c.image_width);
  c.patch = r.get<int>("patch", c.patch);
  c.max_len = r.get<int>("max_len", c.max_len);
  c.seed = r.get<std::uint64_t>("seed", top_seed(ctx));
  *vocab_capacity = r.get<int>("vocab_capacity", 1000);
  r.check(*vocab_capacity > token::kNumSpecial + 4, "vocab_capacity", "too small");
  r.finish();
  try {
    c.validate();
  } catch (const Error& e) {
    throw ConfigError({std::string("encoder: ") + e.what()});
  }
  return c;
}

Dataset load_train(const Context& ctx) { return Dataset::load(ctx.require_data("train"), ManifestKind::ImageCaption); }

DualEncoder initial_encoder(const Context& ctx) {
  int capacity = 0;
  const auto cfg = encoder_config(ctx, &capacity);
  const auto train = load_train(ctx);
  std::vector<std::string> texts;
  for (std::size_t i = 0; i < train.size(); ++i) texts.push_back(train.caption(i).text);
  return DualEncoder(cfg, Tokenizer(Vocabulary::build(texts, static_cast<std::size_t>(capacity)), cfg.max_len));
}

// encoder.checkpoint: a path, or "init" for the untrained encoder. Without
// it, the run's fine-tuned encoder.
DualEncoder resolve_encoder(const Context& ctx, std::string* source) {
  const auto& e = ctx.section("encoder");
  if (e.contains("checkpoint") && e.at("checkpoint").is_string()) {
    const auto ck = e.at("checkpoint").get<std::string>();
    if (ck == "init") {
      *source = "init";
      return initial_encoder(ctx);
    }
    *source = ck;
    return DualEncoder::load(ctx.resolve(ck));
  }
  const auto p = ctx.run_dir / "finetune" / "encoder.w4p";
  require(fs::exists(p), ErrorKind::NotFound,
          "no fine-tuned encoder at " + p.string() + " (run finetune, or set encoder.checkpoint)");
  *source = "finetune/encoder.w4p";
  return DualEncoder::load(p);
}

FeatureCache load_cache(const Context& ctx, const std::string& name, const DualEncoder& enc) {
  const auto dir = ctx.run_dir / "cache" / name;
  require(fs::exists(dir / "image_features.bin"), ErrorKind::NotFound,
          "no '" + name + "' feature cache under " + (ctx.run_dir / "cache").string() + " (run cache first)");
  return FeatureCache::load(dir, enc.fingerprint());
}

// Reference images: the query manifest's cache when present, else train.
FeatureCache load_references(const Context& ctx, const DualEncoder& enc) {
  if (ctx.data_path("queries") && fs::exists(ctx.run_dir / "cache" / "queries" / "image_features.bin"))
    return load_cache(ctx, "queries", enc);
  return load_cache(ctx, "train", enc);
}

bool looks_like_path(const std::string& s) {
  return s.find('/') != std::string::npos || s.ends_with(".w4pt");
}

fs::path tinet_path(const Context& ctx, const std::string& ref) {
  return looks_like_path(ref) ? ctx.resolve(ref) : ctx.run_dir / "tinets" / ref / "tinet.w4pt";
}

std::string tinet_label(const std::string& ref) { return looks_like_path(ref) ? fs::path(ref).stem().string() : ref; }

void write_snapshot(const fs::path& dir, const Context& ctx, const std::string& command) {
  fs::create_directories(dir);
  json snap = {{"command", command}, {"config", ctx.cfg}};
  write_file_atomic(dir / "config.json", snap.dump(2) + "\n");
}

std::vector<std::string> string_list(const json& sec, const std::string& name, const std::string& key) {
  if (!sec.contains(key)) return {};
  try {
    return sec.at(key).get<std::vector<std::string>>();
  } catch (const json::exception&) {
    throw ConfigError({name + "." + key + ": must be a list of strings"});
  }
}

// ---- subcommands ----

json cmd_finetune(const Context& ctx) {
  static const std::set<std::string> local = {"checkpoint_every"};
  TrainConfig defaults;
  const auto cfg = train_config(ctx, "finetune", local, defaults);
  Reader r(ctx.section("finetune"), "finetune");
  const int every = r.get<int>("checkpoint_every", 1);
  r.check(every >= 1, "checkpoint_every", "must be >= 1");
  r.finish();

  DualEncoder enc = [&] {
    const auto& e = ctx.section("encoder");
    if (e.contains("checkpoint") && e.at("checkpoint").is_string() && e.at("checkpoint") != "init")
      return DualEncoder::load(ctx.resolve(e.at("checkpoint").get<std::string>()));
    return initial_encoder(ctx);
  }();
  enc.set_frozen(false);
  const auto train = load_train(ctx);
  const auto out = ctx.run_dir / "finetune";
  write_snapshot(out, ctx, "finetune");
  auto res = run_stage1(std::move(enc), train, cfg, load_dataset_image, {out / "checkpoints", every});
  res.encoder.save(out / "encoder.w4p");
  write_loss_trace(out / "loss_trace.csv", res.state.loss_trace);
  std::string parts = "step,irr,contrastive,id\n";
  for (std::size_t i = 0; i < res.parts.size(); ++i)
    parts += std::to_string(i) + "," + format_double(res.parts[i].irr) + "," + format_double(res.parts[i].contrastive) +
             "," + format_double(res.parts[i].id) + "\n";
  write_file_atomic(out / "loss_parts.csv", parts);
  const auto& tr = res.state.loss_trace;
  return {{"steps", res.state.step},
          {"first_loss", tr.empty() ? 0.0 : tr.front().loss},
          {"last_loss", tr.empty() ? 0.0 : tr.back().loss},
          {"encoder", (out / "encoder.w4p").string()},
          {"fingerprint", to_hex(res.encoder.fingerprint())}};
}

json cmd_cache(const Context& ctx) {
  Reader r(ctx.section("cache"), "cache");
  const int threads = r.get<int>("threads", 1);
  r.check(threads >= 1, "threads", "must be >= 1");
  r.finish();
  std::string source;
  DualEncoder enc = resolve_encoder(ctx, &source);
  enc.set_frozen(true);
  const auto out = ctx.run_dir / "cache";
  write_snapshot(out, ctx, "cache");
  json counts = json::object();
  auto build = [&](const std::string& name, const Dataset& ds) {
    auto cache = build_feature_cache(enc, ds, load_dataset_image, threads);
    cache.save(out / name);
    counts[name] = {{"images", cache.images.size()}, {"texts", cache.texts ? cache.texts->size() : 0}};
  };
  build("train", load_train(ctx));
  build("gallery", Dataset::load(ctx.require_data("gallery"), ManifestKind::ImageOnly));
  if (auto q = ctx.data_path("queries")) build("queries", Dataset::load(*q, ManifestKind::ImageOnly));
  return {{"encoder", source}, {"fingerprint", to_hex(enc.fingerprint())}, {"tables", counts}};
}

json cmd_train_tinet(const Context& ctx) {
  static const std::set<std::string> local = {"name", "mode", "depth", "hidden", "activation", "checkpoint_every"};
  TrainConfig defaults;
  defaults.base_lr = 1e-4;
  const auto cfg = train_config(ctx, "train_tinet", local, defaults);
  Reader r(ctx.section("train_tinet"), "train_tinet");
  const auto mode_name = r.get<std::string>("mode", "Text");
  TinetMode mode = TinetMode::Text;
  try {
    mode = tinet_mode_from_string(mode_name);
  } catch (const Error&) {
    r.problems.push_back("train_tinet.mode: must be Vis or Text");
  }
  const auto name = r.get<std::string>("name", mode == TinetMode::Vis ? "vis" : "text");
  r.check(!name.empty() && name.find('/') == std::string::npos, "name", "must be a plain name");
  const int depth = r.get<int>("depth", mode == TinetMode::Vis ? 2 : 3);
  const int hidden = r.get<int>("hidden", 512);
  const auto activation = r.get<std::string>("activation", "gelu");
  const int every = r.get<int>("checkpoint_every", 1);
  r.check(depth >= 1, "depth", "must be >= 1");
  r.check(hidden >= 1, "hidden", "must be >= 1");
  r.check(every >= 1, "checkpoint_every", "must be >= 1");
  r.finish();

  std::string source;
  DualEncoder enc = resolve_encoder(ctx, &source);
  enc.set_frozen(true);
  const auto cache = load_cache(ctx, "train", enc);
  const auto train = load_train(ctx);
  TinetConfig tc;
  tc.depth = depth;
  tc.hidden_width = hidden;
  tc.d_in = enc.embed_dim();
  tc.d_out = enc.token_dim();
  tc.activation = activation;
  tc.seed = cfg.seed;
  const auto out = ctx.run_dir / "tinets" / name;
  write_snapshot(out, ctx, "train-tinet");
  auto res = run_stage2(enc, cache, train, {{name, tc, mode}}, cfg, {out / "checkpoints", every});
  auto& net = res.tinets.front();
  net.save(out / "tinet.w4pt");
  write_loss_trace(out / "loss_trace.csv", res.states.front().loss_trace);
  const auto& tr = res.states.front().loss_trace;
  return {{"name", name},
          {"mode", to_string(mode)},
          {"config", tc.to_json()},
          {"steps", res.states.front().step},
          {"first_loss", tr.front().loss},
          {"last_loss", tr.back().loss},
          {"checkpoint", (out / "tinet.w4pt").string()}};
}

// The engine keeps a pointer to the encoder, so both live on the heap.
struct LoadedState {
  std::unique_ptr<DualEncoder> encoder_ptr;
  const DualEncoder& encoder() const { return *encoder_ptr; }
  std::unique_ptr<RetrievalEngine> engine;
  FeatureCache references;
};

LoadedState load_engine(const Context& ctx, const std::vector<std::string>& tinet_refs) {
  std::string source;
  LoadedState s{std::make_unique<DualEncoder>(resolve_encoder(ctx, &source)), nullptr, {}};
  s.encoder_ptr->set_frozen(true);
  s.engine = std::make_unique<RetrievalEngine>(s.encoder(), load_cache(ctx, "gallery", s.encoder()));
  s.references = load_references(ctx, s.encoder());
  s.engine->add_references(s.references.images);
  for (const auto& ref : tinet_refs) s.engine->add_tinet(ref, Tinet::load(tinet_path(ctx, ref)));
  return s;
}

json cmd_eval(const Context& ctx) {
  const auto& sec = ctx.section("eval");
  Reader r(sec, "eval");
  const auto mode_name = r.get<std::string>("mode", "composed");
  QueryMode mode = QueryMode::Composed;
  try {
    mode = query_mode_from_string(mode_name);
  } catch (const Error&) {
    r.problems.push_back("eval.mode: must be image-only, text-only, avg or composed");
  }
  const auto tinets = string_list(sec, "eval", "tinets");
  r.check(mode != QueryMode::Composed || !tinets.empty(), "tinets", "composed mode needs at least one TINet");
  const bool exclude_query = r.get<bool>("exclude_query", false);
  std::string default_label = mode_name;
  if (mode == QueryMode::Composed)
    for (std::size_t i = 0; i < tinets.size(); ++i) default_label += (i ? "+" : "-") + tinet_label(tinets[i]);
  const auto label = r.get<std::string>("label", default_label);
  r.finish();

  auto state = load_engine(ctx, mode == QueryMode::Composed ? tinets : std::vector<std::string>{});
  const auto triplets = TripletSet::load(ctx.require_data("triplets"));
  const auto gallery = Dataset::load(ctx.require_data("gallery"), ManifestKind::ImageOnly);
  const auto queries = ctx.data_path("queries") ? Dataset::load(*ctx.data_path("queries"), ManifestKind::ImageOnly)
                                                : Dataset::load(ctx.require_data("train"), ManifestKind::ImageOnly);
  triplets.validate(queries, gallery);

  QuerySpec base;
  base.mode = mode;
  if (mode == QueryMode::Composed) base.tinet_ids = tinets;
  json run_cfg = {{"mode", to_string(mode)},
                  {"tinets", mode == QueryMode::Composed ? tinets : std::vector<std::string>{}},
                  {"exclude_query", exclude_query},
                  {"encoder", to_hex(state.encoder().fingerprint())}};
  const auto report = evaluate(
      triplets.queries(),
      [&](const Triplet& t) {
        QuerySpec spec = base;
        spec.image_id = t.query_image_id;
        spec.caption = t.relative_caption;
        RankOptions opts;
        if (exclude_query) opts.exclude_ids.push_back(t.query_image_id);
        return state.engine->retrieve(spec, 0, opts);
      },
      run_cfg);
  const auto out = ctx.run_dir / "eval" / label;
  write_snapshot(out, ctx, "eval");
  report.save(out / "report.json", out / "report.csv", label);
  return {{"label", label}, {"report", (out / "report.json").string()}, {"metrics", report.to_json().at("metrics")}};
}

json cmd_probe_vocab(const Context& ctx) {
  Reader r(ctx.section("probe_vocab"), "probe_vocab");
  const auto tinet = r.get<std::string>("tinet", "");
  r.check(!tinet.empty(), "tinet", "required");
  const int k = r.get<int>("k", 10);
  const int limit = r.get<int>("limit", 0);
  r.check(k >= 1, "k", "must be >= 1");
  r.check(limit >= 0, "limit", "must be >= 0");
  r.finish();
  std::string source;
  DualEncoder enc = resolve_encoder(ctx, &source);
  enc.set_frozen(true);
  const auto net = Tinet::load(tinet_path(ctx, tinet));
  require(!net.encoder_fingerprint() || *net.encoder_fingerprint() == enc.fingerprint(), ErrorKind::FingerprintMismatch,
          "TINet '" + tinet + "' was trained against a different encoder");
  const auto refs = load_references(ctx, enc);
  std::vector<std::string> ids;
  std::vector<std::vector<VocabNeighbor>> neighbors;
  const auto kk = std::min<std::size_t>(static_cast<std::size_t>(k), static_cast<std::size_t>(enc.vocab_size()));
  for (std::size_t i = 0; i < refs.images.size(); ++i) {
    if (limit > 0 && i >= static_cast<std::size_t>(limit)) break;
    ids.push_back(refs.images.id(i));
    neighbors.push_back(vocab_neighbors(net.forward(refs.images.row(i)), enc.token_table(), enc.tokenizer().vocab(), kk));
  }
  const auto out = ctx.run_dir / "probe_vocab" / tinet_label(tinet);
  write_snapshot(out, ctx, "probe-vocab");
  write_neighbor_dump(out / "neighbors.jsonl", ids, neighbors);
  return {{"images", ids.size()}, {"k", kk}, {"output", (out / "neighbors.jsonl").string()}};
}

json cmd_self_retrieval(const Context& ctx) {
  const auto& sec = ctx.section("self_retrieval");
  const auto tinets = string_list(sec, "self_retrieval", "tinets");
  Reader r(sec, "self_retrieval");
  r.check(!tinets.empty(), "tinets", "at least one TINet required");
  std::string default_label;
  for (std::size_t i = 0; i < tinets.size(); ++i) default_label += (i ? "+" : "") + tinet_label(tinets[i]);
  const auto label = r.get<std::string>("label", default_label);
  r.finish();
  auto state = load_engine(ctx, tinets);
  FeatureTable mixed = state.engine->gallery().images;
  const auto& refs = state.references.images;
  for (std::size_t i = 0; i < refs.size(); ++i)
    if (!mixed.find(refs.id(i))) mixed.add(refs.id(i), refs.row(i));
  std::vector<const Tinet*> nets;
  for (const auto& t : tinets) nets.push_back(&state.engine->tinets().at(t));
  auto report = self_retrieval_probe(state.encoder(), nets, refs, mixed);
  report.config = {{"tinets", tinets}, {"references", refs.size()}, {"gallery", mixed.size()},
                   {"encoder", to_hex(state.encoder().fingerprint())}};
  const auto out = ctx.run_dir / "self_retrieval" / label;
  write_snapshot(out, ctx, "self-retrieval");
  report.save(out / "report.json", out / "report.csv", label);
  return {{"label", label}, {"report", (out / "report.json").string()}, {"metrics", report.to_json().at("metrics")}};
}

json cmd_curate_mine(const Context& ctx) {
  Reader r(ctx.section("curate_mine"), "curate_mine");
  const int k = r.get<int>("k", 5);
  r.check(k >= 1, "k", "must be >= 1");
  r.finish();
  std::string source;
  DualEncoder enc = resolve_encoder(ctx, &source);
  enc.set_frozen(true);
  const auto gallery = load_cache(ctx, "gallery", enc);
  const auto triplets = TripletSet::load(ctx.require_data("triplets"));
  const auto candidates = false_negative_candidates(enc.fingerprint(), triplets, gallery, static_cast<std::size_t>(k));
  const auto out = ctx.run_dir / "curation";
  write_snapshot(out, ctx, "curate-mine");
  save_candidates(out / "candidates.jsonl", candidates);
  return {{"candidates", candidates.size()}, {"output", (out / "candidates.jsonl").string()}};
}

json cmd_curate_apply(const Context& ctx) {
  const auto dir = ctx.run_dir / "curation";
  Reader r(ctx.section("curate_apply"), "curate_apply");
  auto path_of = [&](const std::string& key, const fs::path& fallback) {
    const auto v = r.get<std::string>(key, "");
    return v.empty() ? fallback : ctx.resolve(v);
  };
  const auto verdicts = path_of("verdicts", dir / "verdicts.jsonl");
  const auto candidates = path_of("candidates", dir / "candidates.jsonl");
  const auto output = path_of("output", dir / "triplets.jsonl");
  const auto audit = path_of("audit", dir / "audit.jsonl");
  r.finish();
  const auto triplets = TripletSet::load(ctx.require_data("triplets"));
  const auto res = apply_verdicts(triplets, load_candidates(candidates), VerdictLog(verdicts).read());
  res.triplets.save(output);
  append_audit(audit, res.rejected);
  return {{"accepted", res.accepted.size()},
          {"rejected", res.rejected.size()},
          {"targets_added", res.targets_added},
          {"output", output.string()}};
}

json cmd_filter_corpus(const Context& ctx) {
  Reader r(ctx.section("filter_corpus"), "filter_corpus");
  const double fraction = r.get<double>("top_fraction", 0.2);
  r.check(fraction > 0.0 && fraction <= 1.0, "top_fraction", "must be in (0, 1]");
  const auto manifest = r.get<std::string>("manifest", "");
  const auto kind_name = r.get<std::string>("kind", "image-only");
  const auto output = r.get<std::string>("output", "");
  ManifestKind kind = ManifestKind::ImageOnly;
  try {
    kind = manifest_kind_from_string(kind_name);
  } catch (const Error&) {
    r.problems.push_back("filter_corpus.kind: must be image-caption or image-only");
  }
  r.check(kind != ManifestKind::Triplets, "kind", "must be image-caption or image-only");
  r.finish();
  const auto in = manifest.empty() ? ctx.require_data("corpus") : ctx.resolve(manifest);
  const auto ds = Dataset::load(in, kind);
  const auto kept = filter_by_resolution(ds, fraction);
  const auto out = output.empty() ? ctx.run_dir / "filter_corpus" / "manifest.jsonl" : ctx.resolve(output);
  write_snapshot(ctx.run_dir / "filter_corpus", ctx, "filter-corpus");
  kept.save(out);
  return {{"input", ds.size()}, {"kept", kept.size()}, {"output", out.string()}};
}

json cmd_serve(const Context& ctx, const std::optional<std::string>& bind_flag, bool check_only) {
  const auto& sec = ctx.section("serve");
  Reader r(sec, "serve");
  auto bind = r.get<std::string>("bind", "127.0.0.1:8080");
  r.finish();
  if (const char* env = std::getenv("W4P_BIND"); env && *env) bind = env;
  if (bind_flag) bind = *bind_flag;
  std::vector<std::string> tinets = string_list(sec, "serve", "tinets");
  if (!sec.contains("tinets") && fs::exists(ctx.run_dir / "tinets"))
    for (const auto& e : fs::directory_iterator(ctx.run_dir / "tinets"))
      if (fs::exists(e.path() / "tinet.w4pt")) tinets.push_back(e.path().filename().string());
  std::sort(tinets.begin(), tinets.end());
  auto state = load_engine(ctx, tinets);

  std::vector<Dataset> image_sets = {Dataset::load(ctx.require_data("gallery"), ManifestKind::ImageOnly)};
  if (auto q = ctx.data_path("queries")) image_sets.push_back(Dataset::load(*q, ManifestKind::ImageOnly));
  image_sets.push_back(Dataset::load(ctx.require_data("train"), ManifestKind::ImageOnly));

  std::optional<CurationSession> session;
  const auto dir = ctx.run_dir / "curation";
  if (fs::exists(dir / "candidates.jsonl")) {
    session = CurationSession{load_candidates(dir / "candidates.jsonl"), dir / "verdicts.jsonl", dir / "triplets.jsonl"};
    if (!check_only && !fs::exists(session->triplets_path))
      TripletSet::load(ctx.require_data("triplets")).save(session->triplets_path);
  }
  const auto [host, port] = parse_bind(bind);
  json summary = {{"bind", host + ":" + std::to_string(port)},
                  {"tinets", tinets},
                  {"curation", session.has_value()},
                  {"gallery", state.engine->gallery().images.size()}};
  if (check_only) return summary;
  Service service(*state.engine, image_sets, load_dataset_image, session);
  HttpServer server(service);
  const int bound = server.bind(host, port);
  summary["bind"] = host + ":" + std::to_string(bound);
  std::cout << json{{"status", "listening"}, {"serve", summary}}.dump() << std::endl;
  server.listen();
  return summary;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::InvalidArgument:
      return 2;
    case ErrorKind::Parse:
    case ErrorKind::NotFound:
    case ErrorKind::Io:
    case ErrorKind::Empty:
      return 3;
    case ErrorKind::FingerprintMismatch:
    case ErrorKind::Conflict:
      return 4;
    case ErrorKind::Numeric:
      return 5;
  }
  return 1;
}

void emit_error(std::ostream& err, const std::string& kind, const std::string& message,
                const std::vector<std::string>& fields = {}) {
  json e = {{"kind", kind}, {"message", message}};
  if (!fields.empty()) e["fields"] = fields;
  err << json{{"error", e}}.dump() << std::endl;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Composed person retrieval toolkit"};
  app.require_subcommand(1);
  std::string config_path, run_dir;
  std::optional<std::uint64_t> seed;

  struct Overrides {
    std::optional<std::string> mode, name, label, bind, manifest, output, tinet_single;
    std::optional<int> depth, hidden, k, epochs, max_steps, threads, limit;
    std::optional<double> top_fraction;
    std::vector<std::string> tinets;
    bool check = false;
  } ov;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config,-c", config_path, "JSON config file");
    sub->add_option("--run-dir", run_dir, "run directory (overrides run_dir)");
    sub->add_option("--seed", seed, "seed (overrides seed)");
  };
  auto* finetune = app.add_subcommand("finetune", "stage-1 fine-tuning of the dual encoder");
  auto* cache = app.add_subcommand("cache", "encode train/gallery/query images and captions");
  auto* train_tinet = app.add_subcommand("train-tinet", "stage-2 TINet training on cached features");
  auto* eval = app.add_subcommand("eval", "Rank-k and mAP over the triplet queries");
  auto* probe = app.add_subcommand("probe-vocab", "nearest vocabulary words of pseudo-words");
  auto* self = app.add_subcommand("self-retrieval", "caption-free pseudo-word self-retrieval");
  auto* mine = app.add_subcommand("curate-mine", "mine false-negative candidates");
  auto* apply = app.add_subcommand("curate-apply", "apply curation verdicts to the triplet file");
  auto* filter = app.add_subcommand("filter-corpus", "keep the highest-resolution fraction of a manifest");
  auto* serve = app.add_subcommand("serve", "HTTP service for retrieval and curation");
  for (auto* s : {finetune, cache, train_tinet, eval, probe, self, mine, apply, filter, serve}) common(s);
  finetune->add_option("--epochs", ov.epochs);
  finetune->add_option("--max-steps", ov.max_steps);
  cache->add_option("--threads", ov.threads);
  train_tinet->add_option("--mode", ov.mode, "Vis or Text");
  train_tinet->add_option("--depth", ov.depth);
  train_tinet->add_option("--hidden", ov.hidden);
  train_tinet->add_option("--name", ov.name);
  train_tinet->add_option("--epochs", ov.epochs);
  train_tinet->add_option("--max-steps", ov.max_steps);
  eval->add_option("--mode", ov.mode, "image-only, text-only, avg or composed");
  eval->add_option("--tinet", ov.tinets, "TINet name or checkpoint path (repeatable)");
  eval->add_option("--label", ov.label);
  probe->add_option("--tinet", ov.tinet_single);
  probe->add_option("--k", ov.k);
  probe->add_option("--limit", ov.limit);
  self->add_option("--tinet", ov.tinets, "TINet name or checkpoint path (repeatable)");
  self->add_option("--label", ov.label);
  mine->add_option("--k", ov.k);
  apply->add_option("--output", ov.output);
  filter->add_option("--top-fraction", ov.top_fraction);
  filter->add_option("--manifest", ov.manifest);
  filter->add_option("--output", ov.output);
  serve->add_option("--bind", ov.bind, "host:port (overrides W4P_BIND and serve.bind)");
  serve->add_flag("--check", ov.check, "load everything, report, and exit without listening");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    emit_error(err, "usage", e.what());
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  try {
    Context ctx;
    if (!config_path.empty()) {
      try {
        ctx.cfg = json::parse(read_file(config_path));
      } catch (const json::exception& e) {
        throw ConfigError({std::string("config is not valid JSON: ") + e.what()});
      }
      ctx.base = fs::path(config_path).parent_path();
    } else {
      ctx.cfg = json::object();
      ctx.base = fs::current_path();
    }
    check_schema(ctx.cfg);

    auto set = [&](const char* section, const char* key, const json& v) {
      if (!ctx.cfg.contains(section)) ctx.cfg[section] = json::object();
      ctx.cfg[section][key] = v;
    };
    if (seed) ctx.cfg["seed"] = *seed;
    const std::string section = command == "train-tinet"      ? "train_tinet"
                                : command == "probe-vocab"    ? "probe_vocab"
                                : command == "self-retrieval" ? "self_retrieval"
                                : command == "curate-mine"    ? "curate_mine"
                                : command == "curate-apply"   ? "curate_apply"
                                : command == "filter-corpus"  ? "filter_corpus"
                                                              : command;
    const char* sec = section.c_str();
    if (ov.epochs) set(sec, "epochs", *ov.epochs);
    if (ov.max_steps) set(sec, "max_steps", *ov.max_steps);
    if (ov.threads) set(sec, "threads", *ov.threads);
    if (ov.mode) set(sec, "mode", *ov.mode);
    if (ov.depth) set(sec, "depth", *ov.depth);
    if (ov.hidden) set(sec, "hidden", *ov.hidden);
    if (ov.name) set(sec, "name", *ov.name);
    if (!ov.tinets.empty()) set(sec, "tinets", ov.tinets);
    if (ov.tinet_single) set(sec, "tinet", *ov.tinet_single);
    if (ov.label) set(sec, "label", *ov.label);
    if (ov.k) set(sec, "k", *ov.k);
    if (ov.limit) set(sec, "limit", *ov.limit);
    if (ov.top_fraction) set(sec, "top_fraction", *ov.top_fraction);
    if (ov.manifest) set(sec, "manifest", *ov.manifest);
    if (ov.output) set(sec, "output", *ov.output);

    if (!run_dir.empty())
      ctx.run_dir = run_dir;
    else if (ctx.cfg.contains("run_dir"))
      ctx.run_dir = ctx.resolve(ctx.cfg.at("run_dir").get<std::string>());
    else
      ctx.run_dir = ctx.base / "run";

    json result;
    if (command == "finetune") result = cmd_finetune(ctx);
    else if (command == "cache") result = cmd_cache(ctx);
    else if (command == "train-tinet") result = cmd_train_tinet(ctx);
    else if (command == "eval") result = cmd_eval(ctx);
    else if (command == "probe-vocab") result = cmd_probe_vocab(ctx);
    else if (command == "self-retrieval") result = cmd_self_retrieval(ctx);
    else if (command == "curate-mine") result = cmd_curate_mine(ctx);
    else if (command == "curate-apply") result = cmd_curate_apply(ctx);
    else if (command == "filter-corpus") result = cmd_filter_corpus(ctx);
    else if (command == "serve") result = cmd_serve(ctx, ov.bind, ov.check);
    out << json{{"status", "ok"}, {"command", command}, {"result", result}}.dump() << std::endl;
    return 0;
  } catch (const ConfigError& e) {
    emit_error(err, "config", e.what(), e.fields());
    return 2;
  } catch (const Error& e) {
    emit_error(err, std::string(to_string(e.kind())), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    emit_error(err, "internal", e.what());
    return 1;
  }
}

}  // namespace w4p::cli
