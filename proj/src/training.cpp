#include "w4p/training.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>

#include "w4p/archive.hpp"
#include "w4p/error.hpp"
#include "w4p/rng.hpp"
#include "w4p/util.hpp"

namespace w4p {

using nlohmann::json;

namespace {

std::string irr_norm_name(IrrNorm n) { return n == IrrNorm::Vocab ? "vocab" : "masked-only"; }

IrrNorm irr_norm_from(const std::string& s) {
  if (s == "vocab") return IrrNorm::Vocab;
  if (s == "masked-only") return IrrNorm::MaskedOnly;
  fail(ErrorKind::Config, "irr_norm must be 'vocab' or 'masked-only', got '" + s + "'");
}

std::string contrastive_name(ContrastiveLoss c) { return c == ContrastiveLoss::Cmpm ? "cmpm" : "itc"; }

ContrastiveLoss contrastive_from(const std::string& s) {
  if (s == "cmpm") return ContrastiveLoss::Cmpm;
  if (s == "itc") return ContrastiveLoss::Itc;
  fail(ErrorKind::Config, "contrastive must be 'cmpm' or 'itc', got '" + s + "'");
}

Eigen::MatrixXd normal_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal(0.0, stddev);
  return m;
}

std::string epoch_tag(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch%03d", epoch + 1);
  return buf;
}

bool checkpoint_due(const CheckpointOptions& ckpt, int epoch, int epochs) {
  if (ckpt.dir.empty()) return false;
  return (epoch + 1) % std::max(1, ckpt.every_epochs) == 0 || epoch + 1 == epochs;
}

// Cross-attention from masked text states to the image's patch tokens,
// followed by a vocabulary classifier.
struct IrrHead {
  ParameterList params;
  double scale = 1.0;

  IrrHead(int d_hidden, int vocab, std::uint64_t seed) {
    Rng rng(derive_seed({seed, 0x1ee4ead}));
    const double s = 1.0 / std::sqrt(static_cast<double>(d_hidden));
    params.push_back({"wq", ag::Var(normal_matrix(rng, d_hidden, d_hidden, s), true)});
    params.push_back({"wk", ag::Var(normal_matrix(rng, d_hidden, d_hidden, s), true)});
    params.push_back({"wv", ag::Var(normal_matrix(rng, d_hidden, d_hidden, s), true)});
    params.push_back({"cls_w", ag::Var(normal_matrix(rng, d_hidden, vocab, s), true)});
    params.push_back({"cls_b", ag::Var(Eigen::MatrixXd::Zero(1, vocab), true)});
    scale = s;
  }

  ag::Var logits(const ag::Var& queries, const ag::Var& patches) const {
    auto q = ag::matmul(queries, params[0].var);
    auto k = ag::matmul(patches, params[1].var);
    auto v = ag::matmul(patches, params[2].var);
    auto attn = ag::softmax_rows(ag::scale(ag::matmul(q, ag::transpose(k)), scale));
    auto ctx = ag::add(queries, ag::matmul(attn, v));
    return ag::add_row(ag::matmul(ctx, params[3].var), params[4].var);
  }
};

struct IdHead {
  ParameterList params;

  IdHead(int d_embed, int classes, std::uint64_t seed) {
    Rng rng(derive_seed({seed, 0x1dead}));
    params.push_back({"w", ag::Var(normal_matrix(rng, d_embed, classes, 1.0 / std::sqrt(double(d_embed))), true)});
    params.push_back({"b", ag::Var(Eigen::MatrixXd::Zero(1, classes), true)});
  }

  ag::Var logits(const ag::Var& f) const { return ag::add_row(ag::matmul(f, params[0].var), params[1].var); }
};

struct MaskedText {
  std::vector<int> ids;        // concatenated masked sequences
  std::vector<int> positions;  // rows of `ids` that were selected
  std::vector<int> targets;    // original ids at those rows
  std::vector<int> owner;      // batch row of each selected position
};

// 15%-style selection over the word positions of each sequence (at least one
// per sequence); selected tokens become MASK 80%, a random word 10%, or stay
// unchanged 10%.
MaskedText mask_tokens(const std::vector<std::vector<int>>& seqs, double rate, int vocab, Rng& rng) {
  MaskedText out;
  int offset = 0;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const auto& seq = seqs[s];
    std::vector<int> chosen;
    for (std::size_t i = 1; i + 1 < seq.size(); ++i)
      if (rng.uniform() < rate) chosen.push_back(static_cast<int>(i));
    if (chosen.empty() && seq.size() > 2) chosen.push_back(1 + static_cast<int>(rng.below(seq.size() - 2)));
    std::vector<int> ids = seq;
    for (int i : chosen) {
      const double r = rng.uniform();
      if (r < 0.8)
        ids[static_cast<std::size_t>(i)] = token::kMask;
      else if (r < 0.9)
        ids[static_cast<std::size_t>(i)] =
            token::kNumSpecial + static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab - token::kNumSpecial)));
      out.positions.push_back(offset + i);
      out.targets.push_back(seq[static_cast<std::size_t>(i)]);
      out.owner.push_back(static_cast<int>(s));
    }
    out.ids.insert(out.ids.end(), ids.begin(), ids.end());
    offset += static_cast<int>(seq.size());
  }
  return out;
}

std::vector<int> class_indices(const Dataset& dataset, const std::vector<std::string>& ids) {
  std::map<std::string, int> classes;
  for (const auto& r : dataset.images()) classes.emplace(r.identity_id, 0);
  int next = 0;
  for (auto& [k, v] : classes) v = next++;
  std::vector<int> out;
  for (const auto& id : ids) out.push_back(classes.at(id));
  return out;
}

int num_classes(const Dataset& dataset) {
  std::map<std::string, int> classes;
  for (const auto& r : dataset.images()) classes.emplace(r.identity_id, 0);
  return static_cast<int>(classes.size());
}

double check_finite(double loss, int step) {
  if (!std::isfinite(loss))
    fail(ErrorKind::Numeric, "non-finite loss " + format_double(loss) + " at step " + std::to_string(step));
  return loss;
}

Eigen::MatrixXd rows_from(const FeatureTable& table, const Dataset& dataset, std::span<const std::size_t> idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), table.dim());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto& id = dataset.image(idx[r]).image_id;
    const auto row = table.find(id);
    require(row.has_value(), ErrorKind::NotFound, "feature cache has no entry for '" + id + "'");
    out.row(static_cast<Eigen::Index>(r)) = table.row(*row).transpose();
  }
  return out;
}

}  // namespace

std::vector<std::string> TrainConfig::problems() const {
  std::vector<std::string> p;
  if (epochs < 1) p.push_back("epochs must be >= 1");
  if (batch_size < 1) p.push_back("batch_size must be >= 1");
  if (warmup_epochs < 0 || warmup_epochs >= epochs) p.push_back("warmup_epochs must be in [0, epochs)");
  if (!(base_lr > 0)) p.push_back("base_lr must be > 0");
  if (!(head_lr > 0)) p.push_back("head_lr must be > 0");
  if (!(tau > 0)) p.push_back("tau must be > 0");
  if (!(epsilon > 0 && epsilon < 1e-4)) p.push_back("epsilon must be in (0, 1e-4)");
  if (max_steps && *max_steps < 1) p.push_back("max_steps must be >= 1");
  if (sampler && sampler->max_per_identity < 1) p.push_back("max_per_identity must be >= 1");
  if (!(mask_rate > 0 && mask_rate <= 1)) p.push_back("mask_rate must be in (0, 1]");
  return p;
}

void TrainConfig::validate() const {
  auto p = problems();
  if (p.empty()) return;
  std::string msg = "invalid training config: ";
  for (std::size_t i = 0; i < p.size(); ++i) msg += (i ? "; " : "") + p[i];
  fail(ErrorKind::Config, msg);
}

json TrainConfig::to_json() const {
  json j = {{"epochs", epochs},         {"batch_size", batch_size}, {"base_lr", base_lr},
            {"head_lr", head_lr},       {"warmup_epochs", warmup_epochs}, {"tau", tau},
            {"epsilon", epsilon},       {"seed", seed},             {"irr_norm", irr_norm_name(irr_norm)},
            {"mask_rate", mask_rate},   {"contrastive", contrastive_name(contrastive)}};
  j["max_steps"] = max_steps ? json(*max_steps) : json(nullptr);
  if (sampler) {
    j["identity_aware"] = sampler->identity_aware;
    j["max_per_identity"] = sampler->max_per_identity;
  }
  return j;
}

TrainConfig TrainConfig::from_json(const json& j) {
  reject_unknown_keys(j,
                      {"epochs", "batch_size", "base_lr", "head_lr", "warmup_epochs", "tau", "epsilon", "seed",
                       "max_steps", "identity_aware", "max_per_identity", "irr_norm", "mask_rate", "contrastive"},
                      "train");
  TrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.base_lr = j.value("base_lr", c.base_lr);
    c.head_lr = j.value("head_lr", c.head_lr);
    c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
    c.tau = j.value("tau", c.tau);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.seed = j.value("seed", c.seed);
    if (j.contains("max_steps") && !j.at("max_steps").is_null()) c.max_steps = j.at("max_steps").get<int>();
    if (j.contains("identity_aware") || j.contains("max_per_identity")) {
      SamplerConfig s;
      s.identity_aware = j.value("identity_aware", s.identity_aware);
      s.max_per_identity = j.value("max_per_identity", s.max_per_identity);
      c.sampler = s;
    }
    c.irr_norm = irr_norm_from(j.value("irr_norm", std::string("vocab")));
    c.mask_rate = j.value("mask_rate", c.mask_rate);
    c.contrastive = contrastive_from(j.value("contrastive", std::string("cmpm")));
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("training config: ") + e.what());
  }
  return c;
}

double lr_at(const TrainConfig& cfg, double epoch) { return lr_at(cfg, epoch, cfg.base_lr); }

double lr_at(const TrainConfig& cfg, double epoch, double base_lr) {
  require(epoch >= 0.0 && epoch <= cfg.epochs, ErrorKind::InvalidArgument,
          "lr_at: epoch " + format_double(epoch) + " outside [0, " + std::to_string(cfg.epochs) + "]");
  const double w = cfg.warmup_epochs;
  if (epoch < w) return base_lr * (0.1 + 0.9 * epoch / w);
  const double t = (epoch - w) / (cfg.epochs - w);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

std::string loss_trace_csv(const std::vector<LossRecord>& trace) {
  std::string out = "step,epoch,loss,lr\n";
  for (const auto& r : trace)
    out += std::to_string(r.step) + "," + format_double(r.epoch) + "," + format_double(r.loss) + "," +
           format_double(r.lr) + "\n";
  return out;
}

void write_loss_trace(const std::filesystem::path& path, const std::vector<LossRecord>& trace) {
  write_file_atomic(path, loss_trace_csv(trace));
}

void Adam::step(ParameterList& params, double lr) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(Eigen::MatrixXd::Zero(p.var.rows(), p.var.cols()));
      v_.push_back(Eigen::MatrixXd::Zero(p.var.rows(), p.var.cols()));
    }
  }
  require(m_.size() == params.size(), ErrorKind::InvalidArgument, "optimizer bound to a different parameter list");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& var = params[i].var;
    if (!var.requires_grad()) continue;
    const Eigen::MatrixXd g = var.grad();
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * g.cwiseProduct(g);
    var.mutable_value().array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

std::vector<Eigen::MatrixXd> preprocess_dataset(const DualEncoder& encoder, const Dataset& dataset,
                                                const ImageSource& images) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) out.push_back(encoder.preprocess(images(dataset, i)));
  return out;
}

Stage1Result run_stage1(DualEncoder encoder, const Dataset& dataset, const TrainConfig& cfg,
                        const ImageSource& images, const CheckpointOptions& ckpt) {
  cfg.validate();
  require(!encoder.frozen(), ErrorKind::InvalidArgument, "stage 1 requires a trainable encoder (encoder is frozen)");
  require(dataset.has_captions(), ErrorKind::InvalidArgument, "stage 1 requires an image-caption dataset");
  const LossConfig lcfg = cfg.loss_config();
  const int vocab = encoder.vocab_size();

  const auto patches = preprocess_dataset(encoder, dataset, images);
  std::vector<std::vector<int>> token_rows;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto seq = encoder.tokenizer().tokenize(dataset.caption(i).text);
    token_rows.emplace_back(seq.token_ids.begin(), seq.token_ids.begin() + seq.length);
  }

  IrrHead irr_head(encoder.config().d_hidden, vocab, cfg.seed);
  IdHead id_head(encoder.embed_dim(), num_classes(dataset), cfg.seed);
  Adam enc_opt, irr_opt, id_opt;

  BatchSampler sampler(dataset, static_cast<std::size_t>(cfg.batch_size), cfg.seed,
                       cfg.sampler.value_or(SamplerConfig{true, 2}));
  Stage1Result result{std::move(encoder), {}, {}};
  DualEncoder& enc = result.encoder;
  TrainState& state = result.state;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.max_steps && state.step >= *cfg.max_steps) break;
    const auto plan = sampler.epoch_plan(static_cast<std::size_t>(epoch));
    require(!plan.empty(), ErrorKind::InvalidArgument, "stage 1: an epoch holds no full batch");
    for (std::size_t s = 0; s < plan.size(); ++s) {
      if (cfg.max_steps && state.step >= *cfg.max_steps) break;
      const double ep = epoch + static_cast<double>(s) / static_cast<double>(plan.size());
      const double factor = lr_at(cfg, ep, 1.0);
      const Batch batch = make_batch(dataset, plan[s]);
      const auto n = static_cast<Eigen::Index>(batch.size());

      Eigen::MatrixXd flat(n, enc.config().visual_input_dim());
      std::vector<std::vector<int>> seqs;
      std::vector<int> ids, lengths;
      for (Eigen::Index r = 0; r < n; ++r) {
        const std::size_t i = batch.indices[static_cast<std::size_t>(r)];
        flat.row(r) = flatten_rows(patches[i]);
        seqs.push_back(token_rows[i]);
        ids.insert(ids.end(), token_rows[i].begin(), token_rows[i].end());
        lengths.push_back(static_cast<int>(token_rows[i].size()));
      }

      auto f_v = enc.image_forward(flat);
      auto f_t = enc.text_forward(enc.lookup(ids), lengths).embeddings;
      const auto labels = build_match_labels(batch.identity_ids, batch.identity_ids);
      auto contrastive = cfg.contrastive == ContrastiveLoss::Cmpm ? cmpm_node(f_v, f_t, labels, lcfg)
                                                                  : itc_node(f_v, f_t, lcfg);

      Rng mask_rng(derive_seed({cfg.seed, 0x3a5c, static_cast<std::uint64_t>(state.step)}));
      const auto masked = mask_tokens(seqs, cfg.mask_rate, vocab, mask_rng);
      auto hidden = enc.text_forward(enc.lookup(masked.ids), lengths).hidden;
      std::vector<ag::Var> per_sample;
      std::vector<int> targets;
      for (Eigen::Index r = 0; r < n; ++r) {
        std::vector<int> rows;
        for (std::size_t m = 0; m < masked.positions.size(); ++m) {
          if (masked.owner[m] != r) continue;
          rows.push_back(masked.positions[m]);
          targets.push_back(masked.targets[m]);
        }
        if (rows.empty()) continue;
        const std::size_t i = batch.indices[static_cast<std::size_t>(r)];
        per_sample.push_back(irr_head.logits(ag::gather_rows(hidden, rows), enc.patch_tokens(patches[i])));
      }
      auto irr = irr_node(ag::concat_rows(per_sample), targets, cfg.irr_norm);

      const auto classes = class_indices(dataset, batch.identity_ids);
      auto id = id_node(id_head.logits(f_v), id_head.logits(f_t), classes);

      const double total = stage1_objective(irr.scalar(), contrastive.scalar(), id.scalar());
      check_finite(total, state.step);
      const ag::Var parts[] = {irr, contrastive, id};
      ag::sum_scalars(parts).backward();

      const double lr = cfg.base_lr * factor;
      enc_opt.step(enc.parameters(), lr);
      irr_opt.step(irr_head.params, cfg.head_lr * factor);
      id_opt.step(id_head.params, cfg.head_lr * factor);
      zero_grad(enc.parameters());
      zero_grad(irr_head.params);
      zero_grad(id_head.params);

      state.loss_trace.push_back({state.step, ep, total, lr});
      result.parts.push_back({irr.scalar(), contrastive.scalar(), id.scalar()});
      ++state.step;
    }
    state.epoch = epoch + 1;
    if (checkpoint_due(ckpt, epoch, cfg.epochs)) {
      std::filesystem::create_directories(ckpt.dir);
      enc.save(ckpt.dir / ("encoder_" + epoch_tag(epoch) + ".w4p"));
    }
  }
  return result;
}

FeatureProvider cached_features(const FeatureCache& cache, const Dataset& dataset) {
  FeatureProvider p;
  p.images = [&cache, dataset](std::span<const std::size_t> idx) { return rows_from(cache.images, dataset, idx); };
  if (cache.texts)
    p.texts = [&cache, dataset](std::span<const std::size_t> idx) { return rows_from(*cache.texts, dataset, idx); };
  return p;
}

FeatureProvider live_features(const DualEncoder& encoder, const Dataset& dataset, const ImageSource& images) {
  FeatureProvider p;
  p.images = [&encoder, dataset, images](std::span<const std::size_t> idx) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), encoder.embed_dim());
    for (std::size_t r = 0; r < idx.size(); ++r)
      out.row(static_cast<Eigen::Index>(r)) = encoder.encode_image(images(dataset, idx[r])).transpose();
    return out;
  };
  if (dataset.has_captions())
    p.texts = [&encoder, dataset](std::span<const std::size_t> idx) {
      Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), encoder.embed_dim());
      for (std::size_t r = 0; r < idx.size(); ++r)
        out.row(static_cast<Eigen::Index>(r)) = encoder.encode_text(dataset.caption(idx[r]).text).transpose();
      return out;
    };
  return p;
}

Stage2Result run_stage2(const DualEncoder& encoder, const FeatureCache& cache, const Dataset& dataset,
                        const std::vector<TinetTask>& tasks, const TrainConfig& cfg, const CheckpointOptions& ckpt) {
  check_fingerprint(encoder.fingerprint(), cache.fingerprint, "feature cache");
  for (const auto& t : tasks)
    require(t.mode != TinetMode::Text || cache.texts.has_value(), ErrorKind::InvalidArgument,
            "task '" + t.name + "': Text mode needs cached text features, cache is image-only");
  return run_stage2(encoder, cached_features(cache, dataset), dataset, tasks, cfg, ckpt);
}

Stage2Result run_stage2(const DualEncoder& encoder, const FeatureProvider& features, const Dataset& dataset,
                        const std::vector<TinetTask>& tasks, const TrainConfig& cfg, const CheckpointOptions& ckpt) {
  cfg.validate();
  require(encoder.frozen(), ErrorKind::InvalidArgument, "stage 2 requires a frozen encoder");
  require(!tasks.empty(), ErrorKind::InvalidArgument, "stage 2: no TINet tasks given");
  bool need_text = false;
  for (const auto& t : tasks) {
    require(t.config.d_in == encoder.embed_dim() && t.config.d_out == encoder.token_dim(), ErrorKind::Config,
            "task '" + t.name + "': TINet dims " + std::to_string(t.config.d_in) + "->" +
                std::to_string(t.config.d_out) + " do not match encoder " + std::to_string(encoder.embed_dim()) +
                "->" + std::to_string(encoder.token_dim()));
    if (t.mode == TinetMode::Text) {
      require(static_cast<bool>(features.texts), ErrorKind::InvalidArgument,
              "task '" + t.name + "': Text mode needs text features, data is image-only");
      need_text = true;
    }
  }
  const Fingerprint before = encoder.fingerprint();
  const LossConfig lcfg = cfg.loss_config();
  const PromptLayout layout = encoder.prompt_layout(PromptTemplate::Train, "");

  Stage2Result result;
  std::vector<Adam> opts(tasks.size());
  for (const auto& t : tasks) {
    result.tinets.emplace_back(t.config);
    result.states.emplace_back();
  }

  BatchSampler sampler(dataset, static_cast<std::size_t>(cfg.batch_size), cfg.seed,
                       cfg.sampler.value_or(SamplerConfig{false, 2}));
  int step = 0;
  auto save_all = [&](const std::string& tag) {
    std::filesystem::create_directories(ckpt.dir);
    for (std::size_t k = 0; k < tasks.size(); ++k) {
      Tinet copy = result.tinets[k].clone();
      round_to_float(copy.parameters());
      copy.set_encoder_fingerprint(before);
      copy.save(ckpt.dir / (tasks[k].name + "_" + tag + ".w4pt"));
    }
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.max_steps && step >= *cfg.max_steps) break;
    const auto plan = sampler.epoch_plan(static_cast<std::size_t>(epoch));
    require(!plan.empty(), ErrorKind::InvalidArgument, "stage 2: an epoch holds no full batch");
    for (std::size_t s = 0; s < plan.size(); ++s) {
      if (cfg.max_steps && step >= *cfg.max_steps) break;
      const double ep = epoch + static_cast<double>(s) / static_cast<double>(plan.size());
      const double lr = lr_at(cfg, ep);
      const auto& idx = plan[s];
      std::vector<std::string> ids;
      for (auto i : idx) ids.push_back(dataset.image(i).identity_id);
      const auto labels = build_match_labels(ids, ids);
      const Eigen::MatrixXd f_v = features.images(idx);
      Eigen::MatrixXd f_t;
      if (need_text) f_t = features.texts(idx);

      for (std::size_t k = 0; k < tasks.size(); ++k) {
        auto& net = result.tinets[k];
        auto pseudo = net.forward_graph(ag::constant(f_v));
        auto f_c = encoder.prompt_forward(layout, pseudo);
        auto anchor = ag::constant(tasks[k].mode == TinetMode::Vis ? f_v : f_t);
        auto loss = cmpm_node(anchor, f_c, labels, lcfg);
        check_finite(loss.scalar(), step);
        loss.backward();
        opts[k].step(net.parameters(), lr);
        zero_grad(net.parameters());
        result.states[k].loss_trace.push_back({step, ep, loss.scalar(), lr});
        result.states[k].step = step + 1;
      }
      ++step;
    }
    for (auto& st : result.states) st.epoch = epoch + 1;
    if (checkpoint_due(ckpt, epoch, cfg.epochs)) save_all(epoch_tag(epoch));
  }

  require(encoder.fingerprint() == before, ErrorKind::Numeric, "stage 2 modified the frozen encoder");
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    auto& net = result.tinets[k];
    round_to_float(net.parameters());
    net.set_encoder_fingerprint(before);
    net.metadata() = {{"name", tasks[k].name},
                      {"mode", to_string(tasks[k].mode)},
                      {"steps", result.states[k].step},
                      {"train", cfg.to_json()}};
  }
  return result;
}

}  // namespace w4p
