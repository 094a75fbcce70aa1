#include "w4p/encoder.hpp"

#include <cmath>

#include "w4p/archive.hpp"
#include "w4p/error.hpp"
#include "w4p/rng.hpp"

namespace w4p {

using nlohmann::json;

namespace {

constexpr float kClipMean[3] = {0.48145466f, 0.4578275f, 0.40821073f};
constexpr float kClipStd[3] = {0.26862954f, 0.26130258f, 0.27577711f};

Eigen::MatrixXd normal_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal(0.0, stddev);
  return m;
}

}  // namespace

void EncoderConfig::validate() const {
  require(backend == "toy", ErrorKind::Config,
          "encoder.backend '" + backend + "' is not available in this build (supported: toy)");
  require(d_embed > 0 && d_token > 0 && d_hidden > 0, ErrorKind::Config, "encoder dims must be positive");
  require(patch > 0 && image_height >= patch && image_width >= patch && image_height % patch == 0 &&
              image_width % patch == 0,
          ErrorKind::Config, "encoder image size must be a positive multiple of the patch size");
  require(max_len >= 6 && max_len <= 4096, ErrorKind::Config, "encoder.max_len must be in [6, 4096]");
}

json EncoderConfig::to_json() const {
  return {{"backend", backend}, {"d_embed", d_embed},           {"d_token", d_token},
          {"d_hidden", d_hidden}, {"image_height", image_height}, {"image_width", image_width},
          {"patch", patch},       {"max_len", max_len},           {"seed", seed}};
}

EncoderConfig EncoderConfig::from_json(const json& j) {
  EncoderConfig c;
  c.backend = j.value("backend", c.backend);
  c.d_embed = j.value("d_embed", c.d_embed);
  c.d_token = j.value("d_token", c.d_token);
  c.d_hidden = j.value("d_hidden", c.d_hidden);
  c.image_height = j.value("image_height", c.image_height);
  c.image_width = j.value("image_width", c.image_width);
  c.patch = j.value("patch", c.patch);
  c.max_len = j.value("max_len", c.max_len);
  c.seed = j.value("seed", c.seed);
  return c;
}

Eigen::MatrixXd flatten_rows(const Eigen::MatrixXd& patches) {
  Eigen::MatrixXd flat(1, patches.size());
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < patches.rows(); ++r)
    for (Eigen::Index c = 0; c < patches.cols(); ++c) flat(0, k++) = patches(r, c);
  return flat;
}

Eigen::VectorXd round_to_float(const Eigen::VectorXd& v) { return v.cast<float>().cast<double>(); }

DualEncoder::DualEncoder(EncoderConfig cfg, Tokenizer tokenizer) : cfg_(std::move(cfg)), tokenizer_(std::move(tokenizer)) {
  cfg_.validate();
  require(tokenizer_.max_len() == cfg_.max_len, ErrorKind::Config, "tokenizer max_len differs from encoder max_len");
  require(tokenizer_.vocab().size() > token::kNumSpecial, ErrorKind::Config, "encoder needs a non-empty vocabulary");
  Rng rng(derive_seed({cfg_.seed, 0xe1c0de}));
  const int v = tokenizer_.vocab().size();
  const int p = cfg_.num_patches();
  auto add = [&](const char* name, Eigen::MatrixXd m) { params_.push_back({name, ag::Var(std::move(m), true)}); };
  add("token_table", normal_matrix(rng, v, cfg_.d_token, 1.0));
  add("text_pos", normal_matrix(rng, cfg_.max_len, cfg_.d_token, 0.1));
  add("text_w1", normal_matrix(rng, cfg_.d_token, cfg_.d_hidden, 1.0 / std::sqrt(cfg_.d_token)));
  add("text_b1", Eigen::MatrixXd::Zero(1, cfg_.d_hidden));
  add("text_w2", normal_matrix(rng, cfg_.d_hidden, cfg_.d_embed, 1.0 / std::sqrt(cfg_.d_hidden)));
  add("text_b2", Eigen::MatrixXd::Zero(1, cfg_.d_embed));
  add("vis_w", normal_matrix(rng, 3 * p, cfg_.d_embed, 1.0 / std::sqrt(3.0 * p)));
  add("vis_b", Eigen::MatrixXd::Zero(1, cfg_.d_embed));
  add("patch_w", normal_matrix(rng, 3, cfg_.d_hidden, 1.0 / std::sqrt(3.0)));
  add("patch_pos", normal_matrix(rng, p, cfg_.d_hidden, 0.1));
}

DualEncoder DualEncoder::clone() const {
  DualEncoder out(cfg_, tokenizer_);
  out.params_ = clone_parameters(params_);
  out.frozen_ = frozen_;
  return out;
}

const Eigen::MatrixXd& DualEncoder::token_table() const { return param("token_table").value(); }

void DualEncoder::set_frozen(bool frozen) {
  frozen_ = frozen;
  set_trainable(params_, !frozen);
}

Fingerprint DualEncoder::fingerprint() const {
  Sha256 h;
  h.update("w4p-dual-encoder/1");
  h.update(cfg_.to_json().dump());
  for (const auto& w : tokenizer_.vocab().words()) {
    h.update(w);
    h.update(std::string_view("\n"));
  }
  hash_parameters(h, params_);
  return h.finish();
}

Eigen::MatrixXd DualEncoder::preprocess(const Image& image) const {
  require(!image.empty(), ErrorKind::InvalidArgument, "encode_image: empty image");
  const Image img = resize_image(image, cfg_.image_height, cfg_.image_width);
  const int gh = cfg_.image_height / cfg_.patch;
  const int gw = cfg_.image_width / cfg_.patch;
  Eigen::MatrixXd patches = Eigen::MatrixXd::Zero(gh * gw, 3);
  const double area = static_cast<double>(cfg_.patch) * cfg_.patch;
  for (int y = 0; y < cfg_.image_height; ++y) {
    for (int x = 0; x < cfg_.image_width; ++x) {
      const int row = (y / cfg_.patch) * gw + x / cfg_.patch;
      for (int c = 0; c < 3; ++c) patches(row, c) += (img.at(y, x, c) - kClipMean[c]) / kClipStd[c];
    }
  }
  return patches / area;
}

ag::Var DualEncoder::image_forward(const Eigen::MatrixXd& flat_inputs) const {
  require(flat_inputs.cols() == cfg_.visual_input_dim(), ErrorKind::InvalidArgument,
          "image input has " + std::to_string(flat_inputs.cols()) + " features, expected " +
              std::to_string(cfg_.visual_input_dim()));
  return ag::add_row(ag::matmul(ag::constant(flat_inputs), param("vis_w")), param("vis_b"));
}

ag::Var DualEncoder::patch_tokens(const Eigen::MatrixXd& patches) const {
  return ag::gelu(ag::add(ag::matmul(ag::constant(patches), param("patch_w")), param("patch_pos")));
}

ag::Var DualEncoder::lookup(std::span<const int> ids) const { return ag::gather_rows(param("token_table"), ids); }

DualEncoder::TextForward DualEncoder::text_forward(const ag::Var& rows, std::span<const int> lengths) const {
  require(rows.cols() == cfg_.d_token, ErrorKind::InvalidArgument,
          "token embeddings have dim " + std::to_string(rows.cols()) + ", encoder expects " +
              std::to_string(cfg_.d_token));
  std::vector<int> positions;
  positions.reserve(static_cast<std::size_t>(rows.rows()));
  for (int len : lengths) {
    require(len >= 1 && len <= cfg_.max_len, ErrorKind::InvalidArgument, "sequence length out of range");
    for (int k = 0; k < len; ++k) positions.push_back(k);
  }
  require(static_cast<Eigen::Index>(positions.size()) == rows.rows(), ErrorKind::InvalidArgument,
          "sequence lengths do not cover the embedding rows");
  auto x = ag::add(rows, ag::gather_rows(param("text_pos"), positions));
  auto h = ag::gelu(ag::add_row(ag::matmul(x, param("text_w1")), param("text_b1")));
  auto pooled = ag::segment_mean(h, lengths);
  return {ag::add_row(ag::matmul(pooled, param("text_w2")), param("text_b2")), h};
}

Eigen::VectorXd DualEncoder::encode_image_input(const Eigen::MatrixXd& patches) const {
  return round_to_float(image_forward(flatten_rows(patches)).value().row(0).transpose());
}

Eigen::VectorXd DualEncoder::encode_image(const Image& image) const { return encode_image_input(preprocess(image)); }

TokenEmbeddingSequence DualEncoder::embed_tokens(const TokenSequence& seq) const {
  require(static_cast<int>(seq.token_ids.size()) == cfg_.max_len, ErrorKind::InvalidArgument,
          "token sequence is not padded to max_len");
  const auto& table = token_table();
  TokenEmbeddingSequence out{Eigen::MatrixXd(cfg_.max_len, cfg_.d_token), seq.length};
  for (int i = 0; i < cfg_.max_len; ++i) {
    const int id = i < seq.length ? seq.token_ids[static_cast<std::size_t>(i)] : token::kPad;
    require(id >= 0 && id < table.rows(), ErrorKind::InvalidArgument, "token id out of vocabulary range");
    out.vectors.row(i) = table.row(id);
  }
  return out;
}

Eigen::VectorXd DualEncoder::encode_embeddings(const TokenEmbeddingSequence& seq) const {
  require(seq.valid_length >= 1 && seq.valid_length <= seq.vectors.rows(), ErrorKind::InvalidArgument,
          "embedding sequence has an invalid length");
  const int len = seq.valid_length;
  auto rows = ag::constant(seq.vectors.topRows(len));
  return round_to_float(text_forward(rows, std::span<const int>(&len, 1)).embeddings.value().row(0).transpose());
}

Eigen::VectorXd DualEncoder::encode_tokens(const TokenSequence& seq) const { return encode_embeddings(embed_tokens(seq)); }

Eigen::VectorXd DualEncoder::encode_text(std::string_view text) const { return encode_tokens(tokenizer_.tokenize(text)); }

PromptLayout DualEncoder::prompt_layout(PromptTemplate tmpl, std::string_view caption) const {
  const auto& vocab = tokenizer_.vocab();
  PromptLayout layout;
  if (tmpl == PromptTemplate::Train) {
    require(caption.empty(), ErrorKind::InvalidArgument, "train template takes no caption");
    layout.ids = {token::kBos, vocab.id("a"), vocab.id("photo"), vocab.id("of"), token::kPad, token::kEos};
    layout.slot = 4;
    return layout;
  }
  auto words = tokenizer_.encode_words(caption);
  require(!words.empty(), ErrorKind::InvalidArgument, "inference template requires a caption");
  // Caption is truncated first; BOS, "a", S*, "is" and EOS always survive.
  const auto room = static_cast<std::size_t>(cfg_.max_len - 5);
  if (words.size() > room) words.resize(room);
  layout.ids = {token::kBos, vocab.id("a"), token::kPad, vocab.id("is")};
  layout.ids.insert(layout.ids.end(), words.begin(), words.end());
  layout.ids.push_back(token::kEos);
  layout.slot = 2;
  return layout;
}

TokenEmbeddingSequence DualEncoder::inject_pseudo_word(PromptTemplate tmpl, const PseudoWord& pseudo,
                                                       std::string_view caption) const {
  require(pseudo.vector.size() == cfg_.d_token, ErrorKind::InvalidArgument,
          "pseudo-word has dim " + std::to_string(pseudo.vector.size()) + ", token table has " +
              std::to_string(cfg_.d_token));
  require(pseudo.vector.allFinite(), ErrorKind::Numeric, "pseudo-word is not finite");
  const auto layout = prompt_layout(tmpl, caption);
  const auto& table = token_table();
  TokenEmbeddingSequence out{Eigen::MatrixXd(cfg_.max_len, cfg_.d_token), static_cast<int>(layout.ids.size())};
  for (int i = 0; i < cfg_.max_len; ++i) {
    if (i == layout.slot)
      out.vectors.row(i) = pseudo.vector.transpose();
    else
      out.vectors.row(i) = table.row(i < out.valid_length ? layout.ids[static_cast<std::size_t>(i)] : token::kPad);
  }
  return out;
}

TokenEmbeddingSequence DualEncoder::inject_token(PromptTemplate tmpl, int token_id, std::string_view caption) const {
  require(token_id >= 0 && token_id < vocab_size(), ErrorKind::InvalidArgument, "token id out of range");
  return inject_pseudo_word(tmpl, PseudoWord{token_table().row(token_id).transpose()}, caption);
}

ag::Var DualEncoder::prompt_forward(const PromptLayout& layout, const ag::Var& pseudo_rows) const {
  require(pseudo_rows.cols() == cfg_.d_token, ErrorKind::InvalidArgument, "pseudo-word dim mismatch");
  const auto b = static_cast<std::size_t>(pseudo_rows.rows());
  const auto n = layout.ids.size();
  std::vector<int> ids;
  std::vector<int> slots;
  ids.reserve(b * n);
  for (std::size_t s = 0; s < b; ++s) {
    ids.insert(ids.end(), layout.ids.begin(), layout.ids.end());
    slots.push_back(static_cast<int>(s * n) + layout.slot);
  }
  auto rows = ag::scatter_rows(lookup(ids), pseudo_rows, slots);
  std::vector<int> lengths(b, static_cast<int>(n));
  return text_forward(rows, lengths).embeddings;
}

void DualEncoder::save(const std::filesystem::path& path) const {
  json meta = {{"kind", "dual_encoder"},
               {"config", cfg_.to_json()},
               {"vocabulary", tokenizer_.vocab().words()},
               {"fingerprint", to_hex(fingerprint())}};
  write_archive(path, meta, params_, DType::F64);
}

DualEncoder DualEncoder::load(const std::filesystem::path& path) {
  auto a = read_archive(path);
  require(a.meta.value("kind", "") == "dual_encoder", ErrorKind::Parse, path.string() + ": not an encoder archive");
  auto cfg = EncoderConfig::from_json(a.meta.at("config"));
  Vocabulary vocab(a.meta.at("vocabulary").get<std::vector<std::string>>());
  DualEncoder enc(cfg, Tokenizer(std::move(vocab), cfg.max_len));
  load_parameters(enc.params_, a);
  require(to_hex(enc.fingerprint()) == a.meta.value("fingerprint", ""), ErrorKind::FingerprintMismatch,
          path.string() + ": stored fingerprint does not match parameters");
  return enc;
}

}  // namespace w4p
