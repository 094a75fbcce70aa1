#pragma once

// Dual-encoder contract and the desk-scale "toy" backend.
//
// Visual path: image -> resize to image_height x image_width -> per-channel
// CLIP normalization -> patch means (P x 3) -> affine map of the flattened
// patch grid to d_embed. A per-patch MLP produces the patch tokens the IRR
// head attends to.
//
// Text path: token-embedding rows (+ learned positions) -> per-token GELU
// layer -> mean over valid rows -> affine map to d_embed. The encoder only
// ever sees embedding rows, so a pseudo-word row is consumed exactly like a
// table lookup.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "w4p/autograd.hpp"
#include "w4p/hash.hpp"
#include "w4p/image.hpp"
#include "w4p/parameters.hpp"
#include "w4p/tokenizer.hpp"

namespace w4p {

struct EncoderConfig {
  std::string backend = "toy";
  int d_embed = 64;
  int d_token = 64;
  int d_hidden = 64;
  int image_height = 384;
  int image_width = 128;
  int patch = 16;
  int max_len = kMaxTokens;
  std::uint64_t seed = 0;

  int num_patches() const { return (image_height / patch) * (image_width / patch); }
  int visual_input_dim() const { return 3 * num_patches(); }
  void validate() const;
  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
};

// max_len x d_token rows; rows at and beyond valid_length hold the PAD
// embedding.
struct TokenEmbeddingSequence {
  Eigen::MatrixXd vectors;
  int valid_length = 0;
};

enum class PromptTemplate { Train, Infer };

// Token ids of a prompt with one slot for the pseudo-word. The id stored at
// `slot` is a placeholder and never looked up.
struct PromptLayout {
  std::vector<int> ids;
  int slot = -1;
};

struct PseudoWord {
  Eigen::VectorXd vector;
};

class DualEncoder {
 public:
  DualEncoder(EncoderConfig cfg, Tokenizer tokenizer);

  DualEncoder(DualEncoder&&) noexcept = default;
  DualEncoder& operator=(DualEncoder&&) noexcept = default;
  DualEncoder(const DualEncoder&) = delete;
  DualEncoder& operator=(const DualEncoder&) = delete;
  DualEncoder clone() const;

  const EncoderConfig& config() const { return cfg_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }
  int embed_dim() const { return cfg_.d_embed; }
  int token_dim() const { return cfg_.d_token; }
  int max_len() const { return cfg_.max_len; }
  int vocab_size() const { return tokenizer_.vocab().size(); }
  const Eigen::MatrixXd& token_table() const;

  // Frozen encoders never build gradient graphs through their parameters.
  bool frozen() const { return frozen_; }
  void set_frozen(bool frozen);

  ParameterList& parameters() { return params_; }
  const ParameterList& parameters() const { return params_; }
  // SHA-256 over backend config, vocabulary and parameter bytes.
  Fingerprint fingerprint() const;

  // Eval-mode encoders; outputs are rounded to float32 so that cached and
  // on-the-fly features are bit-identical.
  Eigen::MatrixXd preprocess(const Image& image) const;
  Eigen::VectorXd encode_image(const Image& image) const;
  Eigen::VectorXd encode_image_input(const Eigen::MatrixXd& patches) const;
  Eigen::VectorXd encode_text(std::string_view text) const;
  Eigen::VectorXd encode_tokens(const TokenSequence& seq) const;
  Eigen::VectorXd encode_embeddings(const TokenEmbeddingSequence& seq) const;
  TokenEmbeddingSequence embed_tokens(const TokenSequence& seq) const;

  PromptLayout prompt_layout(PromptTemplate tmpl, std::string_view caption) const;
  // Train: [BOS a photo of S* EOS]; Infer: [BOS a S* is caption... EOS].
  TokenEmbeddingSequence inject_pseudo_word(PromptTemplate tmpl, const PseudoWord& pseudo,
                                            std::string_view caption) const;
  // Same layout with a vocabulary row in the slot.
  TokenEmbeddingSequence inject_token(PromptTemplate tmpl, int token_id, std::string_view caption) const;

  // Graph API used by training.
  struct TextForward {
    ag::Var embeddings;  // B x d_embed
    ag::Var hidden;      // sum(lengths) x d_hidden, per-token states
  };
  ag::Var lookup(std::span<const int> ids) const;
  TextForward text_forward(const ag::Var& rows, std::span<const int> lengths) const;
  ag::Var image_forward(const Eigen::MatrixXd& flat_inputs) const;  // B x (3P) -> B x d_embed
  ag::Var patch_tokens(const Eigen::MatrixXd& patches) const;        // P x 3 -> P x d_hidden
  // B prompts sharing `layout`, one pseudo-word row each -> B x d_embed.
  ag::Var prompt_forward(const PromptLayout& layout, const ag::Var& pseudo_rows) const;

  void save(const std::filesystem::path& path) const;
  static DualEncoder load(const std::filesystem::path& path);

 private:
  const ag::Var& param(std::string_view name) const { return find_parameter(params_, name); }

  EncoderConfig cfg_;
  Tokenizer tokenizer_;
  ParameterList params_;
  bool frozen_ = false;
};

Eigen::MatrixXd flatten_rows(const Eigen::MatrixXd& patches);
Eigen::VectorXd round_to_float(const Eigen::VectorXd& v);

}  // namespace w4p
