#pragma once

// Textual inversion network: a small fully connected map from a global image
// embedding to one token-embedding vector (the pseudo-word S*).

#include <filesystem>
#include <optional>
#include <string>

#include <Eigen/Core>

#include "json.hpp"
#include "w4p/autograd.hpp"
#include "w4p/encoder.hpp"
#include "w4p/hash.hpp"
#include "w4p/parameters.hpp"

namespace w4p {

struct TinetConfig {
  int depth = 3;
  int hidden_width = 512;
  int d_in = 512;
  int d_out = 512;
  std::string activation = "gelu";
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TinetConfig from_json(const nlohmann::json& j);
};

class Tinet {
 public:
  // Layers d_in -> hidden x (depth-1) -> d_out, weights and biases drawn
  // from U(-1/sqrt(fan_in), 1/sqrt(fan_in)); GELU between layers, none after
  // the last.
  explicit Tinet(TinetConfig cfg);

  Tinet(Tinet&&) noexcept = default;
  Tinet& operator=(Tinet&&) noexcept = default;
  Tinet(const Tinet&) = delete;
  Tinet& operator=(const Tinet&) = delete;
  Tinet clone() const;

  const TinetConfig& config() const { return cfg_; }
  PseudoWord forward(const Eigen::VectorXd& f_v) const;
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& f_v_rows) const;
  ag::Var forward_graph(const ag::Var& f_v_rows) const;

  ParameterList& parameters() { return params_; }
  const ParameterList& parameters() const { return params_; }
  std::size_t parameter_count() const { return w4p::parameter_count(params_); }
  Fingerprint parameter_hash() const;

  const std::optional<Fingerprint>& encoder_fingerprint() const { return encoder_fp_; }
  void set_encoder_fingerprint(const Fingerprint& fp) { encoder_fp_ = fp; }

  // Free-form creation metadata stored in checkpoints (mode, steps, ...).
  nlohmann::json& metadata() { return metadata_; }
  const nlohmann::json& metadata() const { return metadata_; }

  // Float32 archive; call round_to_float(parameters()) first for an exact
  // round trip.
  void save(const std::filesystem::path& path) const;
  static Tinet load(const std::filesystem::path& path);

 private:
  TinetConfig cfg_;
  ParameterList params_;
  std::optional<Fingerprint> encoder_fp_;
  nlohmann::json metadata_ = nlohmann::json::object();
};

inline Tinet tinet_init(const TinetConfig& cfg) { return Tinet(cfg); }

}  // namespace w4p
