#include "w4p/tinet.hpp"

#include <cmath>

#include "w4p/archive.hpp"
#include "w4p/error.hpp"
#include "w4p/rng.hpp"

namespace w4p {

using nlohmann::json;

void TinetConfig::validate() const {
  require(depth >= 1, ErrorKind::Config, "tinet.depth must be >= 1");
  require(hidden_width > 0 && d_in > 0 && d_out > 0, ErrorKind::Config, "tinet widths must be positive");
  require(activation == "gelu", ErrorKind::Config, "tinet.activation '" + activation + "' unsupported (gelu)");
}

json TinetConfig::to_json() const {
  return {{"depth", depth}, {"hidden_width", hidden_width}, {"d_in", d_in},
          {"d_out", d_out}, {"activation", activation},     {"seed", seed}};
}

TinetConfig TinetConfig::from_json(const json& j) {
  TinetConfig c;
  c.depth = j.value("depth", c.depth);
  c.hidden_width = j.value("hidden_width", c.hidden_width);
  c.d_in = j.value("d_in", c.d_in);
  c.d_out = j.value("d_out", c.d_out);
  c.activation = j.value("activation", c.activation);
  c.seed = j.value("seed", c.seed);
  return c;
}

Tinet::Tinet(TinetConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(derive_seed({cfg_.seed, 0x7146e7}));
  for (int l = 0; l < cfg_.depth; ++l) {
    const int in = l == 0 ? cfg_.d_in : cfg_.hidden_width;
    const int out = l == cfg_.depth - 1 ? cfg_.d_out : cfg_.hidden_width;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Eigen::MatrixXd w(in, out);
    Eigen::MatrixXd b(1, out);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-bound, bound);
    for (Eigen::Index c = 0; c < b.cols(); ++c) b(0, c) = rng.uniform(-bound, bound);
    params_.push_back({"layer" + std::to_string(l) + ".weight", ag::Var(std::move(w), true)});
    params_.push_back({"layer" + std::to_string(l) + ".bias", ag::Var(std::move(b), true)});
  }
}

Tinet Tinet::clone() const {
  Tinet out(cfg_);
  out.params_ = clone_parameters(params_);
  out.encoder_fp_ = encoder_fp_;
  out.metadata_ = metadata_;
  return out;
}

ag::Var Tinet::forward_graph(const ag::Var& x) const {
  require(x.cols() == cfg_.d_in, ErrorKind::InvalidArgument,
          "tinet input has dim " + std::to_string(x.cols()) + ", expected " + std::to_string(cfg_.d_in));
  ag::Var h = x;
  for (int l = 0; l < cfg_.depth; ++l) {
    h = ag::add_row(ag::matmul(h, params_[2 * l].var), params_[2 * l + 1].var);
    if (l + 1 < cfg_.depth) h = ag::gelu(h);
  }
  return h;
}

Eigen::MatrixXd Tinet::forward_batch(const Eigen::MatrixXd& rows) const {
  return forward_graph(ag::constant(rows)).value();
}

PseudoWord Tinet::forward(const Eigen::VectorXd& f_v) const {
  require(f_v.size() == cfg_.d_in, ErrorKind::InvalidArgument,
          "tinet input has dim " + std::to_string(f_v.size()) + ", expected " + std::to_string(cfg_.d_in));
  return PseudoWord{forward_batch(f_v.transpose()).row(0).transpose()};
}

Fingerprint Tinet::parameter_hash() const {
  Sha256 h;
  h.update(cfg_.to_json().dump());
  hash_parameters(h, params_);
  return h.finish();
}

void Tinet::save(const std::filesystem::path& path) const {
  json meta = {{"kind", "tinet"}, {"config", cfg_.to_json()}, {"metadata", metadata_}};
  meta["encoder_fingerprint"] = encoder_fp_ ? json(to_hex(*encoder_fp_)) : json(nullptr);
  write_archive(path, meta, params_, DType::F32);
}

Tinet Tinet::load(const std::filesystem::path& path) {
  auto a = read_archive(path);
  require(a.meta.value("kind", "") == "tinet", ErrorKind::Parse, path.string() + ": not a TINet checkpoint");
  Tinet t(TinetConfig::from_json(a.meta.at("config")));
  load_parameters(t.params_, a);
  if (a.meta.contains("encoder_fingerprint") && a.meta["encoder_fingerprint"].is_string())
    t.encoder_fp_ = fingerprint_from_hex(a.meta["encoder_fingerprint"].get<std::string>());
  t.metadata_ = a.meta.value("metadata", json::object());
  return t;
}

}  // namespace w4p
