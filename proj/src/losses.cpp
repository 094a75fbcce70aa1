#include "w4p/losses.hpp"

#include <cmath>
#include <limits>

#include "w4p/error.hpp"

namespace w4p {

namespace {

struct Normalized {
  MatrixXd unit;
  Eigen::VectorXd norms;
};

Normalized normalize_rows(const MatrixXd& f) {
  Normalized out{f, f.rowwise().norm()};
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    require(out.norms(i) > 0.0 && std::isfinite(out.norms(i)), ErrorKind::Numeric,
            "cosine similarity undefined: zero-norm or non-finite row " + std::to_string(i));
    out.unit.row(i) /= out.norms(i);
  }
  return out;
}

// Backward through row normalization: d/da of f(a/|a|).
MatrixXd unnormalize_grad(const MatrixXd& grad_unit, const Normalized& n) {
  MatrixXd g(grad_unit.rows(), grad_unit.cols());
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    const double radial = grad_unit.row(i).dot(n.unit.row(i));
    g.row(i) = (grad_unit.row(i) - radial * n.unit.row(i)) / n.norms(i);
  }
  return g;
}

MatrixXd log_softmax_rows(const MatrixXd& s) {
  MatrixXd out(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double m = s.row(i).maxCoeff();
    const double lse = m + std::log((s.row(i).array() - m).exp().sum());
    out.row(i) = s.row(i).array() - lse;
  }
  return out;
}

void check_pair(const MatrixXd& a, const MatrixXd& b, const char* what) {
  require(a.rows() >= 1 && b.rows() >= 1, ErrorKind::InvalidArgument, std::string(what) + ": empty batch");
  require(a.cols() == b.cols(), ErrorKind::InvalidArgument, std::string(what) + ": embedding dims differ");
  require(a.allFinite() && b.allFinite(), ErrorKind::Numeric, std::string(what) + ": non-finite embeddings");
}

MatrixXd row_normalize_labels(const MatrixXd& l) {
  MatrixXd q = l;
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    const double s = l.row(i).sum();
    require(s > 0.0, ErrorKind::InvalidArgument, "match labels: row " + std::to_string(i) + " has no positive");
    q.row(i) /= s;
  }
  return q;
}

// Cross entropy of each logits row against an integer target, mean over rows
// scaled by 1/denominator; grad is (softmax - onehot)/denominator.
double cross_entropy(const MatrixXd& logits, const std::vector<int>& targets, double denominator, MatrixXd& grad) {
  const MatrixXd logp = log_softmax_rows(logits);
  grad = logp.array().exp().matrix();
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    require(t >= 0 && t < logits.cols(), ErrorKind::InvalidArgument,
            "target " + std::to_string(t) + " out of range [0, " + std::to_string(logits.cols()) + ")");
    total -= logp(i, t);
    grad(i, t) -= 1.0;
  }
  grad /= denominator;
  return total / denominator;
}

}  // namespace

void LossConfig::validate() const {
  require(tau > 0.0 && std::isfinite(tau), ErrorKind::InvalidArgument, "tau must be positive");
  require(epsilon > 0.0 && epsilon < 1e-4, ErrorKind::InvalidArgument, "epsilon must lie in (0, 1e-4)");
}

MatrixXd matching_probabilities(const MatrixXd& f_a, const MatrixXd& f_b, double tau) {
  check_pair(f_a, f_b, "matching_probabilities");
  require(tau > 0.0, ErrorKind::InvalidArgument, "tau must be positive");
  const auto a = normalize_rows(f_a);
  const auto b = normalize_rows(f_b);
  return log_softmax_rows(a.unit * b.unit.transpose() / tau).array().exp().matrix();
}

PairLoss cmpm_direction(const MatrixXd& f_a, const MatrixXd& f_b, const MatrixXd& true_match, const LossConfig& cfg) {
  cfg.validate();
  check_pair(f_a, f_b, "cmpm");
  require(true_match.rows() == f_a.rows() && true_match.cols() == f_b.rows(), ErrorKind::InvalidArgument,
          "cmpm: label matrix shape does not match batch");
  const auto a = normalize_rows(f_a);
  const auto b = normalize_rows(f_b);
  const double n = static_cast<double>(f_a.rows());

  const MatrixXd logp = log_softmax_rows(a.unit * b.unit.transpose() / cfg.tau);
  const MatrixXd p = logp.array().exp().matrix();
  const MatrixXd c = logp.array() - (true_match.array() + cfg.epsilon).log();

  PairLoss out;
  out.value = p.cwiseProduct(c).sum() / n;

  // dL/ds_ik = p_ik (c_ik - sum_j p_ij c_ij) / N, s = sim / tau.
  const Eigen::VectorXd expected = p.cwiseProduct(c).rowwise().sum();
  MatrixXd g_sim = p.cwiseProduct(c.colwise() - expected) / (n * cfg.tau);
  out.grad_a = unnormalize_grad(g_sim * b.unit, a);
  out.grad_b = unnormalize_grad(g_sim.transpose() * a.unit, b);
  return out;
}

PairLoss cmpm_loss(const MatrixXd& f_v, const MatrixXd& f_t, const MatrixXd& labels, const LossConfig& cfg) {
  const MatrixXd q_vt = row_normalize_labels(labels);
  const MatrixXd q_tv = row_normalize_labels(labels.transpose());
  auto i2t = cmpm_direction(f_v, f_t, q_vt, cfg);
  auto t2i = cmpm_direction(f_t, f_v, q_tv, cfg);
  return {i2t.value + t2i.value, i2t.grad_a + t2i.grad_b, i2t.grad_b + t2i.grad_a};
}

PairLoss cmpm_loss(const EmbeddingBatch& batch, const MatchLabelMatrix& labels, const LossConfig& cfg) {
  require(batch.f_v.has_value() && batch.f_t.has_value(), ErrorKind::InvalidArgument,
          "cmpm_loss: image and text embeddings required");
  return cmpm_loss(*batch.f_v, *batch.f_t, labels.labels, cfg);
}

PairLoss itc_loss(const MatrixXd& f_v, const MatrixXd& f_t, const LossConfig& cfg) {
  cfg.validate();
  check_pair(f_v, f_t, "itc");
  require(f_v.rows() == f_t.rows(), ErrorKind::InvalidArgument, "itc: image and text batch sizes differ");
  const auto a = normalize_rows(f_v);
  const auto b = normalize_rows(f_t);
  const Eigen::Index n = f_v.rows();
  const MatrixXd s = a.unit * b.unit.transpose() / cfg.tau;
  std::vector<int> diag(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) diag[static_cast<std::size_t>(i)] = static_cast<int>(i);

  MatrixXd g_rows, g_cols;
  const double l_i2t = cross_entropy(s, diag, static_cast<double>(n), g_rows);
  const double l_t2i = cross_entropy(s.transpose(), diag, static_cast<double>(n), g_cols);
  MatrixXd g_sim = 0.5 * (g_rows + g_cols.transpose()) / cfg.tau;

  PairLoss out;
  out.value = 0.5 * (l_i2t + l_t2i);
  out.grad_a = unnormalize_grad(g_sim * b.unit, a);
  out.grad_b = unnormalize_grad(g_sim.transpose() * a.unit, b);
  return out;
}

PairLoss itc_loss(const EmbeddingBatch& batch, const LossConfig& cfg) {
  require(batch.f_v.has_value() && batch.f_t.has_value(), ErrorKind::InvalidArgument,
          "itc_loss: image and text embeddings required");
  return itc_loss(*batch.f_v, *batch.f_t, cfg);
}

IrrLoss irr_loss(const MaskedPrediction& pred, IrrNorm norm) {
  require(pred.logits.rows() >= 1, ErrorKind::InvalidArgument, "irr_loss: no masked positions");
  require(static_cast<Eigen::Index>(pred.targets.size()) == pred.logits.rows(), ErrorKind::InvalidArgument,
          "irr_loss: one target per masked position required");
  const double m = static_cast<double>(pred.logits.rows());
  const double v = static_cast<double>(pred.logits.cols());
  IrrLoss out;
  out.value = cross_entropy(pred.logits, pred.targets, norm == IrrNorm::Vocab ? m * v : m, out.grad_logits);
  return out;
}

PairLoss id_loss(const MatrixXd& logits_v, const MatrixXd& logits_t, const std::vector<int>& class_ids) {
  require(logits_v.rows() == logits_t.rows() && logits_v.cols() == logits_t.cols(), ErrorKind::InvalidArgument,
          "id_loss: logits shapes differ");
  require(static_cast<Eigen::Index>(class_ids.size()) == logits_v.rows() && !class_ids.empty(),
          ErrorKind::InvalidArgument, "id_loss: one class id per row required");
  const double denom = 2.0 * static_cast<double>(logits_v.rows());
  PairLoss out;
  out.value = cross_entropy(logits_v, class_ids, denom, out.grad_a);
  out.value += cross_entropy(logits_t, class_ids, denom, out.grad_b);
  return out;
}

std::string to_string(TinetMode mode) { return mode == TinetMode::Vis ? "Vis" : "Text"; }

TinetMode tinet_mode_from_string(const std::string& s) {
  if (s == "Vis" || s == "vis") return TinetMode::Vis;
  if (s == "Text" || s == "text") return TinetMode::Text;
  fail(ErrorKind::InvalidArgument, "unknown TINet mode '" + s + "' (expected Vis or Text)");
}

PairLoss tinet_losses(const EmbeddingBatch& batch, const MatchLabelMatrix& labels, const LossConfig& cfg,
                      TinetMode mode) {
  require(batch.f_c.has_value(), ErrorKind::InvalidArgument, "tinet_losses: textual inversion embeddings required");
  const auto& anchor = mode == TinetMode::Vis ? batch.f_v : batch.f_t;
  require(anchor.has_value(), ErrorKind::InvalidArgument,
          mode == TinetMode::Vis ? "tinet_losses(Vis): image embeddings required"
                                 : "tinet_losses(Text): text embeddings required");
  // Both L_Vis and L_Text are the bidirectional matching loss with f_c in
  // place of one side.
  return cmpm_loss(*anchor, *batch.f_c, labels.labels, cfg);
}

double stage1_objective(double irr, double cmpm, double id) {
  require(std::isfinite(irr) && std::isfinite(cmpm) && std::isfinite(id), ErrorKind::Numeric,
          "stage-1 objective: non-finite component");
  return irr + cmpm + id;
}

ag::Var cmpm_node(const ag::Var& f_a, const ag::Var& f_b, const MatchLabelMatrix& labels, const LossConfig& cfg) {
  auto r = cmpm_loss(f_a.value(), f_b.value(), labels.labels, cfg);
  const ag::Var in[] = {f_a, f_b};
  return ag::custom_scalar(in, r.value, {std::move(r.grad_a), std::move(r.grad_b)});
}

ag::Var itc_node(const ag::Var& f_a, const ag::Var& f_b, const LossConfig& cfg) {
  auto r = itc_loss(f_a.value(), f_b.value(), cfg);
  const ag::Var in[] = {f_a, f_b};
  return ag::custom_scalar(in, r.value, {std::move(r.grad_a), std::move(r.grad_b)});
}

ag::Var irr_node(const ag::Var& logits, const std::vector<int>& targets, IrrNorm norm) {
  auto r = irr_loss(MaskedPrediction{logits.value(), targets}, norm);
  const ag::Var in[] = {logits};
  return ag::custom_scalar(in, r.value, {std::move(r.grad_logits)});
}

ag::Var id_node(const ag::Var& logits_v, const ag::Var& logits_t, const std::vector<int>& class_ids) {
  auto r = id_loss(logits_v.value(), logits_t.value(), class_ids);
  const ag::Var in[] = {logits_v, logits_t};
  return ag::custom_scalar(in, r.value, {std::move(r.grad_a), std::move(r.grad_b)});
}

}  // namespace w4p
