#pragma once

// Training objectives for both stages. Each loss returns its value together
// with closed-form gradients w.r.t. every input matrix; the *_node variants
// wrap them as autograd scalars.

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "w4p/autograd.hpp"
#include "w4p/match_labels.hpp"

namespace w4p {

using Eigen::MatrixXd;

struct LossConfig {
  double tau = 0.02;
  double epsilon = 1e-8;

  void validate() const;
};

// Aligned global embeddings of one mini-batch.
struct EmbeddingBatch {
  std::optional<MatrixXd> f_v;  // images
  std::optional<MatrixXd> f_t;  // texts
  std::optional<MatrixXd> f_c;  // textual inversions
  std::vector<std::string> identity_ids;
};

struct PairLoss {
  double value = 0.0;
  MatrixXd grad_a;
  MatrixXd grad_b;
};

// Row-stochastic softmax over cosine similarities divided by tau.
MatrixXd matching_probabilities(const MatrixXd& f_a, const MatrixXd& f_b, double tau);

// One direction of the projection-matching objective:
// (1/N) sum_i sum_j p_ij log(p_ij / (q_ij + eps)), p from f_a against f_b.
PairLoss cmpm_direction(const MatrixXd& f_a, const MatrixXd& f_b, const MatrixXd& true_match, const LossConfig& cfg);

// Image-to-text plus text-to-image matching loss.
PairLoss cmpm_loss(const MatrixXd& f_v, const MatrixXd& f_t, const MatrixXd& labels, const LossConfig& cfg);
PairLoss cmpm_loss(const EmbeddingBatch& batch, const MatchLabelMatrix& labels, const LossConfig& cfg);

// Symmetric InfoNCE with diagonal positives, averaged over both directions.
PairLoss itc_loss(const MatrixXd& f_v, const MatrixXd& f_t, const LossConfig& cfg);
PairLoss itc_loss(const EmbeddingBatch& batch, const LossConfig& cfg);

enum class IrrNorm { Vocab, MaskedOnly };

struct MaskedPrediction {
  MatrixXd logits;           // |M| x |V|
  std::vector<int> targets;  // one target vocabulary index per masked position
};

struct IrrLoss {
  double value = 0.0;
  MatrixXd grad_logits;
};

// Masked-token cross entropy. Vocab normalization divides by |M|*|V|,
// MaskedOnly by |M|.
IrrLoss irr_loss(const MaskedPrediction& pred, IrrNorm norm = IrrNorm::Vocab);

// Mean identity cross entropy over both modalities through a shared head.
PairLoss id_loss(const MatrixXd& logits_v, const MatrixXd& logits_t, const std::vector<int>& class_ids);

enum class TinetMode { Vis, Text };

std::string to_string(TinetMode mode);
TinetMode tinet_mode_from_string(const std::string& s);

// L_Vis = L_i2c + L_c2i, L_Text = L_t2c + L_c2t. grad_a is w.r.t. the
// anchor (f_v or f_t), grad_b w.r.t. f_c.
PairLoss tinet_losses(const EmbeddingBatch& batch, const MatchLabelMatrix& labels, const LossConfig& cfg,
                      TinetMode mode);

// L = L_irr + L_cmpm + L_id; throws ErrorKind::Numeric on non-finite parts.
double stage1_objective(double irr, double cmpm, double id);

ag::Var cmpm_node(const ag::Var& f_a, const ag::Var& f_b, const MatchLabelMatrix& labels, const LossConfig& cfg);
ag::Var itc_node(const ag::Var& f_a, const ag::Var& f_b, const LossConfig& cfg);
ag::Var irr_node(const ag::Var& logits, const std::vector<int>& targets, IrrNorm norm);
ag::Var id_node(const ag::Var& logits_v, const ag::Var& logits_t, const std::vector<int>& class_ids);

}  // namespace w4p
