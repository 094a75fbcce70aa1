#pragma once

// Independent scalar re-implementations used as test oracles. These loop
// over plain nested vectors and never call into the library's loss code.

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "w4p/rng.hpp"

namespace oracle {

using Rows = std::vector<std::vector<double>>;

inline Rows to_rows(const Eigen::MatrixXd& m) {
  Rows r(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) r[i][j] = m(i, j);
  return r;
}

inline double cosine(const std::vector<double>& u, const std::vector<double>& v) {
  double uv = 0, uu = 0, vv = 0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    uv += u[k] * v[k];
    uu += u[k] * u[k];
    vv += v[k] * v[k];
  }
  return uv / (std::sqrt(uu) * std::sqrt(vv));
}

// p_ij = exp(sim_ij / tau) / sum_h exp(sim_ih / tau), evaluated naively.
inline Rows matching_probabilities(const Rows& a, const Rows& b, double tau) {
  Rows p(a.size(), std::vector<double>(b.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    double z = 0;
    for (std::size_t h = 0; h < b.size(); ++h) z += std::exp(cosine(a[i], b[h]) / tau);
    for (std::size_t j = 0; j < b.size(); ++j) p[i][j] = std::exp(cosine(a[i], b[j]) / tau) / z;
  }
  return p;
}

// (1/N) sum_i sum_j p_ij log(p_ij / (q_ij + eps)), q_ij = l_ij / sum_k l_ik.
inline double matching_direction(const Rows& a, const Rows& b, const std::vector<std::string>& ids_a,
                                 const std::vector<std::string>& ids_b, double tau, double eps) {
  const Rows p = matching_probabilities(a, b, tau);
  double total = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double positives = 0;
    for (std::size_t k = 0; k < b.size(); ++k) positives += ids_a[i] == ids_b[k] ? 1.0 : 0.0;
    for (std::size_t j = 0; j < b.size(); ++j) {
      const double q = (ids_a[i] == ids_b[j] ? 1.0 : 0.0) / positives;
      if (p[i][j] > 0) total += p[i][j] * std::log(p[i][j] / (q + eps));
    }
  }
  return total / static_cast<double>(a.size());
}

inline double cmpm(const Rows& v, const Rows& t, const std::vector<std::string>& ids, double tau, double eps) {
  return matching_direction(v, t, ids, ids, tau, eps) + matching_direction(t, v, ids, ids, tau, eps);
}

inline double itc(const Rows& v, const Rows& t, double tau) {
  const std::size_t n = v.size();
  double i2t = 0, t2i = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double zr = 0, zc = 0;
    for (std::size_t j = 0; j < n; ++j) {
      zr += std::exp(cosine(v[i], t[j]) / tau);
      zc += std::exp(cosine(v[j], t[i]) / tau);
    }
    i2t -= std::log(std::exp(cosine(v[i], t[i]) / tau) / zr);
    t2i -= std::log(std::exp(cosine(v[i], t[i]) / tau) / zc);
  }
  return 0.5 * (i2t / n + t2i / n);
}

// -(1/(|M| |V|)) sum_i sum_j y_ij log softmax(m_i)_j with one-hot y.
inline double irr(const Rows& logits, const std::vector<int>& targets, bool vocab_norm = true) {
  double total = 0;
  const double vocab = static_cast<double>(logits[0].size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    double z = 0;
    for (double m : logits[i]) z += std::exp(m);
    for (std::size_t j = 0; j < logits[i].size(); ++j) {
      const double y = static_cast<int>(j) == targets[i] ? 1.0 : 0.0;
      total += y * std::log(std::exp(logits[i][j]) / z);
    }
  }
  const double m = static_cast<double>(logits.size());
  return -total / (vocab_norm ? m * vocab : m);
}

inline double cross_entropy_mean(const Rows& logits, const std::vector<int>& targets) {
  double total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    double z = 0;
    for (double m : logits[i]) z += std::exp(m);
    total -= std::log(std::exp(logits[i][static_cast<std::size_t>(targets[i])]) / z);
  }
  return total / static_cast<double>(logits.size());
}

inline double id_loss(const Rows& lv, const Rows& lt, const std::vector<int>& ids) {
  return 0.5 * (cross_entropy_mean(lv, ids) + cross_entropy_mean(lt, ids));
}

// Central differences of f at x, step h.
inline Eigen::MatrixXd numeric_gradient(const std::function<double(const Eigen::MatrixXd&)>& f,
                                        const Eigen::MatrixXd& x, double h = 1e-4) {
  Eigen::MatrixXd g(x.rows(), x.cols());
  Eigen::MatrixXd probe = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      probe(i, j) = x(i, j) + h;
      const double up = f(probe);
      probe(i, j) = x(i, j) - h;
      const double down = f(probe);
      probe(i, j) = x(i, j);
      g(i, j) = (up - down) / (2 * h);
    }
  }
  return g;
}

// Norm-wise relative error between an analytic and a numeric gradient.
inline double relative_error(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& numeric) {
  const double scale = std::max({analytic.norm(), numeric.norm(), 1e-12});
  return (analytic - numeric).norm() / scale;
}

inline Eigen::MatrixXd random_matrix(w4p::Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0, stddev);
  return m;
}

inline std::vector<std::string> random_identities(w4p::Rng& rng, std::size_t n, std::size_t num_ids) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("id" + std::to_string(rng.below(num_ids)));
  return out;
}

// AP over a full ranking, counted the long way: precision at each relevant
// position, averaged over the ground-truth set.
inline double average_precision(const std::vector<std::string>& ranking, const std::set<std::string>& gt) {
  double sum = 0;
  for (std::size_t r = 0; r < ranking.size(); ++r) {
    if (!gt.count(ranking[r])) continue;
    std::size_t hits = 0;
    for (std::size_t s = 0; s <= r; ++s) hits += gt.count(ranking[s]);
    sum += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  return sum / static_cast<double>(gt.size());
}

inline bool rank_k_hit(const std::vector<std::string>& ranking, const std::set<std::string>& gt, std::size_t k) {
  for (std::size_t r = 0; r < ranking.size(); ++r)
    for (const auto& g : gt)
      if (ranking[r] == g && r < k) return true;
  return false;
}

}  // namespace oracle
