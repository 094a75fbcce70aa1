#pragma once

// Minimal reverse-mode differentiation over dense double matrices. Enough
// to train the desk-scale encoders, the IRR head and TINets; the losses plug
// in through custom_scalar() with their closed-form gradients.

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace w4p::ag {

using Matrix = Eigen::MatrixXd;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Matrix& g) {
    if (grad.size() == 0)
      grad = g;
    else
      grad += g;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  // Zero matrix of the value's shape when nothing flowed back.
  Matrix grad() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double scalar() const;

  // Root must be 1x1; seeds d(root)/d(root) = 1.
  void backward() const;

  const std::shared_ptr<Node>& node() const { return node_; }

  // Leaf management for trainable parameters.
  Matrix& mutable_value() { return node_->value; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad.resize(0, 0); }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Matrix value);
Var parameter(Matrix value);

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// a (r x c) + row (1 x c) broadcast over rows.
Var add_row(const Var& a, const Var& row);
Var gelu(const Var& a);
Var transpose(const Var& a);
Var softmax_rows(const Var& a);
Var slice_rows(const Var& a, Eigen::Index begin, Eigen::Index count);
Var gather_rows(const Var& table, std::span<const int> indices);
// Copy of base with rows at `positions` replaced by the rows of src.
Var scatter_rows(const Var& base, const Var& src, std::span<const int> positions);
Var concat_rows(std::span<const Var> parts);
// Output row s is the mean of the s-th consecutive segment of a's rows.
Var segment_mean(const Var& a, std::span<const int> lengths);
Var mean_rows(const Var& a);
Var sum_scalars(std::span<const Var> parts);

// Scalar node whose gradients w.r.t. `inputs` are supplied by the caller.
Var custom_scalar(std::span<const Var> inputs, double value, std::vector<Matrix> grads);

}  // namespace w4p::ag
