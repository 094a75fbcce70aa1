#include "w4p/autograd.hpp"

#include <cmath>
#include <unordered_set>

#include "w4p/error.hpp"

namespace w4p::ag {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

Var make_n(Matrix value, std::span<const Var> inputs, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (const auto& in : inputs) {
    if (in.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward = std::move(fn);
  }
  return Var(std::move(node));
}

Var make(Matrix value, std::initializer_list<Var> inputs, std::function<void(Node&)> fn) {
  return make_n(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

void push(const std::shared_ptr<Node>& parent, const Matrix& g) {
  if (parent->requires_grad) parent->accumulate(g);
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::InvalidArgument,
          std::string(op) + ": shape mismatch");
}

}  // namespace

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Matrix Var::grad() const {
  if (node_->grad.size() == 0) return Matrix::Zero(node_->value.rows(), node_->value.cols());
  return node_->grad;
}

double Var::scalar() const {
  require(node_->value.size() == 1, ErrorKind::InvalidArgument, "scalar(): not a 1x1 value");
  return node_->value(0, 0);
}

void Var::backward() const {
  require(node_->value.size() == 1, ErrorKind::InvalidArgument, "backward(): root must be scalar");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
}

Var constant(Matrix value) { return Var(std::move(value), false); }
Var parameter(Matrix value) { return Var(std::move(value), true); }

Var matmul(const Var& a, const Var& b) {
  require(a.cols() == b.rows(), ErrorKind::InvalidArgument, "matmul: inner dimension mismatch");
  return make(a.value() * b.value(), {a, b}, [](Node& n) {
    const auto& pa = n.parents[0];
    const auto& pb = n.parents[1];
    if (pa->requires_grad) pa->accumulate(n.grad * pb->value.transpose());
    if (pb->requires_grad) pb->accumulate(pa->value.transpose() * n.grad);
  });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return make(a.value() + b.value(), {a, b}, [](Node& n) {
    push(n.parents[0], n.grad);
    push(n.parents[1], n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return make(a.value() - b.value(), {a, b}, [](Node& n) {
    push(n.parents[0], n.grad);
    push(n.parents[1], -n.grad);
  });
}

Var scale(const Var& a, double s) {
  return make(a.value() * s, {a}, [s](Node& n) { push(n.parents[0], n.grad * s); });
}

Var add_row(const Var& a, const Var& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), ErrorKind::InvalidArgument,
          "add_row: expected 1 x cols row");
  Matrix v = a.value().rowwise() + row.value().row(0);
  return make(std::move(v), {a, row}, [](Node& n) {
    push(n.parents[0], n.grad);
    if (n.parents[1]->requires_grad) n.parents[1]->accumulate(n.grad.colwise().sum());
  });
}

Var gelu(const Var& a) {
  Matrix v = a.value().unaryExpr([](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); });
  return make(std::move(v), {a}, [](Node& n) {
    const Matrix& x = n.parents[0]->value;
    Matrix d = x.unaryExpr([](double t) {
      return 0.5 * (1.0 + std::erf(t * kInvSqrt2)) + t * kInvSqrt2Pi * std::exp(-0.5 * t * t);
    });
    push(n.parents[0], n.grad.cwiseProduct(d));
  });
}

Var transpose(const Var& a) {
  return make(a.value().transpose(), {a}, [](Node& n) { push(n.parents[0], n.grad.transpose()); });
}

Var softmax_rows(const Var& a) {
  Matrix v = a.value();
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double m = v.row(r).maxCoeff();
    v.row(r) = (v.row(r).array() - m).exp().matrix();
    v.row(r) /= v.row(r).sum();
  }
  return make(v, {a}, [v](Node& n) {
    Matrix g = n.grad.cwiseProduct(v);
    Eigen::VectorXd s = g.rowwise().sum();
    g -= v.array().colwise().operator*(s.array()).matrix();
    push(n.parents[0], g);
  });
}

Var slice_rows(const Var& a, Eigen::Index begin, Eigen::Index count) {
  require(begin >= 0 && count >= 0 && begin + count <= a.rows(), ErrorKind::InvalidArgument,
          "slice_rows: range out of bounds");
  const Eigen::Index rows = a.rows();
  return make(a.value().middleRows(begin, count), {a}, [begin, count, rows](Node& n) {
    Matrix g = Matrix::Zero(rows, n.grad.cols());
    g.middleRows(begin, count) = n.grad;
    push(n.parents[0], g);
  });
}

Var gather_rows(const Var& table, std::span<const int> indices) {
  Matrix v(static_cast<Eigen::Index>(indices.size()), table.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] >= 0 && indices[i] < table.rows(), ErrorKind::InvalidArgument,
            "gather_rows: index out of range");
    v.row(static_cast<Eigen::Index>(i)) = table.value().row(indices[i]);
  }
  std::vector<int> idx(indices.begin(), indices.end());
  return make(std::move(v), {table}, [idx = std::move(idx)](Node& n) {
    const auto& p = n.parents[0];
    Matrix g = Matrix::Zero(p->value.rows(), p->value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += n.grad.row(static_cast<Eigen::Index>(i));
    p->accumulate(g);
  });
}

Var scatter_rows(const Var& base, const Var& src, std::span<const int> positions) {
  require(static_cast<Eigen::Index>(positions.size()) == src.rows() && src.cols() == base.cols(),
          ErrorKind::InvalidArgument, "scatter_rows: shape mismatch");
  Matrix v = base.value();
  for (std::size_t k = 0; k < positions.size(); ++k) {
    require(positions[k] >= 0 && positions[k] < base.rows(), ErrorKind::InvalidArgument,
            "scatter_rows: position out of range");
    v.row(positions[k]) = src.value().row(static_cast<Eigen::Index>(k));
  }
  std::vector<int> pos(positions.begin(), positions.end());
  return make(std::move(v), {base, src}, [pos = std::move(pos)](Node& n) {
    if (n.parents[0]->requires_grad) {
      Matrix g = n.grad;
      for (int p : pos) g.row(p).setZero();
      n.parents[0]->accumulate(g);
    }
    if (n.parents[1]->requires_grad) {
      Matrix g(static_cast<Eigen::Index>(pos.size()), n.grad.cols());
      for (std::size_t k = 0; k < pos.size(); ++k) g.row(static_cast<Eigen::Index>(k)) = n.grad.row(pos[k]);
      n.parents[1]->accumulate(g);
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), ErrorKind::InvalidArgument, "concat_rows: no inputs");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  std::vector<Eigen::Index> offsets;
  for (const auto& p : parts) {
    require(p.cols() == cols, ErrorKind::InvalidArgument, "concat_rows: column mismatch");
    offsets.push_back(rows);
    rows += p.rows();
  }
  Matrix v(rows, cols);
  for (std::size_t i = 0; i < parts.size(); ++i) v.middleRows(offsets[i], parts[i].rows()) = parts[i].value();
  return make_n(std::move(v), parts, [offsets](Node& n) {
    for (std::size_t i = 0; i < n.parents.size(); ++i) {
      const auto& p = n.parents[i];
      if (p->requires_grad) p->accumulate(n.grad.middleRows(offsets[i], p->value.rows()));
    }
  });
}

Var segment_mean(const Var& a, std::span<const int> lengths) {
  Eigen::Index total = 0;
  for (int len : lengths) {
    require(len > 0, ErrorKind::InvalidArgument, "segment_mean: empty segment");
    total += len;
  }
  require(total == a.rows(), ErrorKind::InvalidArgument, "segment_mean: lengths do not cover rows");
  Matrix v(static_cast<Eigen::Index>(lengths.size()), a.cols());
  Eigen::Index off = 0;
  for (std::size_t s = 0; s < lengths.size(); ++s) {
    v.row(static_cast<Eigen::Index>(s)) = a.value().middleRows(off, lengths[s]).colwise().mean();
    off += lengths[s];
  }
  std::vector<int> lens(lengths.begin(), lengths.end());
  return make(std::move(v), {a}, [lens = std::move(lens)](Node& n) {
    const auto& p = n.parents[0];
    Matrix g(p->value.rows(), p->value.cols());
    Eigen::Index off = 0;
    for (std::size_t s = 0; s < lens.size(); ++s) {
      const Eigen::RowVectorXd r = n.grad.row(static_cast<Eigen::Index>(s)) / static_cast<double>(lens[s]);
      for (int k = 0; k < lens[s]; ++k) g.row(off + k) = r;
      off += lens[s];
    }
    p->accumulate(g);
  });
}

Var mean_rows(const Var& a) {
  const int len = static_cast<int>(a.rows());
  return segment_mean(a, std::span<const int>(&len, 1));
}

Var sum_scalars(std::span<const Var> parts) {
  double total = 0.0;
  for (const auto& p : parts) total += p.scalar();
  return make_n(Matrix::Constant(1, 1, total), parts, [](Node& n) {
    for (const auto& p : n.parents) push(p, n.grad);
  });
}

Var custom_scalar(std::span<const Var> inputs, double value, std::vector<Matrix> grads) {
  require(grads.size() == inputs.size(), ErrorKind::InvalidArgument, "custom_scalar: one gradient per input");
  return make_n(Matrix::Constant(1, 1, value), inputs, [grads = std::move(grads)](Node& n) {
    const double g = n.grad(0, 0);
    for (std::size_t i = 0; i < n.parents.size(); ++i) {
      if (n.parents[i]->requires_grad && grads[i].size() != 0) n.parents[i]->accumulate(grads[i] * g);
    }
  });
}

}  // namespace w4p::ag
