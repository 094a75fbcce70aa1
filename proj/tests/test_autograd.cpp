#include "doctest.h"
#include "oracles.hpp"
#include "w4p/autograd.hpp"
#include "w4p/error.hpp"

using namespace w4p;
using Eigen::MatrixXd;

namespace {

// Scalar readout sum(W .* out) so every output element gets a distinct weight.
double readout(const MatrixXd& out, const MatrixXd& w) { return out.cwiseProduct(w).sum(); }

ag::Var readout_var(const ag::Var& out, const MatrixXd& w) {
  return ag::custom_scalar(std::vector<ag::Var>{out}, readout(out.value(), w), {w});
}

void check_op(const std::function<ag::Var(const ag::Var&)>& op, const MatrixXd& x, std::uint64_t seed) {
  Rng rng(seed);
  const MatrixXd probe = op(ag::constant(x)).value();
  const MatrixXd w = oracle::random_matrix(rng, probe.rows(), probe.cols());
  ag::Var in = ag::parameter(x);
  readout_var(op(in), w).backward();
  const MatrixXd numeric =
      oracle::numeric_gradient([&](const MatrixXd& m) { return readout(op(ag::constant(m)).value(), w); }, x);
  CHECK(oracle::relative_error(in.grad(), numeric) <= 1e-6);
}

}  // namespace

TEST_CASE("elementwise and shape ops match finite differences") {
  Rng rng(1);
  const MatrixXd x = oracle::random_matrix(rng, 5, 4);
  const MatrixXd b = oracle::random_matrix(rng, 4, 3);
  const MatrixXd row = oracle::random_matrix(rng, 1, 4);
  check_op([&](const ag::Var& v) { return ag::matmul(v, ag::constant(b)); }, x, 2);
  check_op([&](const ag::Var& v) { return ag::matmul(ag::constant(b.transpose()), ag::transpose(v)); }, x, 3);
  check_op([&](const ag::Var& v) { return ag::gelu(v); }, x, 4);
  check_op([&](const ag::Var& v) { return ag::softmax_rows(v); }, x, 5);
  check_op([&](const ag::Var& v) { return ag::add_row(v, ag::constant(row)); }, x, 6);
  check_op([&](const ag::Var& v) { return ag::add_row(ag::constant(x), v); }, row, 6);
  check_op([&](const ag::Var& v) { return ag::slice_rows(v, 1, 3); }, x, 7);
  const int lens[] = {2, 3};
  check_op([&](const ag::Var& v) { return ag::segment_mean(v, lens); }, x, 8);
  const int idx[] = {4, 0, 4, 2};
  check_op([&](const ag::Var& v) { return ag::gather_rows(v, idx); }, x, 9);
  const int pos[] = {1, 3};
  const MatrixXd src = oracle::random_matrix(rng, 2, 4);
  check_op([&](const ag::Var& v) { return ag::scatter_rows(v, ag::constant(src), pos); }, x, 10);
  check_op([&](const ag::Var& v) { return ag::scatter_rows(ag::constant(x), v, pos); }, src, 11);
  check_op([&](const ag::Var& v) { return ag::concat_rows(std::vector<ag::Var>{v, ag::scale(v, 2.0)}); }, x, 12);
}

TEST_CASE("gradient accumulates across shared subexpressions") {
  ag::Var x = ag::parameter(MatrixXd::Constant(1, 1, 3.0));
  auto y = ag::add(ag::matmul(x, x), x);  // x^2 + x
  y.backward();
  CHECK(x.grad()(0, 0) == doctest::Approx(7.0));
}

TEST_CASE("constants build no graph") {
  auto a = ag::constant(MatrixXd::Ones(2, 2));
  auto b = ag::gelu(ag::matmul(a, a));
  CHECK_FALSE(b.requires_grad());
  CHECK(b.node()->parents.empty());
}

TEST_CASE("shape errors are reported") {
  auto a = ag::constant(MatrixXd::Ones(2, 3));
  CHECK_THROWS_AS(ag::matmul(a, a), Error);
  CHECK_THROWS_AS(ag::add(a, ag::constant(MatrixXd::Ones(3, 2))), Error);
  const int lens[] = {1, 2};
  CHECK_THROWS_AS(ag::segment_mean(a, lens), Error);
}
