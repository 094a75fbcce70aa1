#include <filesystem>

#include "doctest.h"
#include "oracles.hpp"
#include "w4p/error.hpp"
#include "w4p/tinet.hpp"

using namespace w4p;
using Eigen::MatrixXd;

namespace {

TinetConfig small(int depth, std::uint64_t seed = 0) {
  TinetConfig c;
  c.depth = depth;
  c.hidden_width = 7;
  c.d_in = 5;
  c.d_out = 4;
  c.seed = seed;
  return c;
}

// Scalar probe of the forward map: sum of w .* f_M(x).
double probe(const Tinet& net, const MatrixXd& x, const MatrixXd& w) {
  return (net.forward_batch(x).array() * w.array()).sum();
}

}  // namespace

TEST_CASE("layer shapes and parameter count") {
  for (int depth : {1, 2, 3, 4}) {
    Tinet net(small(depth));
    const std::size_t hidden_layers = static_cast<std::size_t>(depth - 1);
    const std::size_t want = depth == 1 ? 5 * 4 + 4 : (5 * 7 + 7) + (hidden_layers - 1) * (7 * 7 + 7) + (7 * 4 + 4);
    CHECK(net.parameter_count() == want);
    CHECK(net.forward(Eigen::VectorXd::Ones(5)).vector.size() == 4);
  }
  CHECK_THROWS_AS(Tinet(small(0)), Error);
  CHECK_THROWS_AS(Tinet(small(2)).forward(Eigen::VectorXd::Ones(3)), Error);
}

TEST_CASE("initialization is seeded and bounded by 1/sqrt(fan_in)") {
  Tinet a(small(3, 9)), b(small(3, 9)), c(small(3, 10));
  CHECK(a.parameter_hash() == b.parameter_hash());
  CHECK(a.parameter_hash() != c.parameter_hash());
  for (const auto& p : a.parameters()) {
    const double fan_in = p.var.rows() == 1 ? -1 : static_cast<double>(p.var.rows());
    if (fan_in > 0) CHECK(p.var.value().cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(fan_in));
  }
}

TEST_CASE("forward gradients match central differences") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    for (int depth : {1, 2, 3}) {
      Rng rng(derive_seed({seed, 500}));
      Tinet net(small(depth, seed));
      const MatrixXd x = oracle::random_matrix(rng, 3, 5);
      const MatrixXd w = oracle::random_matrix(rng, 3, 4);

      ag::Var in = ag::parameter(x);
      zero_grad(net.parameters());
      auto out = net.forward_graph(in);
      auto loss = ag::custom_scalar(std::vector<ag::Var>{out}, (out.value().array() * w.array()).sum(), {w});
      loss.backward();

      auto fx = [&](const MatrixXd& v) { return probe(net, v, w); };
      CHECK(oracle::relative_error(in.grad(), oracle::numeric_gradient(fx, x)) <= 1e-4);

      for (auto& p : net.parameters()) {
        const MatrixXd original = p.var.value();
        auto fp = [&](const MatrixXd& v) {
          p.var.mutable_value() = v;
          const double r = probe(net, x, w);
          p.var.mutable_value() = original;
          return r;
        };
        CHECK(oracle::relative_error(p.var.grad(), oracle::numeric_gradient(fp, original)) <= 1e-4);
      }
    }
  }
}

TEST_CASE("batch and single forward agree") {
  Rng rng(4);
  Tinet net(small(3, 4));
  const MatrixXd x = oracle::random_matrix(rng, 5, 5);
  const MatrixXd batch = net.forward_batch(x);
  for (Eigen::Index i = 0; i < 5; ++i)
    CHECK((batch.row(i).transpose() - net.forward(x.row(i).transpose()).vector).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("checkpoint round trip") {
  Tinet net(small(3, 2));
  for (auto& p : net.parameters()) {
    auto& m = p.var.mutable_value();
    m = m.cast<float>().cast<double>();
  }
  net.set_encoder_fingerprint(sha256("encoder"));
  net.metadata()["mode"] = "Text";
  const auto path = std::filesystem::temp_directory_path() / "w4p_tinet_test.w4pt";
  net.save(path);
  auto back = Tinet::load(path);
  CHECK(back.parameter_hash() == net.parameter_hash());
  CHECK(back.encoder_fingerprint() == net.encoder_fingerprint());
  CHECK(back.metadata().at("mode") == "Text");
  CHECK(back.config().to_json() == net.config().to_json());
  std::filesystem::remove(path);
  CHECK_THROWS_AS(Tinet::load(path), Error);
}

TEST_CASE("trivial parameter settings") {
  SUBCASE("all-zero parameters map every input to zero") {
    for (int depth : {1, 2, 3}) {
      Tinet net(small(depth, 4));
      for (auto& p : net.parameters()) p.var.mutable_value().setZero();
      Rng rng(depth);
      CHECK(net.forward_batch(oracle::random_matrix(rng, 6, 5)).cwiseAbs().maxCoeff() == 0.0);
    }
  }
  SUBCASE("a depth-1 identity layer returns its input") {
    TinetConfig c = small(1);
    c.d_out = c.d_in;
    Tinet net(c);
    net.parameters()[0].var.mutable_value() = MatrixXd::Identity(5, 5);
    net.parameters()[1].var.mutable_value().setZero();
    Rng rng(9);
    const MatrixXd x = oracle::random_matrix(rng, 3, 5);
    CHECK((net.forward_batch(x) - x).cwiseAbs().maxCoeff() == 0.0);
  }
}
