#include <algorithm>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "w4p/analysis.hpp"
#include "w4p/error.hpp"
#include "w4p/util.hpp"

using namespace w4p;
using Eigen::VectorXd;

namespace {

DualEncoder small_encoder() {
  std::vector<std::string> texts = {"wearing a red shirt and blue pants", "a man in a black coat and white shoes"};
  EncoderConfig c;
  c.d_embed = 16;
  c.d_token = 12;
  c.d_hidden = 10;
  c.image_height = 16;
  c.image_width = 8;
  c.patch = 8;
  c.max_len = 20;
  c.seed = 6;
  DualEncoder e(c, Tokenizer(Vocabulary::build(texts), 20));
  e.set_frozen(true);
  return e;
}

// Depth-1 TINet whose output ignores its input: zero weights, bias = row.
Tinet constant_tinet(const VectorXd& row, int d_in) {
  TinetConfig t;
  t.depth = 1;
  t.d_in = d_in;
  t.d_out = static_cast<int>(row.size());
  Tinet net(t);
  net.parameters()[0].var.mutable_value().setZero();
  net.parameters()[1].var.mutable_value() = row.transpose();
  return net;
}

}  // namespace

TEST_CASE("vocabulary neighbours") {
  const auto enc = small_encoder();
  const auto& table = enc.token_table();
  const auto& vocab = enc.tokenizer().vocab();
  SUBCASE("a table row is its own nearest word") {
    const int id = vocab.id("coat");
    auto n = vocab_neighbors(PseudoWord{table.row(id).transpose()}, table, vocab, 3);
    CHECK(n[0].token_id == id);
    CHECK(n[0].word == "coat");
    CHECK(n[0].similarity == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_FALSE(n[0].partial);
  }
  SUBCASE("k = |V| gives the whole vocabulary sorted") {
    Rng rng(1);
    PseudoWord p{oracle::random_matrix(rng, 12, 1).col(0)};
    auto n = vocab_neighbors(p, table, vocab, static_cast<std::size_t>(vocab.size()));
    CHECK(n.size() == static_cast<std::size_t>(vocab.size()));
    for (std::size_t i = 1; i < n.size(); ++i) CHECK(n[i - 1].similarity >= n[i].similarity);
    std::set<int> ids;
    for (const auto& x : n) ids.insert(x.token_id);
    CHECK(ids.size() == n.size());
  }
  SUBCASE("top-10 matches a full-sort oracle") {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
      PseudoWord p{oracle::random_matrix(rng, 12, 1).col(0)};
      std::vector<double> sim(static_cast<std::size_t>(table.rows()));
      for (Eigen::Index r = 0; r < table.rows(); ++r) {
        const VectorXd row = table.row(r).transpose();
        sim[static_cast<std::size_t>(r)] =
            oracle::cosine(std::vector<double>(p.vector.data(), p.vector.data() + 12),
                           std::vector<double>(row.data(), row.data() + 12));
      }
      std::vector<int> order(sim.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sim[a] > sim[b]; });
      auto n = vocab_neighbors(p, table, vocab, 10);
      for (std::size_t k = 0; k < 10; ++k) {
        CHECK(n[k].token_id == order[k]);
        CHECK(std::abs(n[k].similarity - sim[static_cast<std::size_t>(order[k])]) <= 1e-12);
      }
    }
  }
  SUBCASE("word pieces are flagged") {
    Vocabulary bpe({"<pad>", "<bos>", "<eos>", "<unk>", "<mask>", "red</w>", "sh", "irt</w>"});
    Eigen::MatrixXd t = Eigen::MatrixXd::Identity(8, 8);
    auto n = vocab_neighbors(PseudoWord{t.row(6).transpose()}, t, bpe, 1);
    CHECK(n[0].partial);
    CHECK_FALSE(vocab_neighbors(PseudoWord{t.row(5).transpose()}, t, bpe, 1)[0].partial);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(vocab_neighbors(PseudoWord{VectorXd::Zero(12)}, table, vocab, 3), Error);
    CHECK_THROWS_AS(vocab_neighbors(PseudoWord{VectorXd::Ones(5)}, table, vocab, 3), Error);
    CHECK_THROWS_AS(vocab_neighbors(PseudoWord{VectorXd::Ones(12)}, table, vocab, 0), Error);
  }
}

TEST_CASE("word substitution") {
  const auto enc = small_encoder();
  Rng rng(4);
  const VectorXd f_v = oracle::random_matrix(rng, 16, 1).col(0);
  TinetConfig cfg;
  cfg.depth = 2;
  cfg.hidden_width = 8;
  cfg.d_in = 16;
  cfg.d_out = 12;
  Tinet net(cfg);
  const Tinet* one[] = {&net};
  CHECK(substitution_from_string("1st-sim") == Substitution::FirstSim);
  CHECK(to_string(Substitution::TextOnly) == "text-only");

  SUBCASE("pseudo strategy is the composed query") {
    CHECK((substitute_word_query(enc, one, f_v, "red shirt", Substitution::Pseudo) -
           compose_query(enc, one, f_v, "red shirt"))
              .norm() == 0.0);
  }
  SUBCASE("1st-sim equals pseudo when the pseudo-word is a table row") {
    const auto& v = enc.tokenizer().vocab();
    Tinet row_net = constant_tinet(enc.token_table().row(v.id("man")).transpose(), 16);
    const Tinet* r[] = {&row_net};
    const auto a = substitute_word_query(enc, r, f_v, "red shirt", Substitution::Pseudo);
    const auto b = substitute_word_query(enc, r, f_v, "red shirt", Substitution::FirstSim);
    CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((b - normalized(enc.encode_text("a man is red shirt"))).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("text-only drops the slot") {
    const auto t = substitute_word_query(enc, one, f_v, "red shirt", Substitution::TextOnly);
    CHECK((t - normalized(enc.encode_text("a is red shirt"))).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("self-retrieval probe") {
  const auto enc = small_encoder();
  Rng rng(8);
  FeatureTable refs(16);
  for (int i = 0; i < 6; ++i) refs.add("r" + std::to_string(i), oracle::random_matrix(rng, 16, 1).col(0).cast<float>().cast<double>());
  TinetConfig cfg;
  cfg.depth = 2;
  cfg.hidden_width = 8;
  cfg.d_in = 16;
  cfg.d_out = 12;
  Tinet net(cfg);
  const Tinet* one[] = {&net};

  SUBCASE("gallery of the composed queries themselves gives Rank-1 = 100") {
    FeatureTable g(16);
    for (std::size_t i = 0; i < refs.size(); ++i) g.add(refs.id(i), compose_query(enc, one, refs.row(i), ""));
    auto rep = self_retrieval_probe(enc, one, refs, g);
    CHECK(rep.rank1 == 100.0);
    CHECK(rep.per_query.size() == 6);
  }
  SUBCASE("an untrained TINet still yields a valid report") {
    auto rep = self_retrieval_probe(enc, one, refs, refs);
    CHECK(rep.rank1 >= 0.0);
    CHECK(rep.rank10 == 100.0);
    CHECK(rep.map > 0.0);
  }
  SUBCASE("reference missing from the gallery") {
    FeatureTable g(16);
    g.add("r0", refs.row(0));
    CHECK_THROWS_AS(self_retrieval_probe(enc, one, refs, g), Error);
  }
}

TEST_CASE("neighbour dump") {
  const auto path = std::filesystem::temp_directory_path() / "w4p_neighbors.jsonl";
  write_neighbor_dump(path, {"a", "b"}, {{{5, "red", 0.5, false}}, {{6, "blue", 0.25, false}, {7, "x", 0.125, true}}});
  auto lines = read_jsonl(path);
  REQUIRE(lines.size() == 2);
  CHECK(lines[0].at("image_id") == "a");
  CHECK(lines[1].at("neighbors").size() == 2);
  CHECK(lines[1].at("neighbors")[0].at("word") == "blue");
  CHECK(lines[1].at("neighbors")[0].at("sim") == 0.25);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(write_neighbor_dump(path, {"a"}, {}), Error);
}
