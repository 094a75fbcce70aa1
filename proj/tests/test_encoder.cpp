#include <filesystem>

#include "doctest.h"
#include "oracles.hpp"
#include "w4p/encoder.hpp"
#include "w4p/error.hpp"
#include "w4p/image.hpp"

using namespace w4p;
namespace fs = std::filesystem;

namespace {

Tokenizer small_tokenizer(int max_len = kMaxTokens) {
  std::vector<std::string> texts = {"a woman wearing a red shirt and blue pants", "a man in a black coat",
                                    "the man wearing white shoes"};
  return Tokenizer(Vocabulary::build(texts), max_len);
}

DualEncoder small_encoder(std::uint64_t seed = 0, int max_len = kMaxTokens) {
  EncoderConfig cfg;
  cfg.d_embed = 16;
  cfg.d_token = 12;
  cfg.d_hidden = 10;
  cfg.image_height = 32;
  cfg.image_width = 16;
  cfg.patch = 8;
  cfg.max_len = max_len;
  cfg.seed = seed;
  return DualEncoder(cfg, small_tokenizer(max_len));
}

Image gradient_image(int h, int w, float shift) {
  Image img = make_image(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = std::fmod(shift + 0.01f * (y + 2 * x + 5 * c), 1.0f);
  return img;
}

}  // namespace

TEST_CASE("vocabulary and tokenizer") {
  const auto tok = small_tokenizer();
  const auto& v = tok.vocab();
  CHECK(v.word(token::kPad) != v.word(token::kBos));
  CHECK(v.id("a") >= token::kNumSpecial);
  CHECK(v.id("photo") >= token::kNumSpecial);
  CHECK(v.id("zebra") == token::kUnk);
  CHECK_FALSE(v.find("zebra").has_value());

  SUBCASE("BOS words EOS then PAD") {
    auto seq = tok.tokenize("A man, in red!");
    CHECK(seq.token_ids.size() == static_cast<std::size_t>(kMaxTokens));
    CHECK(seq.token_ids[0] == token::kBos);
    CHECK(seq.length == 2 + 6);  // a man , in red !
    CHECK(seq.token_ids[static_cast<std::size_t>(seq.length - 1)] == token::kEos);
    CHECK(seq.token_ids[static_cast<std::size_t>(seq.length)] == token::kPad);
    CHECK(split_words("A man, in red!") == std::vector<std::string>{"a", "man", ",", "in", "red", "!"});
  }
  SUBCASE("truncation keeps BOS and EOS") {
    Tokenizer t(tok.vocab(), 6);
    auto seq = t.tokenize("a man in a black coat wearing shoes");
    CHECK(seq.length == 6);
    CHECK(seq.token_ids.front() == token::kBos);
    CHECK(seq.token_ids.back() == token::kEos);
  }
  SUBCASE("vocabulary order: specials, template words, then frequency") {
    auto built = Vocabulary::build(std::vector<std::string>{"b b c", "c b d"}, 100);
    std::vector<std::string> tail(built.words().begin() + token::kNumSpecial, built.words().end());
    CHECK(tail == std::vector<std::string>{"a", "photo", "of", "is", "b", "c", "d"});
    CHECK(Vocabulary::build(std::vector<std::string>{"b b c", "c b d"}, 10).size() == 10);
  }
  SUBCASE("save and load") {
    const auto path = fs::temp_directory_path() / "w4p_vocab_test.txt";
    v.save(path);
    CHECK(Vocabulary::load(path) == v);
    fs::remove(path);
  }
}

TEST_CASE("prompt templates have the exact token layout") {
  const auto enc = small_encoder();
  const auto& v = enc.tokenizer().vocab();
  SUBCASE("train template: BOS a photo of S* EOS") {
    auto layout = enc.prompt_layout(PromptTemplate::Train, "");
    CHECK(layout.slot == 4);
    CHECK(layout.ids == std::vector<int>{token::kBos, v.id("a"), v.id("photo"), v.id("of"), token::kPad, token::kEos});
  }
  SUBCASE("inference template: BOS a S* is caption EOS") {
    auto layout = enc.prompt_layout(PromptTemplate::Infer, "wearing white shoes");
    CHECK(layout.slot == 2);
    CHECK(layout.ids == std::vector<int>{token::kBos, v.id("a"), token::kPad, v.id("is"), v.id("wearing"),
                                         v.id("white"), v.id("shoes"), token::kEos});
    CHECK_THROWS_AS(enc.prompt_layout(PromptTemplate::Infer, ""), Error);
    CHECK_THROWS_AS(enc.prompt_layout(PromptTemplate::Train, "extra"), Error);
  }
  SUBCASE("injected rows are table rows except the slot") {
    Rng rng(2);
    PseudoWord s{oracle::random_matrix(rng, 12, 1)};
    auto seq = enc.inject_pseudo_word(PromptTemplate::Infer, s, "red shirt");
    const auto layout = enc.prompt_layout(PromptTemplate::Infer, "red shirt");
    CHECK(seq.valid_length == static_cast<int>(layout.ids.size()));
    for (int i = 0; i < enc.max_len(); ++i) {
      Eigen::VectorXd want = i == layout.slot ? s.vector
                                              : Eigen::VectorXd(enc.token_table().row(
                                                    i < seq.valid_length ? layout.ids[static_cast<std::size_t>(i)]
                                                                         : token::kPad));
      CHECK((seq.vectors.row(i).transpose() - want).cwiseAbs().maxCoeff() == 0.0);
    }
  }
  SUBCASE("long captions are truncated, template tokens survive") {
    const auto e = small_encoder(0, 8);
    auto layout = e.prompt_layout(PromptTemplate::Infer, "a man in a black coat wearing white shoes");
    CHECK(layout.ids.size() == 8u);
    CHECK(layout.ids[3] == v.id("is"));
    CHECK(layout.ids.back() == token::kEos);
  }
  SUBCASE("wrong pseudo-word size") {
    CHECK_THROWS_AS(enc.inject_pseudo_word(PromptTemplate::Train, PseudoWord{Eigen::VectorXd::Zero(5)}, ""), Error);
  }
}

TEST_CASE("a vocabulary row in the slot encodes like the spelled-out word") {
  const auto enc = small_encoder(3);
  const auto& v = enc.tokenizer().vocab();
  auto via_slot = enc.encode_embeddings(enc.inject_token(PromptTemplate::Infer, v.id("man"), "wearing red"));
  auto spelled = enc.encode_text("a man is wearing red");
  CHECK((via_slot - spelled).cwiseAbs().maxCoeff() == 0.0);

  auto graph = enc.prompt_forward(enc.prompt_layout(PromptTemplate::Infer, "wearing red"),
                                  ag::constant(enc.token_table().row(v.id("man"))));
  CHECK((round_to_float(graph.value().row(0).transpose()) - spelled).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("image and text encoders") {
  const auto enc = small_encoder(5);
  const auto img = gradient_image(40, 24, 0.1f);
  SUBCASE("outputs are float32 values of the right size") {
    auto f = enc.encode_image(img);
    CHECK(f.size() == 16);
    CHECK((f - round_to_float(f)).cwiseAbs().maxCoeff() == 0.0);
    auto t = enc.encode_text("a man in a black coat");
    CHECK(t.size() == 16);
    CHECK((t - round_to_float(t)).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("eval path equals graph path") {
    auto patches = enc.preprocess(img);
    CHECK(patches.rows() == enc.config().num_patches());
    auto graph = enc.image_forward(flatten_rows(patches));
    CHECK((round_to_float(graph.value().row(0).transpose()) - enc.encode_image(img)).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("seeded construction is reproducible") {
    CHECK(small_encoder(5).fingerprint() == enc.fingerprint());
    CHECK(small_encoder(6).fingerprint() != enc.fingerprint());
  }
  SUBCASE("save and load round trip") {
    const auto path = fs::temp_directory_path() / "w4p_encoder_test.w4p";
    enc.save(path);
    auto back = DualEncoder::load(path);
    CHECK(back.fingerprint() == enc.fingerprint());
    CHECK((back.encode_image(img) - enc.encode_image(img)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.encode_text("red shirt") - enc.encode_text("red shirt")).cwiseAbs().maxCoeff() == 0.0);
    fs::remove(path);
  }
  SUBCASE("frozen encoders build no gradient graph") {
    auto e = enc.clone();
    e.set_frozen(true);
    CHECK_FALSE(e.image_forward(flatten_rows(e.preprocess(img))).requires_grad());
    e.set_frozen(false);
    CHECK(e.image_forward(flatten_rows(e.preprocess(img))).requires_grad());
  }
  SUBCASE("invalid config") {
    EncoderConfig bad;
    bad.patch = 7;
    CHECK_THROWS_AS(bad.validate(), Error);
  }
}

TEST_CASE("image utilities") {
  const auto img = gradient_image(12, 9, 0.3f);
  Image q = img;
  for (auto& p : q.pixels) p = std::round(p * 255.0f) / 255.0f;
  auto back = decode_image(encode_png(q));
  REQUIRE(back.height == 12);
  REQUIRE(back.width == 9);
  double worst = 0;
  for (std::size_t i = 0; i < q.pixels.size(); ++i) worst = std::max(worst, double(std::abs(back.pixels[i] - q.pixels[i])));
  CHECK(worst <= 1e-6);
  auto r = resize_image(img, 24, 18);
  CHECK(r.height == 24);
  CHECK(r.width == 18);
  CHECK(base64_decode("aGVsbG8=") == std::vector<std::uint8_t>{'h', 'e', 'l', 'l', 'o'});
  CHECK_THROWS_AS(decode_image(std::vector<std::uint8_t>{1, 2, 3}), Error);
}
