#include "w4p/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "w4p/error.hpp"
#include "w4p/retrieval.hpp"
#include "w4p/util.hpp"

namespace w4p {

using nlohmann::json;

std::vector<VocabNeighbor> vocab_neighbors(const PseudoWord& pseudo, const Eigen::MatrixXd& table,
                                           const Vocabulary& vocab, std::size_t k) {
  require(pseudo.vector.size() == table.cols(), ErrorKind::InvalidArgument, "pseudo-word dim differs from token table");
  require(table.rows() == vocab.size(), ErrorKind::InvalidArgument, "token table rows differ from vocabulary size");
  require(k >= 1 && k <= static_cast<std::size_t>(table.rows()), ErrorKind::InvalidArgument,
          "k must be in [1, |V|]");
  const double pn = pseudo.vector.norm();
  require(pn > 0.0 && std::isfinite(pn), ErrorKind::Numeric, "pseudo-word is a zero vector");
  std::vector<double> sims(static_cast<std::size_t>(table.rows()));
  for (Eigen::Index r = 0; r < table.rows(); ++r) {
    const double rn = table.row(r).norm();
    sims[static_cast<std::size_t>(r)] = rn > 0.0 ? table.row(r).dot(pseudo.vector) / (rn * pn) : 0.0;
  }
  std::vector<int> ids(sims.size());
  std::iota(ids.begin(), ids.end(), 0);
  auto before = [&](int a, int b) {
    const double sa = sims[static_cast<std::size_t>(a)], sb = sims[static_cast<std::size_t>(b)];
    return sa > sb || (sa == sb && a < b);
  };
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(), before);
  std::vector<VocabNeighbor> out;
  for (std::size_t i = 0; i < k; ++i) {
    const int id = ids[i];
    out.push_back({id, vocab.display(id), sims[static_cast<std::size_t>(id)], !vocab.is_word_final(id)});
  }
  return out;
}

std::string to_string(Substitution s) {
  switch (s) {
    case Substitution::Pseudo: return "pseudo";
    case Substitution::FirstSim: return "1st-sim";
    case Substitution::TextOnly: return "text-only";
  }
  return "?";
}

Substitution substitution_from_string(std::string_view s) {
  if (s == "pseudo") return Substitution::Pseudo;
  if (s == "1st-sim") return Substitution::FirstSim;
  if (s == "text-only") return Substitution::TextOnly;
  fail(ErrorKind::InvalidArgument, "unknown substitution strategy '" + std::string(s) + "'");
}

Eigen::VectorXd substitute_word_query(const DualEncoder& encoder, std::span<const Tinet* const> tinets,
                                      const Eigen::VectorXd& f_v, std::string_view caption, Substitution strategy) {
  if (strategy == Substitution::Pseudo) return compose_query(encoder, tinets, f_v, caption);
  require(!tinets.empty(), ErrorKind::InvalidArgument, "substitution query needs at least one TINet");
  const auto tmpl = caption.empty() ? PromptTemplate::Train : PromptTemplate::Infer;

  if (strategy == Substitution::TextOnly) {
    auto layout = encoder.prompt_layout(tmpl, caption);
    layout.ids.erase(layout.ids.begin() + layout.slot);
    TokenSequence seq{layout.ids, static_cast<int>(layout.ids.size())};
    seq.token_ids.resize(static_cast<std::size_t>(encoder.max_len()), token::kPad);
    return normalized(encoder.encode_tokens(seq));
  }

  const Fingerprint fp = encoder.fingerprint();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(encoder.embed_dim());
  for (const Tinet* net : tinets) {
    const auto& owner = net->encoder_fingerprint();
    require(!owner || *owner == fp, ErrorKind::FingerprintMismatch, "TINet was trained against a different encoder");
    const auto nearest = vocab_neighbors(net->forward(f_v), encoder.token_table(), encoder.tokenizer().vocab(), 1);
    sum += normalized(encoder.encode_embeddings(encoder.inject_token(tmpl, nearest.front().token_id, caption)));
  }
  return normalized(sum / static_cast<double>(tinets.size()));
}

EvalReport self_retrieval_probe(const DualEncoder& encoder, std::span<const Tinet* const> tinets,
                                const FeatureTable& references, const FeatureTable& gallery) {
  require(!references.empty(), ErrorKind::Empty, "self-retrieval: no reference images");
  for (const auto& id : references.ids())
    require(gallery.find(id).has_value(), ErrorKind::NotFound, "self-retrieval: reference '" + id + "' missing from gallery");
  std::vector<Triplet> queries;
  for (const auto& id : references.ids()) queries.push_back({id, "", {id}});
  return evaluate(queries, [&](const Triplet& q) {
    return rank_gallery(compose_query(encoder, tinets, references.at(q.query_image_id), ""), gallery, 0);
  });
}

void write_neighbor_dump(const std::filesystem::path& path, const std::vector<std::string>& image_ids,
                         const std::vector<std::vector<VocabNeighbor>>& neighbors) {
  require(image_ids.size() == neighbors.size(), ErrorKind::InvalidArgument, "neighbor dump: size mismatch");
  std::string out;
  for (std::size_t i = 0; i < image_ids.size(); ++i) {
    json list = json::array();
    for (const auto& n : neighbors[i]) {
      json e = {{"word", n.word}, {"sim", n.similarity}};
      if (n.partial) e["partial"] = true;
      list.push_back(std::move(e));
    }
    out += json{{"image_id", image_ids[i]}, {"neighbors", list}}.dump() + "\n";
  }
  write_file_atomic(path, out);
}

}  // namespace w4p
