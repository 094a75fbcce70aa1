#pragma once

// Probes of what the pseudo-words encode: nearest vocabulary rows,
// retrieval with the pseudo-word swapped for a real word, and caption-free
// self-retrieval.

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "w4p/encoder.hpp"
#include "w4p/evaluation.hpp"
#include "w4p/feature_cache.hpp"
#include "w4p/tinet.hpp"

namespace w4p {

struct VocabNeighbor {
  int token_id = 0;
  std::string word;
  double similarity = 0.0;
  bool partial = false;  // a sub-word piece rather than a whole word
};

// Top-k token-table rows by cosine similarity, descending, ties by id.
std::vector<VocabNeighbor> vocab_neighbors(const PseudoWord& pseudo, const Eigen::MatrixXd& token_table,
                                           const Vocabulary& vocab, std::size_t k);

enum class Substitution { Pseudo, FirstSim, TextOnly };

std::string to_string(Substitution s);
Substitution substitution_from_string(std::string_view s);

// Pseudo: the composed query. FirstSim: each pseudo-word replaced by its
// nearest table row before text encoding. TextOnly: the template with the
// slot removed.
Eigen::VectorXd substitute_word_query(const DualEncoder& encoder, std::span<const Tinet* const> tinets,
                                      const Eigen::VectorXd& f_v, std::string_view caption, Substitution strategy);

// Caption-free composed query for every reference; the ground truth is the
// reference itself, which must be in the gallery.
EvalReport self_retrieval_probe(const DualEncoder& encoder, std::span<const Tinet* const> tinets,
                                const FeatureTable& references, const FeatureTable& gallery);

// One JSONL line per image: {"image_id", "neighbors": [{"word", "sim"}]}.
void write_neighbor_dump(const std::filesystem::path& path, const std::vector<std::string>& image_ids,
                         const std::vector<std::vector<VocabNeighbor>>& neighbors);

}  // namespace w4p
