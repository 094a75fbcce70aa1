#pragma once

// Retrieval-assisted false-negative mining, verdict bookkeeping and
// resolution filtering for building composed-retrieval test sets.

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "w4p/dataset.hpp"
#include "w4p/feature_cache.hpp"
#include "w4p/hash.hpp"

namespace w4p {

struct Candidate {
  std::string pair_id;
  std::string target_id;
  std::string candidate_id;
  double similarity = 0.0;

  bool operator==(const Candidate&) const = default;
};

// Stable id of a (target, candidate) pair: 16 hex digits of SHA-256.
std::string make_pair_id(std::string_view target_id, std::string_view candidate_id);

// For each target, the k most similar gallery images that are neither the
// target itself nor in known_gt[target]. Targets keep their input order;
// candidates within a target are sorted by similarity (ties by gallery row).
std::vector<Candidate> false_negative_candidates(const Fingerprint& encoder_fp, const std::vector<std::string>& target_ids,
                                                 const std::map<std::string, std::set<std::string>>& known_gt,
                                                 const FeatureCache& gallery, std::size_t k = 5);

// Every distinct target of the triplet file; an image's known ground truths
// are all targets it shares a triplet with. A pair proposed by several
// triplets is listed once.
std::vector<Candidate> false_negative_candidates(const Fingerprint& encoder_fp, const TripletSet& triplets,
                                                 const FeatureCache& gallery, std::size_t k = 5);

void save_candidates(const std::filesystem::path& path, const std::vector<Candidate>& candidates);
std::vector<Candidate> load_candidates(const std::filesystem::path& path);

enum class Decision { Accept, Reject };

std::string to_string(Decision d);
Decision decision_from_string(std::string_view s);

struct Verdict {
  std::string pair_id;
  std::string target_id;
  std::string candidate_id;
  Decision decision = Decision::Reject;
  std::string annotator;
  std::string ts;  // ISO 8601

  nlohmann::json to_json() const;
  static Verdict from_json(const nlohmann::json& j);
  bool operator==(const Verdict&) const = default;
};

std::string iso8601_now();

// Append-only JSONL log. Appends take an exclusive file lock, reject a second
// verdict for the same pair_id (ErrorKind::Conflict) and fsync before
// returning.
class VerdictLog {
 public:
  explicit VerdictLog(std::filesystem::path path) : path_(std::move(path)) {}

  const std::filesystem::path& path() const { return path_; }
  std::vector<Verdict> read() const;
  void append(const Verdict& v) const;

 private:
  std::filesystem::path path_;
};

struct ApplyResult {
  TripletSet triplets;
  std::vector<Verdict> accepted;
  std::vector<Verdict> rejected;
  std::size_t targets_added = 0;
};

// Accepted candidates join the target lists of every triplet that already
// contains the pair's target. Repeated identical verdicts are harmless;
// unknown pair ids (ErrorKind::NotFound) and accept/reject conflicts
// (ErrorKind::Conflict) are reported with all offending pairs.
ApplyResult apply_verdicts(const TripletSet& triplets, const std::vector<Candidate>& candidates,
                           const std::vector<Verdict>& verdicts);

// Appends the rejects whose pair_id is not yet in the audit log.
void append_audit(const std::filesystem::path& path, const std::vector<Verdict>& rejected);

// Keeps the ceil(top_fraction * N) records with the largest pixel area (ties
// by image_id), in their original order.
Dataset filter_by_resolution(const Dataset& manifest, double top_fraction);

}  // namespace w4p
