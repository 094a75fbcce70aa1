#include "w4p/curation.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <numeric>

#include "w4p/error.hpp"
#include "w4p/retrieval.hpp"
#include "w4p/util.hpp"

namespace w4p {

using nlohmann::json;

namespace {

class LockedFile {
 public:
  LockedFile(const std::filesystem::path& path, int flags) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    fd_ = ::open(path.c_str(), flags, 0644);
    require(fd_ >= 0, ErrorKind::Io, "cannot open " + path.string());
    if (::flock(fd_, LOCK_EX) != 0) {
      ::close(fd_);
      fail(ErrorKind::Io, "cannot lock " + path.string());
    }
  }
  ~LockedFile() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  LockedFile(const LockedFile&) = delete;
  LockedFile& operator=(const LockedFile&) = delete;

  std::string read_all() const {
    std::string out;
    char buf[4096];
    ::lseek(fd_, 0, SEEK_SET);
    ssize_t n;
    while ((n = ::read(fd_, buf, sizeof(buf))) > 0) out.append(buf, static_cast<std::size_t>(n));
    return out;
  }

  void append(std::string_view text) const {
    ::lseek(fd_, 0, SEEK_END);
    std::size_t done = 0;
    while (done < text.size()) {
      const auto n = ::write(fd_, text.data() + done, text.size() - done);
      require(n > 0, ErrorKind::Io, "write failed");
      done += static_cast<std::size_t>(n);
    }
    require(::fsync(fd_) == 0, ErrorKind::Io, "fsync failed");
  }

 private:
  int fd_ = -1;
};

std::vector<json> parse_lines(const std::string& text, const std::string& what) {
  std::vector<json> out;
  std::size_t start = 0;
  int lineno = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    ++lineno;
    const auto line = text.substr(start, end - start);
    start = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      fail(ErrorKind::Parse, what + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string joined(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ", ") + s;
  return out;
}

}  // namespace

std::string make_pair_id(std::string_view target_id, std::string_view candidate_id) {
  Sha256 h;
  h.update(target_id);
  h.update(std::string_view("\0", 1));
  h.update(candidate_id);
  return to_hex(h.finish()).substr(0, 16);
}

std::vector<Candidate> false_negative_candidates(const Fingerprint& encoder_fp, const std::vector<std::string>& target_ids,
                                                 const std::map<std::string, std::set<std::string>>& known_gt,
                                                 const FeatureCache& gallery, std::size_t k) {
  check_fingerprint(encoder_fp, gallery.fingerprint, "gallery cache");
  require(k >= 1, ErrorKind::InvalidArgument, "candidate count k must be >= 1");
  std::vector<Candidate> out;
  for (const auto& target : target_ids) {
    RankOptions opts;
    opts.exclude_ids.push_back(target);
    if (auto it = known_gt.find(target); it != known_gt.end())
      opts.exclude_ids.insert(opts.exclude_ids.end(), it->second.begin(), it->second.end());
    const auto res = rank_gallery(gallery.images.at(target), gallery.images, k, opts);
    for (std::size_t r = 0; r < res.ranked_ids.size(); ++r)
      out.push_back({make_pair_id(target, res.ranked_ids[r]), target, res.ranked_ids[r], res.scores[r]});
  }
  return out;
}

std::vector<Candidate> false_negative_candidates(const Fingerprint& encoder_fp, const TripletSet& triplets,
                                                 const FeatureCache& gallery, std::size_t k) {
  std::vector<std::string> targets;
  std::map<std::string, std::set<std::string>> known;
  for (const auto& t : triplets.triplets()) {
    for (const auto& id : t.target_image_ids) {
      if (!known.count(id)) targets.push_back(id);
      known[id].insert(t.target_image_ids.begin(), t.target_image_ids.end());
    }
  }
  auto all = false_negative_candidates(encoder_fp, targets, known, gallery, k);
  std::set<std::string> seen;
  std::vector<Candidate> out;
  for (auto& c : all)
    if (seen.insert(c.pair_id).second) out.push_back(std::move(c));
  return out;
}

void save_candidates(const std::filesystem::path& path, const std::vector<Candidate>& candidates) {
  std::string out;
  for (const auto& c : candidates)
    out += json{{"pair_id", c.pair_id}, {"target_id", c.target_id}, {"candidate_id", c.candidate_id},
                {"similarity", c.similarity}}
               .dump() +
           "\n";
  write_file_atomic(path, out);
}

std::vector<Candidate> load_candidates(const std::filesystem::path& path) {
  std::vector<Candidate> out;
  for (const auto& j : read_jsonl(path)) {
    try {
      Candidate c{j.at("pair_id").get<std::string>(), j.at("target_id").get<std::string>(),
                  j.at("candidate_id").get<std::string>(), j.at("similarity").get<double>()};
      require(c.pair_id == make_pair_id(c.target_id, c.candidate_id), ErrorKind::Parse,
              path.string() + ": pair_id " + c.pair_id + " does not match its ids");
      out.push_back(std::move(c));
    } catch (const json::exception& e) {
      fail(ErrorKind::Parse, path.string() + ": " + e.what());
    }
  }
  return out;
}

std::string to_string(Decision d) { return d == Decision::Accept ? "accept" : "reject"; }

Decision decision_from_string(std::string_view s) {
  if (s == "accept") return Decision::Accept;
  if (s == "reject") return Decision::Reject;
  fail(ErrorKind::InvalidArgument, "decision must be 'accept' or 'reject', got '" + std::string(s) + "'");
}

json Verdict::to_json() const {
  return {{"pair_id", pair_id},     {"target_id", target_id}, {"candidate_id", candidate_id},
          {"decision", to_string(decision)}, {"annotator", annotator}, {"ts", ts}};
}

Verdict Verdict::from_json(const json& j) {
  try {
    return {j.at("pair_id").get<std::string>(),
            j.at("target_id").get<std::string>(),
            j.at("candidate_id").get<std::string>(),
            decision_from_string(j.at("decision").get<std::string>()),
            j.value("annotator", std::string()),
            j.value("ts", std::string())};
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, std::string("verdict: ") + e.what());
  }
}

std::string iso8601_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<Verdict> VerdictLog::read() const {
  if (!std::filesystem::exists(path_)) return {};
  std::vector<Verdict> out;
  for (const auto& j : parse_lines(read_file(path_), path_.string())) out.push_back(Verdict::from_json(j));
  return out;
}

void VerdictLog::append(const Verdict& v) const {
  LockedFile f(path_, O_RDWR | O_CREAT);
  for (const auto& j : parse_lines(f.read_all(), path_.string()))
    require(j.value("pair_id", "") != v.pair_id, ErrorKind::Conflict,
            "pair " + v.pair_id + " already has a verdict");
  f.append(v.to_json().dump() + "\n");
}

ApplyResult apply_verdicts(const TripletSet& triplets, const std::vector<Candidate>& candidates,
                           const std::vector<Verdict>& verdicts) {
  std::map<std::string, const Candidate*> by_pair;
  for (const auto& c : candidates) by_pair.emplace(c.pair_id, &c);

  std::vector<std::string> unknown, conflicts;
  std::map<std::string, Verdict> decided;
  std::vector<std::string> order;
  for (const auto& v : verdicts) {
    auto it = by_pair.find(v.pair_id);
    if (it == by_pair.end()) {
      unknown.push_back(v.pair_id);
      continue;
    }
    auto [d, inserted] = decided.emplace(v.pair_id, v);
    if (inserted)
      order.push_back(v.pair_id);
    else if (d->second.decision != v.decision &&
             std::find(conflicts.begin(), conflicts.end(), v.pair_id) == conflicts.end())
      conflicts.push_back(v.pair_id);
  }
  require(unknown.empty(), ErrorKind::NotFound, "unknown pair ids: " + joined(unknown));
  require(conflicts.empty(), ErrorKind::Conflict, "conflicting verdicts for pairs: " + joined(conflicts));

  ApplyResult res;
  auto list = triplets.triplets();
  for (const auto& pid : order) {
    const Verdict& v = decided.at(pid);
    const Candidate& c = *by_pair.at(pid);
    if (v.decision == Decision::Reject) {
      res.rejected.push_back(v);
      continue;
    }
    res.accepted.push_back(v);
    for (auto& t : list) {
      auto& targets = t.target_image_ids;
      if (std::find(targets.begin(), targets.end(), c.target_id) == targets.end()) continue;
      if (std::find(targets.begin(), targets.end(), c.candidate_id) != targets.end()) continue;
      if (t.query_image_id == c.candidate_id) continue;
      targets.push_back(c.candidate_id);
      ++res.targets_added;
    }
  }
  res.triplets = TripletSet(std::move(list));
  return res;
}

void append_audit(const std::filesystem::path& path, const std::vector<Verdict>& rejected) {
  LockedFile f(path, O_RDWR | O_CREAT);
  std::set<std::string> present;
  for (const auto& j : parse_lines(f.read_all(), path.string())) present.insert(j.value("pair_id", ""));
  std::string out;
  for (const auto& v : rejected)
    if (present.insert(v.pair_id).second) out += v.to_json().dump() + "\n";
  if (!out.empty()) f.append(out);
}

Dataset filter_by_resolution(const Dataset& manifest, double top_fraction) {
  require(top_fraction > 0.0 && top_fraction <= 1.0, ErrorKind::InvalidArgument, "top_fraction must be in (0, 1]");
  const std::size_t n = manifest.size();
  const auto keep = std::min<std::size_t>(
      n, static_cast<std::size_t>(std::ceil(top_fraction * static_cast<double>(n) - 1e-9)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto area = [&](std::size_t i) {
    return static_cast<long long>(manifest.image(i).width) * manifest.image(i).height;
  };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto aa = area(a), ab = area(b);
    return aa > ab || (aa == ab && manifest.image(a).image_id < manifest.image(b).image_id);
  });
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return manifest.subset(order);
}

}  // namespace w4p
