#include "w4p/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "w4p/error.hpp"

namespace w4p {

std::string to_string(QueryMode mode) {
  switch (mode) {
    case QueryMode::ImageOnly: return "image-only";
    case QueryMode::TextOnly: return "text-only";
    case QueryMode::Avg: return "avg";
    case QueryMode::Composed: return "composed";
  }
  return "?";
}

QueryMode query_mode_from_string(std::string_view s) {
  if (s == "image-only") return QueryMode::ImageOnly;
  if (s == "text-only") return QueryMode::TextOnly;
  if (s == "avg") return QueryMode::Avg;
  if (s == "composed") return QueryMode::Composed;
  fail(ErrorKind::InvalidArgument,
       "unknown query mode '" + std::string(s) + "' (image-only, text-only, avg, composed)");
}

Eigen::VectorXd normalized(const Eigen::VectorXd& v) {
  const double n = v.norm();
  require(std::isfinite(n) && n > 0.0, ErrorKind::Numeric, "cannot normalize a zero or non-finite vector");
  return v / n;
}

Eigen::VectorXd compose_query(const DualEncoder& encoder, std::span<const Tinet* const> tinets,
                              const Eigen::VectorXd& f_v, std::string_view caption) {
  require(!tinets.empty(), ErrorKind::InvalidArgument, "composed query needs at least one TINet");
  const Fingerprint fp = encoder.fingerprint();
  const auto tmpl = caption.empty() ? PromptTemplate::Train : PromptTemplate::Infer;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(encoder.embed_dim());
  for (const Tinet* net : tinets) {
    const auto& owner = net->encoder_fingerprint();
    require(!owner || *owner == fp, ErrorKind::FingerprintMismatch,
            "TINet was trained against encoder " + to_hex(owner.value_or(Fingerprint{})).substr(0, 16) +
                ", loaded encoder is " + to_hex(fp).substr(0, 16));
    const PseudoWord s = net->forward(f_v);
    sum += normalized(encoder.encode_embeddings(encoder.inject_pseudo_word(tmpl, s, caption)));
  }
  return normalized(sum / static_cast<double>(tinets.size()));
}

Eigen::VectorXd baseline_query(const DualEncoder& encoder, QueryMode mode, const std::optional<Eigen::VectorXd>& f_v,
                               const std::optional<std::string>& caption) {
  const bool has_caption = caption && !caption->empty();
  switch (mode) {
    case QueryMode::ImageOnly:
      require(f_v.has_value(), ErrorKind::InvalidArgument, "image-only query needs a reference image");
      return *f_v;
    case QueryMode::TextOnly:
      require(has_caption, ErrorKind::InvalidArgument, "text-only query needs a non-empty caption");
      return encoder.encode_text(*caption);
    case QueryMode::Avg:
      require(f_v.has_value() && has_caption, ErrorKind::InvalidArgument,
              "avg query needs both a reference image and a caption");
      return normalized(0.5 * (normalized(*f_v) + normalized(encoder.encode_text(*caption))));
    case QueryMode::Composed:
      break;
  }
  fail(ErrorKind::InvalidArgument, "baseline_query does not build composed queries");
}

RetrievalResult rank_gallery(const Eigen::VectorXd& query, const FeatureTable& gallery, std::size_t k,
                             const RankOptions& opts) {
  require(!gallery.empty(), ErrorKind::Empty, "gallery is empty");
  require(query.size() == gallery.dim(), ErrorKind::InvalidArgument,
          "query has dim " + std::to_string(query.size()) + ", gallery has " + std::to_string(gallery.dim()));
  const double qn = query.norm();
  require(std::isfinite(qn) && qn > 0.0, ErrorKind::Numeric, "query vector is zero or non-finite");

  std::unordered_set<std::string> excluded(opts.exclude_ids.begin(), opts.exclude_ids.end());
  const auto n = gallery.size();
  const auto d = static_cast<std::size_t>(gallery.dim());
  const float* data = gallery.data().data();
  std::vector<double> scores(n);
  std::vector<std::size_t> rows;
  rows.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    if (!excluded.empty() && excluded.count(gallery.id(r))) continue;
    double dot = 0.0, gn = 0.0;
    const float* g = data + r * d;
    for (std::size_t c = 0; c < d; ++c) {
      const double x = g[c];
      dot += x * query[static_cast<Eigen::Index>(c)];
      gn += x * x;
    }
    require(gn > 0.0, ErrorKind::Numeric, "gallery row '" + gallery.id(r) + "' is a zero vector");
    scores[r] = dot / (std::sqrt(gn) * qn);
    rows.push_back(r);
  }

  auto before = [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); };
  const std::size_t take = k == 0 ? rows.size() : std::min(k, rows.size());
  if (opts.partial && take < rows.size())
    std::partial_sort(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(take), rows.end(), before);
  else
    std::sort(rows.begin(), rows.end(), before);
  rows.resize(take);

  RetrievalResult res;
  res.gallery_rows = rows;
  for (auto r : rows) {
    res.ranked_ids.push_back(gallery.id(r));
    res.scores.push_back(scores[r]);
  }
  return res;
}

RetrievalEngine::RetrievalEngine(const DualEncoder& encoder, FeatureCache gallery)
    : encoder_(&encoder), gallery_(std::move(gallery)), references_(encoder.embed_dim()) {
  check_fingerprint(encoder.fingerprint(), gallery_.fingerprint, "gallery cache");
  require(gallery_.images.dim() == encoder.embed_dim(), ErrorKind::InvalidArgument, "gallery dim differs from encoder");
}

void RetrievalEngine::add_references(const FeatureTable& refs) {
  require(refs.dim() == encoder_->embed_dim(), ErrorKind::InvalidArgument, "reference dim differs from encoder");
  for (std::size_t r = 0; r < refs.size(); ++r)
    if (!references_.find(refs.id(r))) references_.add(refs.id(r), refs.row(r));
}

void RetrievalEngine::add_tinet(const std::string& id, Tinet tinet) {
  require(!tinets_.count(id), ErrorKind::Conflict, "TINet '" + id + "' already loaded");
  tinets_.emplace(id, std::move(tinet));
}

std::optional<Eigen::VectorXd> RetrievalEngine::reference(const std::string& image_id) const {
  if (auto r = references_.find(image_id)) return references_.row(*r);
  if (auto r = gallery_.images.find(image_id)) return gallery_.images.row(*r);
  return std::nullopt;
}

Eigen::VectorXd RetrievalEngine::query_vector(const QuerySpec& spec, const std::optional<Eigen::VectorXd>& f_v) const {
  std::optional<Eigen::VectorXd> image = f_v;
  if (!image && spec.image_id) {
    image = reference(*spec.image_id);
    require(image.has_value(), ErrorKind::NotFound, "unknown image_id '" + *spec.image_id + "'");
  }
  if (spec.mode != QueryMode::Composed) return baseline_query(*encoder_, spec.mode, image, spec.caption);

  require(image.has_value(), ErrorKind::InvalidArgument, "composed query needs a reference image");
  require(!spec.tinet_ids.empty(), ErrorKind::InvalidArgument, "composed query needs at least one TINet id");
  std::vector<const Tinet*> nets;
  for (const auto& id : spec.tinet_ids) {
    auto it = tinets_.find(id);
    require(it != tinets_.end(), ErrorKind::NotFound, "unknown TINet '" + id + "'");
    nets.push_back(&it->second);
  }
  return compose_query(*encoder_, nets, *image, spec.caption.value_or(""));
}

RetrievalResult RetrievalEngine::retrieve(const QuerySpec& spec, std::size_t k, const RankOptions& opts,
                                          const std::optional<Eigen::VectorXd>& f_v) const {
  auto res = rank_gallery(query_vector(spec, f_v), gallery_.images, k, opts);
  res.query = spec;
  return res;
}

}  // namespace w4p
