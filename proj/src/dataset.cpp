#include "w4p/dataset.hpp"

#include <fstream>
#include <map>
#include <set>

#include "json.hpp"
#include "w4p/error.hpp"
#include "w4p/util.hpp"

namespace w4p {

using nlohmann::json;

namespace {

std::string where(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line) + ": ";
}

template <typename T>
T field(const json& obj, const char* key, const std::filesystem::path& path, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) fail(ErrorKind::Parse, where(path, line) + "missing field '" + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::Parse, where(path, line) + "field '" + key + "' has the wrong type");
  }
}

// Calls fn(object, line_number) for every non-blank line.
template <typename Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(text);
    } catch (const json::parse_error& e) {
      fail(ErrorKind::Parse, where(path, line) + "invalid JSON: " + e.what());
    }
    if (!obj.is_object()) fail(ErrorKind::Parse, where(path, line) + "expected a JSON object");
    fn(obj, line);
  }
}

}  // namespace

MatchLabelMatrix labels_from_matrix(Eigen::MatrixXd labels) {
  require(labels.rows() > 0 && labels.cols() > 0, ErrorKind::InvalidArgument, "match labels: empty identity list");
  MatchLabelMatrix m{labels, labels};
  for (Eigen::Index i = 0; i < labels.rows(); ++i) {
    const double s = labels.row(i).sum();
    require(s > 0.0, ErrorKind::InvalidArgument,
            "match labels: row " + std::to_string(i) + " has no positive match in the batch");
    m.true_match.row(i) /= s;
  }
  return m;
}

MatchLabelMatrix build_match_labels(std::span<const std::string> row_ids, std::span<const std::string> col_ids) {
  require(!row_ids.empty() && !col_ids.empty(), ErrorKind::InvalidArgument, "match labels: empty identity list");
  Eigen::MatrixXd l(static_cast<Eigen::Index>(row_ids.size()), static_cast<Eigen::Index>(col_ids.size()));
  for (std::size_t i = 0; i < row_ids.size(); ++i)
    for (std::size_t j = 0; j < col_ids.size(); ++j)
      l(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row_ids[i] == col_ids[j] ? 1.0 : 0.0;
  return labels_from_matrix(std::move(l));
}

MatchLabelMatrix MatchLabelMatrix::transposed() const { return labels_from_matrix(labels.transpose()); }

ManifestKind manifest_kind_from_string(std::string_view s) {
  if (s == "image-caption") return ManifestKind::ImageCaption;
  if (s == "image-only") return ManifestKind::ImageOnly;
  if (s == "triplets") return ManifestKind::Triplets;
  fail(ErrorKind::InvalidArgument, "unknown manifest kind '" + std::string(s) + "'");
}

Dataset Dataset::load(const std::filesystem::path& path, ManifestKind kind) {
  require(kind != ManifestKind::Triplets, ErrorKind::InvalidArgument,
          "triplet files are loaded with TripletSet::load");
  std::vector<ImageRecord> images;
  std::vector<std::string> captions;
  std::unordered_map<std::string, std::size_t> first_line;
  for_each_jsonl(path, [&](const json& obj, std::size_t line) {
    ImageRecord r;
    r.image_id = field<std::string>(obj, "image_id", path, line);
    r.identity_id = field<std::string>(obj, "identity_id", path, line);
    r.path = field<std::string>(obj, "path", path, line);
    r.width = field<int>(obj, "width", path, line);
    r.height = field<int>(obj, "height", path, line);
    r.source = field<std::string>(obj, "source", path, line);
    if (r.width <= 0 || r.height <= 0) fail(ErrorKind::Parse, where(path, line) + "width and height must be positive");
    auto [it, inserted] = first_line.emplace(r.image_id, line);
    if (!inserted)
      fail(ErrorKind::Parse, where(path, line) + "duplicate image_id '" + r.image_id + "' (first seen on line " +
                                 std::to_string(it->second) + ")");
    if (kind == ManifestKind::ImageCaption) {
      auto text = field<std::string>(obj, "caption", path, line);
      if (text.empty()) fail(ErrorKind::Parse, where(path, line) + "caption must be nonempty");
      captions.push_back(std::move(text));
    }
    images.push_back(std::move(r));
  });
  require(!images.empty(), ErrorKind::Empty, path.string() + ": empty manifest");
  return from_records(std::move(images), std::move(captions), path.parent_path());
}

Dataset Dataset::from_records(std::vector<ImageRecord> images, std::vector<std::string> captions,
                              std::filesystem::path base_dir) {
  require(captions.empty() || captions.size() == images.size(), ErrorKind::InvalidArgument,
          "dataset: captions must be absent or one per image");
  auto d = std::make_shared<Data>();
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& r = images[i];
    require(r.width > 0 && r.height > 0, ErrorKind::InvalidArgument, "dataset: image '" + r.image_id + "' has no size");
    require(d->index.emplace(r.image_id, i).second, ErrorKind::InvalidArgument,
            "dataset: duplicate image_id '" + r.image_id + "'");
    if (!captions.empty())
      require(!captions[i].empty(), ErrorKind::InvalidArgument, "dataset: empty caption for '" + r.image_id + "'");
  }
  d->images = std::move(images);
  d->captions = std::move(captions);
  d->base_dir = std::move(base_dir);
  Dataset out;
  out.data_ = std::move(d);
  return out;
}

std::span<const ImageRecord> Dataset::images() const {
  if (!data_) return {};
  return data_->images;
}

CaptionRecord Dataset::caption(std::size_t i) const {
  require(has_captions(), ErrorKind::InvalidArgument, "dataset has no captions");
  return {data_->images.at(i).image_id, data_->captions.at(i)};
}

std::optional<std::size_t> Dataset::find(std::string_view image_id) const {
  if (!data_) return std::nullopt;
  auto it = data_->index.find(std::string(image_id));
  if (it == data_->index.end()) return std::nullopt;
  return it->second;
}

std::size_t Dataset::index_of(std::string_view image_id) const {
  auto i = find(image_id);
  if (!i) fail(ErrorKind::NotFound, "unknown image_id '" + std::string(image_id) + "'");
  return *i;
}

std::filesystem::path Dataset::resolve_path(std::size_t i) const {
  std::filesystem::path p = image(i).path;
  if (p.is_absolute() || data_->base_dir.empty()) return p;
  return data_->base_dir / p;
}

const std::filesystem::path& Dataset::base_dir() const {
  static const std::filesystem::path kEmpty;
  return data_ ? data_->base_dir : kEmpty;
}

std::vector<std::string> Dataset::identity_ids() const {
  std::vector<std::string> out;
  out.reserve(size());
  for (const auto& r : images()) out.push_back(r.identity_id);
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  std::vector<ImageRecord> images;
  std::vector<std::string> captions;
  for (auto i : indices) {
    images.push_back(image(i));
    if (has_captions()) captions.push_back(data_->captions.at(i));
  }
  return from_records(std::move(images), std::move(captions), base_dir());
}

void Dataset::save(const std::filesystem::path& path) const {
  std::string out;
  for (std::size_t i = 0; i < size(); ++i) {
    const auto& r = image(i);
    json obj = {{"image_id", r.image_id}, {"identity_id", r.identity_id}, {"path", r.path},
                {"width", r.width},       {"height", r.height},           {"source", r.source}};
    if (has_captions()) obj["caption"] = data_->captions[i];
    out += obj.dump() + "\n";
  }
  write_file_atomic(path, out);
}

bool Dataset::operator==(const Dataset& other) const {
  if (size() != other.size() || has_captions() != other.has_captions()) return false;
  if (size() == 0) return true;
  return data_->images == other.data_->images && data_->captions == other.data_->captions;
}

TripletSet::TripletSet(std::vector<Triplet> triplets) : triplets_(std::move(triplets)) {
  for (std::size_t i = 0; i < triplets_.size(); ++i) {
    const auto& t = triplets_[i];
    require(!t.query_image_id.empty(), ErrorKind::InvalidArgument,
            "triplet " + std::to_string(i) + ": empty query_image_id");
    require(!t.target_image_ids.empty(), ErrorKind::InvalidArgument,
            "triplet " + std::to_string(i) + ": target_image_ids must be nonempty");
  }
}

TripletSet TripletSet::load(const std::filesystem::path& path) {
  std::vector<Triplet> out;
  for_each_jsonl(path, [&](const json& obj, std::size_t line) {
    Triplet t;
    t.query_image_id = field<std::string>(obj, "query_image_id", path, line);
    t.relative_caption = field<std::string>(obj, "relative_caption", path, line);
    t.target_image_ids = field<std::vector<std::string>>(obj, "target_image_ids", path, line);
    if (t.target_image_ids.empty()) fail(ErrorKind::Parse, where(path, line) + "target_image_ids must be nonempty");
    for (const auto& id : t.target_image_ids)
      if (id == t.query_image_id)
        fail(ErrorKind::Parse, where(path, line) + "query image '" + id + "' listed among its own targets");
    out.push_back(std::move(t));
  });
  require(!out.empty(), ErrorKind::Empty, path.string() + ": empty triplet file");
  return TripletSet(std::move(out));
}

void TripletSet::save(const std::filesystem::path& path) const {
  std::string out;
  for (const auto& t : triplets_) {
    json obj = {{"query_image_id", t.query_image_id},
                {"relative_caption", t.relative_caption},
                {"target_image_ids", t.target_image_ids}};
    out += obj.dump() + "\n";
  }
  write_file_atomic(path, out);
}

void TripletSet::validate(const Dataset& query_images, const Dataset& gallery) const {
  require(!triplets_.empty(), ErrorKind::Empty, "triplet set is empty");
  for (std::size_t i = 0; i < triplets_.size(); ++i) {
    const auto& t = triplets_[i];
    const std::string at = "triplet " + std::to_string(i) + ": ";
    if (!query_images.find(t.query_image_id))
      fail(ErrorKind::NotFound, at + "dangling query_image_id '" + t.query_image_id + "'");
    for (const auto& id : t.target_image_ids) {
      if (id == t.query_image_id) fail(ErrorKind::InvalidArgument, at + "query listed among its own targets");
      if (!gallery.find(id)) fail(ErrorKind::NotFound, at + "dangling target id '" + id + "' (absent from gallery)");
    }
  }
}

std::vector<Triplet> TripletSet::queries() const {
  std::vector<Triplet> out;
  std::map<std::pair<std::string, std::string>, std::size_t> slot;
  for (const auto& t : triplets_) {
    auto key = std::make_pair(t.query_image_id, t.relative_caption);
    auto [it, inserted] = slot.emplace(key, out.size());
    if (inserted) {
      out.push_back(Triplet{t.query_image_id, t.relative_caption, {}});
    }
    auto& targets = out[it->second].target_image_ids;
    for (const auto& id : t.target_image_ids)
      if (std::find(targets.begin(), targets.end(), id) == targets.end()) targets.push_back(id);
  }
  return out;
}

}  // namespace w4p
