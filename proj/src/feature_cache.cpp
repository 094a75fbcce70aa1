#include "w4p/feature_cache.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>

#include "json.hpp"
#include "w4p/error.hpp"

namespace w4p {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'W', '4', 'P', 'C', 'A', 'C', 'H', 'E'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  std::uint8_t b[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), sizeof b);
}

template <typename T>
T get(std::istream& in) {
  std::uint8_t b[sizeof(T)];
  in.read(reinterpret_cast<char*>(b), sizeof b);
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return static_cast<T>(v);
}

void put_f32(std::ostream& out, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, sizeof u);
  put<std::uint32_t>(out, u);
}

float get_f32(std::istream& in) {
  const auto u = get<std::uint32_t>(in);
  float f;
  std::memcpy(&f, &u, sizeof f);
  return f;
}

}  // namespace

void check_fingerprint(const Fingerprint& expected, const Fingerprint& actual, const std::string& what) {
  if (expected != actual)
    fail(ErrorKind::FingerprintMismatch,
         what + ": encoder fingerprint mismatch (expected " + to_hex(expected) + ", got " + to_hex(actual) + ")");
}

FeatureTable::FeatureTable(int dim) : dim_(dim) {
  require(dim > 0, ErrorKind::InvalidArgument, "feature table dim must be positive");
}

void FeatureTable::add(const std::string& id, const Eigen::VectorXd& v) {
  require(v.size() == dim_, ErrorKind::InvalidArgument, "feature '" + id + "' has the wrong dimension");
  require(v.allFinite(), ErrorKind::Numeric, "feature '" + id + "' is not finite");
  require(index_.emplace(id, ids_.size()).second, ErrorKind::InvalidArgument, "duplicate feature id '" + id + "'");
  ids_.push_back(id);
  for (Eigen::Index k = 0; k < v.size(); ++k) data_.push_back(static_cast<float>(v(k)));
}

void FeatureTable::set_row(std::size_t row, const Eigen::VectorXd& v) {
  require(row < size() && v.size() == dim_, ErrorKind::InvalidArgument, "set_row: bad row or dimension");
  require(v.allFinite(), ErrorKind::Numeric, "feature '" + ids_[row] + "' is not finite");
  for (Eigen::Index k = 0; k < v.size(); ++k) data_[row * static_cast<std::size_t>(dim_) + static_cast<std::size_t>(k)] = static_cast<float>(v(k));
}

std::optional<std::size_t> FeatureTable::find(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

Eigen::VectorXd FeatureTable::row(std::size_t r) const {
  require(r < size(), ErrorKind::InvalidArgument, "feature row out of range");
  Eigen::VectorXd v(dim_);
  for (int k = 0; k < dim_; ++k) v(k) = data_[r * static_cast<std::size_t>(dim_) + static_cast<std::size_t>(k)];
  return v;
}

Eigen::VectorXd FeatureTable::at(const std::string& id) const {
  auto r = find(id);
  if (!r) fail(ErrorKind::NotFound, "no cached feature for '" + id + "'");
  return row(*r);
}

void FeatureTable::save(const std::filesystem::path& bin, const std::filesystem::path& index,
                        const Fingerprint& fp) const {
  {
    std::ofstream out(bin, std::ios::binary);
    if (!out) fail(ErrorKind::Io, "cannot write " + bin.string());
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(dim_));
    put<std::uint64_t>(out, size());
    out.write(reinterpret_cast<const char*>(fp.data()), static_cast<std::streamsize>(fp.size()));
    for (float f : data_) put_f32(out, f);
    if (!out) fail(ErrorKind::Io, "write failed: " + bin.string());
  }
  json sidecar = json::object();
  for (std::size_t i = 0; i < ids_.size(); ++i) sidecar[ids_[i]] = i;
  std::ofstream out(index);
  if (!out) fail(ErrorKind::Io, "cannot write " + index.string());
  out << sidecar.dump() << '\n';
}

FeatureTable FeatureTable::load(const std::filesystem::path& bin, const std::filesystem::path& index, Fingerprint* fp) {
  std::ifstream in(bin, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + bin.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) fail(ErrorKind::Parse, bin.string() + ": bad cache magic");
  const auto version = get<std::uint32_t>(in);
  require(version == kVersion, ErrorKind::Parse, bin.string() + ": unsupported cache version " + std::to_string(version));
  const auto dim = get<std::uint32_t>(in);
  const auto count = get<std::uint64_t>(in);
  Fingerprint stored{};
  in.read(reinterpret_cast<char*>(stored.data()), static_cast<std::streamsize>(stored.size()));
  if (!in || dim == 0) fail(ErrorKind::Parse, bin.string() + ": truncated header");
  if (fp) *fp = stored;

  std::ifstream idx(index);
  if (!idx) fail(ErrorKind::Io, "cannot open " + index.string());
  json sidecar;
  try {
    sidecar = json::parse(idx);
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, index.string() + ": " + e.what());
  }
  require(sidecar.is_object() && sidecar.size() == count, ErrorKind::Parse,
          index.string() + ": sidecar does not list " + std::to_string(count) + " rows");
  std::vector<std::string> ids(count);
  std::vector<bool> seen(count, false);
  for (auto it = sidecar.begin(); it != sidecar.end(); ++it) {
    const auto row = it.value().get<std::uint64_t>();
    require(row < count && !seen[row], ErrorKind::Parse, index.string() + ": invalid row index for '" + it.key() + "'");
    seen[row] = true;
    ids[row] = it.key();
  }

  FeatureTable t(static_cast<int>(dim));
  t.ids_ = std::move(ids);
  for (std::size_t i = 0; i < t.ids_.size(); ++i) t.index_.emplace(t.ids_[i], i);
  t.data_.resize(count * dim);
  for (auto& f : t.data_) f = get_f32(in);
  if (!in) fail(ErrorKind::Parse, bin.string() + ": truncated rows");
  for (float f : t.data_) require(std::isfinite(f), ErrorKind::Numeric, bin.string() + ": non-finite feature value");
  return t;
}

void FeatureCache::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  images.save(dir / "image_features.bin", dir / "image_features.json", fingerprint);
  if (texts) {
    texts->save(dir / "text_features.bin", dir / "text_features.json", fingerprint);
  } else {
    std::filesystem::remove(dir / "text_features.bin");
    std::filesystem::remove(dir / "text_features.json");
  }
}

FeatureCache FeatureCache::load(const std::filesystem::path& dir, const std::optional<Fingerprint>& expected) {
  FeatureCache c;
  c.images = FeatureTable::load(dir / "image_features.bin", dir / "image_features.json", &c.fingerprint);
  if (std::filesystem::exists(dir / "text_features.bin")) {
    Fingerprint text_fp{};
    c.texts = FeatureTable::load(dir / "text_features.bin", dir / "text_features.json", &text_fp);
    require(text_fp == c.fingerprint, ErrorKind::Parse, dir.string() + ": image and text caches disagree on encoder");
  }
  if (expected) check_fingerprint(*expected, c.fingerprint, "feature cache " + dir.string());
  return c;
}

Image load_dataset_image(const Dataset& dataset, std::size_t i) { return load_image(dataset.resolve_path(i)); }

FeatureCache build_feature_cache(const DualEncoder& encoder, const Dataset& dataset, const ImageSource& images,
                                 int threads) {
  require(encoder.frozen(), ErrorKind::InvalidArgument, "feature cache requires a frozen encoder");
  require(!dataset.empty(), ErrorKind::Empty, "feature cache: dataset is empty");
  FeatureCache cache;
  cache.fingerprint = encoder.fingerprint();
  cache.images = FeatureTable(encoder.embed_dim());
  const Eigen::VectorXd placeholder = Eigen::VectorXd::Ones(encoder.embed_dim());
  for (const auto& r : dataset.images()) cache.images.add(r.image_id, placeholder);
  if (dataset.has_captions()) {
    cache.texts = FeatureTable(encoder.embed_dim());
    for (const auto& r : dataset.images()) cache.texts->add(r.image_id, placeholder);
  }

  // Workers fill disjoint rows; the first error wins.
  const std::size_t n = dataset.size();
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(threads), n));
  std::vector<std::exception_ptr> errors(workers);
  auto work = [&](std::size_t w) {
    try {
      for (std::size_t i = w; i < n; i += workers) {
        cache.images.set_row(i, encoder.encode_image(images(dataset, i)));
        if (cache.texts) cache.texts->set_row(i, encoder.encode_text(dataset.caption(i).text));
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return cache;
}

}  // namespace w4p
