#include "w4p/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "w4p/error.hpp"

namespace w4p {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'W', '4', 'P', 'A', 'R', 'C', 'H', '1'};

}  // namespace

ParameterList clone_parameters(const ParameterList& params) {
  ParameterList out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({p.name, ag::Var(p.var.value(), p.var.requires_grad())});
  return out;
}

void set_trainable(ParameterList& params, bool trainable) {
  for (auto& p : params) {
    p.var.set_requires_grad(trainable);
    p.var.zero_grad();
  }
}

void zero_grad(ParameterList& params) {
  for (auto& p : params) p.var.zero_grad();
}

ag::Var& find_parameter(ParameterList& params, std::string_view name) {
  for (auto& p : params)
    if (p.name == name) return p.var;
  fail(ErrorKind::NotFound, "no parameter named '" + std::string(name) + "'");
}

const ag::Var& find_parameter(const ParameterList& params, std::string_view name) {
  for (const auto& p : params)
    if (p.name == name) return p.var;
  fail(ErrorKind::NotFound, "no parameter named '" + std::string(name) + "'");
}

std::size_t parameter_count(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += static_cast<std::size_t>(p.var.value().size());
  return n;
}

void hash_parameters(Sha256& h, const ParameterList& params) {
  for (const auto& p : params) {
    h.update(p.name);
    h.update(p.var.value());
  }
}

const Eigen::MatrixXd& Archive::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  fail(ErrorKind::NotFound, "archive has no tensor '" + name + "'");
}

void write_archive(const std::filesystem::path& path, const json& meta, const ParameterList& params, DType dtype) {
  const std::size_t width = dtype == DType::F32 ? 4 : 8;
  json header = meta;
  header["tensors"] = json::array();
  std::uint64_t offset = 0;
  for (const auto& p : params) {
    const auto& v = p.var.value();
    header["tensors"].push_back({{"name", p.name},
                                 {"dtype", dtype == DType::F32 ? "f32" : "f64"},
                                 {"rows", v.rows()},
                                 {"cols", v.cols()},
                                 {"offset", offset}});
    offset += static_cast<std::uint64_t>(v.size()) * width;
  }
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write archive " + path.string());
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : params) {
    const auto& v = p.var.value();
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
      for (Eigen::Index c = 0; c < v.cols(); ++c) {
        if (dtype == DType::F32) {
          const float f = static_cast<float>(v(r, c));
          out.write(reinterpret_cast<const char*>(&f), sizeof f);
        } else {
          const double d = v(r, c);
          out.write(reinterpret_cast<const char*>(&d), sizeof d);
        }
      }
    }
  }
  out.flush();
  if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open archive " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) fail(ErrorKind::Parse, path.string() + ": not a parameter archive");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (std::uint64_t{1} << 32)) fail(ErrorKind::Parse, path.string() + ": corrupt header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  Archive a;
  try {
    a.meta = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, path.string() + ": corrupt header: " + e.what());
  }
  const auto payload_start = in.tellg();
  for (const auto& t : a.meta.at("tensors")) {
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    const bool f32 = t.at("dtype").get<std::string>() == "f32";
    in.seekg(payload_start + static_cast<std::streamoff>(t.at("offset").get<std::uint64_t>()));
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        if (f32) {
          float f;
          in.read(reinterpret_cast<char*>(&f), sizeof f);
          m(r, c) = f;
        } else {
          double d;
          in.read(reinterpret_cast<char*>(&d), sizeof d);
          m(r, c) = d;
        }
      }
    }
    if (!in) fail(ErrorKind::Parse, path.string() + ": truncated tensor '" + t.at("name").get<std::string>() + "'");
    a.tensors.push_back({t.at("name").get<std::string>(), std::move(m)});
  }
  a.meta.erase("tensors");
  return a;
}

void load_parameters(ParameterList& params, const Archive& archive) {
  for (auto& p : params) {
    const auto& t = archive.tensor(p.name);
    require(t.rows() == p.var.rows() && t.cols() == p.var.cols(), ErrorKind::Parse,
            "archive tensor '" + p.name + "' has shape " + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) +
                ", expected " + std::to_string(p.var.rows()) + "x" + std::to_string(p.var.cols()));
    p.var.mutable_value() = t;
  }
}

void round_to_float(ParameterList& params) {
  for (auto& p : params) p.var.mutable_value() = p.var.value().cast<float>().cast<double>();
}

}  // namespace w4p
