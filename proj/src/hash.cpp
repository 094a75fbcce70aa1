#include "w4p/hash.hpp"

#include <openssl/evp.h>

#include "w4p/error.hpp"

namespace w4p {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid_argument";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::NotFound: return "not_found";
    case ErrorKind::Conflict: return "conflict";
    case ErrorKind::FingerprintMismatch: return "fingerprint_mismatch";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Io: return "io";
    case ErrorKind::Empty: return "empty";
    case ErrorKind::Config: return "config";
  }
  return "unknown";
}

Sha256::Sha256() : ctx_(EVP_MD_CTX_new()) {
  if (ctx_ == nullptr || EVP_DigestInit_ex(static_cast<EVP_MD_CTX*>(ctx_), EVP_sha256(), nullptr) != 1)
    fail(ErrorKind::Io, "sha256: digest init failed");
}

Sha256::~Sha256() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

Sha256& Sha256::update(std::span<const std::uint8_t> bytes) {
  EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), bytes.data(), bytes.size());
  return *this;
}

Sha256& Sha256::update(std::string_view text) {
  EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), text.data(), text.size());
  return *this;
}

Sha256& Sha256::update(const Eigen::MatrixXd& m) {
  update_u64(static_cast<std::uint64_t>(m.rows()));
  update_u64(static_cast<std::uint64_t>(m.cols()));
  // Column-major storage; hash the raw IEEE bytes.
  EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), m.data(), sizeof(double) * m.size());
  return *this;
}

Sha256& Sha256::update_u64(std::uint64_t v) {
  std::uint8_t b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
  return update(std::span<const std::uint8_t>(b, 8));
}

Fingerprint Sha256::finish() {
  Fingerprint out{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), out.data(), &len);
  return out;
}

Fingerprint sha256(std::string_view text) {
  Sha256 h;
  h.update(text);
  return h.finish();
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xf]);
  }
  return out;
}

Fingerprint fingerprint_from_hex(std::string_view hex) {
  require(hex.size() == 64, ErrorKind::Parse, "fingerprint must be 64 hex digits");
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    fail(ErrorKind::Parse, "fingerprint: invalid hex digit");
  };
  Fingerprint out{};
  for (std::size_t i = 0; i < 32; ++i)
    out[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
  return out;
}

}  // namespace w4p
