#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include <Eigen/Core>

namespace w4p {

using Fingerprint = std::array<std::uint8_t, 32>;

// Incremental SHA-256.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(std::span<const std::uint8_t> bytes);
  Sha256& update(std::string_view text);
  Sha256& update(const Eigen::MatrixXd& m);
  Sha256& update_u64(std::uint64_t v);
  Fingerprint finish();

 private:
  void* ctx_;
};

Fingerprint sha256(std::string_view text);
std::string to_hex(std::span<const std::uint8_t> bytes);
Fingerprint fingerprint_from_hex(std::string_view hex);

}  // namespace w4p
