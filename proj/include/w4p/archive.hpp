#pragma once

// Self-describing parameter archive:
//   "W4PARCH1" | u64 header length | JSON header | tensor payload
// The header carries caller metadata plus a "tensors" table of
// {name, dtype, rows, cols, offset}; tensors are row-major little-endian.

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "w4p/parameters.hpp"

namespace w4p {

enum class DType { F32, F64 };

struct NamedTensor {
  std::string name;
  Eigen::MatrixXd value;
};

struct Archive {
  nlohmann::json meta;
  std::vector<NamedTensor> tensors;

  const Eigen::MatrixXd& tensor(const std::string& name) const;
};

void write_archive(const std::filesystem::path& path, const nlohmann::json& meta, const ParameterList& params,
                   DType dtype);
Archive read_archive(const std::filesystem::path& path);

// Copies archive tensors into matching parameters; shapes must agree.
void load_parameters(ParameterList& params, const Archive& archive);

// Rounds every value through float32 so an F32 archive round-trips exactly.
void round_to_float(ParameterList& params);

}  // namespace w4p
