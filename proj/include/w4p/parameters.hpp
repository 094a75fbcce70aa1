#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "w4p/autograd.hpp"
#include "w4p/hash.hpp"

namespace w4p {

// A named leaf of the autograd graph. Modules own their parameters as
// leaves so training and inference share one forward implementation.
struct Parameter {
  std::string name;
  ag::Var var;
};

using ParameterList = std::vector<Parameter>;

ParameterList clone_parameters(const ParameterList& params);
void set_trainable(ParameterList& params, bool trainable);
void zero_grad(ParameterList& params);
ag::Var& find_parameter(ParameterList& params, std::string_view name);
const ag::Var& find_parameter(const ParameterList& params, std::string_view name);
std::size_t parameter_count(const ParameterList& params);
void hash_parameters(Sha256& h, const ParameterList& params);

}  // namespace w4p
