#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "lesion/tensor.hpp"

namespace lesion {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

using ParameterList = std::vector<NamedParameter>;

inline std::size_t count_scalars(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.size();
  return n;
}

inline void append_prefixed(ParameterList& into, const std::string& prefix, const ParameterList& from) {
  for (const auto& p : from) into.push_back({prefix + p.name, p.tensor});
}

}  // namespace lesion
