#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace red {

// Named view over one learnable array. Shape {} denotes a scalar.
template <class T>
struct BasicParamRef {
  std::string name;
  std::vector<std::size_t> shape;
  std::span<T> values;
};

using ParamRef = BasicParamRef<double>;
using ConstParamRef = BasicParamRef<const double>;

}  // namespace red
