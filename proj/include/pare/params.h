#pragma once

#include <string>
#include <vector>

#include "pare/error.h"
#include "pare/tensor.h"

namespace pare {

// Flat views over any parameter set exposing for_each(name, tensor).
template <class P>
std::vector<Tensor> parameter_list(const P& params) {
  std::vector<Tensor> out;
  params.for_each([&out](const std::string&, const Tensor& t) { out.push_back(t); });
  return out;
}

template <class P>
std::vector<std::string> parameter_names(const P& params) {
  std::vector<std::string> out;
  params.for_each([&out](const std::string& n, const Tensor&) { out.push_back(n); });
  return out;
}

template <class P>
void assign_parameters(P& params, const std::vector<Tensor>& values) {
  std::size_t i = 0;
  params.for_each([&](const std::string& name, Tensor& t) {
    if (i >= values.size()) throw DimensionError("assign_parameters: too few values");
    if (values[i].shape() != t.shape()) {
      throw DimensionError("assign_parameters: " + name + " expects " + shape_str(t.shape()) +
                           ", got " + shape_str(values[i].shape()));
    }
    t = values[i++];
  });
  if (i != values.size()) throw DimensionError("assign_parameters: too many values");
}

}  // namespace pare
