#pragma once

#include <torch/torch.h>

#include "tbad/image.hpp"

namespace tbad {

// Tensors use (z, y, x) spatial order, i.e. torch's (D, H, W), which is the
// memory order of Array3. No data is transposed crossing the bridge.

torch::Tensor to_tensor(const Array3<float>& a);
/// int64 class indices.
torch::Tensor to_tensor(const Array3<std::uint8_t>& a);

Array3<float> float_array_from(const torch::Tensor& t);
Array3<std::uint8_t> label_array_from(const torch::Tensor& t);

inline Index3 shape_of(const torch::Tensor& t) {
  const auto n = t.dim();
  return {t.size(n - 1), t.size(n - 2), t.size(n - 3)};
}

inline std::vector<std::int64_t> spatial_sizes(const Index3& s) { return {s[2], s[1], s[0]}; }

}  // namespace tbad
