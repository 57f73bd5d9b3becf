#include "tbad/tensor_bridge.hpp"

namespace tbad {

torch::Tensor to_tensor(const Array3<float>& a) {
  const Index3 s = a.shape();
  return torch::from_blob(const_cast<float*>(a.values().data()), {s[2], s[1], s[0]}, torch::kFloat32).clone();
}

torch::Tensor to_tensor(const Array3<std::uint8_t>& a) {
  const Index3 s = a.shape();
  return torch::from_blob(const_cast<std::uint8_t*>(a.values().data()), {s[2], s[1], s[0]}, torch::kUInt8)
      .to(torch::kInt64);
}

Array3<float> float_array_from(const torch::Tensor& t) {
  require(t.dim() == 3, ErrorCode::shape, "expected a (D,H,W) tensor");
  const auto c = t.to(torch::kFloat32).contiguous();
  const float* p = c.data_ptr<float>();
  return Array3<float>(shape_of(c), std::vector<float>(p, p + c.numel()));
}

Array3<std::uint8_t> label_array_from(const torch::Tensor& t) {
  require(t.dim() == 3, ErrorCode::shape, "expected a (D,H,W) tensor");
  const auto c = t.to(torch::kUInt8).contiguous();
  const std::uint8_t* p = c.data_ptr<std::uint8_t>();
  return Array3<std::uint8_t>(shape_of(c), std::vector<std::uint8_t>(p, p + c.numel()));
}

}  // namespace tbad
