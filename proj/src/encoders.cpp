#include "unibrain/encoders.hpp"

namespace ub {

Tensor encode_image(const Tensor& vol, std::span<const ConvSpec> convs) {
  if (convs.empty()) fail(ErrCode::config, "encode_image: encoder has no conv layers");
  Tensor x = vol;
  for (const ConvSpec& c : convs) x = relu(conv3d(x, c.W, c.b, c.stride));
  return channels_last(x);
}

Tensor project_patches(const Tensor& patches, const Tensor& W1, const Tensor& b1,
                       const Tensor& W2, const Tensor& b2) {
  return affine(relu(affine(patches, W1, b1)), W2, b2);
}

Tensor pool_patches(const Tensor& u) {
  return l2_normalize(mean_axis(u, 0));
}

}  // namespace ub
