#pragma once

#include <span>

#include "unibrain/tensor.hpp"

namespace ub {

// One strided 3x3x3 convolution layer of the image encoder.
struct ConvSpec {
  Tensor W;  // [cout, cin*27]
  Tensor b;  // [cout]
  int stride = 2;
};

// Runs the conv+relu stack over a [1, X, Y, Z] volume and returns the patch
// matrix [l, c_last] with l = X'*Y'*Z' after all strides.
Tensor encode_image(const Tensor& vol, std::span<const ConvSpec> convs);

// Two-layer projection of raw patch features to the shared embedding width:
// [l, c] -> [l, d].
Tensor project_patches(const Tensor& patches, const Tensor& W1, const Tensor& b1,
                       const Tensor& W2, const Tensor& b2);

// Mean over patches then unit norm: [l, d] -> [d].
Tensor pool_patches(const Tensor& u);

}  // namespace ub
