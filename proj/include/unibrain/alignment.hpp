#pragma once

#include <span>
#include <string>
#include <vector>

#include "unibrain/tensor.hpp"

namespace ub {

// Debiasing weights for duplicate text keys: weight_i = 1 / (number of rows
// in the batch whose key equals key_i).  Weights within a duplicate group sum
// to exactly 1, so repeated reports do not dominate the contrastive loss.
std::vector<double> duplicate_weights(const std::vector<std::string>& keys);

// Bidirectional InfoNCE between unit-norm image rows and frozen text rows
// ([B, d] each).  Similarities are divided by tau = exp(log_tau); both the
// image->text and text->image log-softmax diagonals are weighted by the
// duplicate weights, summed, and averaged over the batch, negated so smaller
// is better.  B = 1 gives exactly 0.
Tensor contrastive_loss(const Tensor& image, const Tensor& text, const Tensor& log_tau,
                        const std::vector<double>& weights);

// Concatenate K modality patch embeddings [l, d] and mix them back to [l, d]
// with a single affine layer (W: [K*d, d], b: [d]).
Tensor fuse_modalities(std::span<const Tensor> mods, const Tensor& W, const Tensor& b);

}  // namespace ub
