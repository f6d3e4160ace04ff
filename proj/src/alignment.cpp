#include "unibrain/alignment.hpp"

#include <cmath>

namespace ub {

std::vector<double> duplicate_weights(const std::vector<std::string>& keys) {
  std::vector<double> out(keys.size(), 1.0);
  std::vector<char> done(keys.size(), 0);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (done[i]) continue;
    std::vector<std::size_t> group;
    for (std::size_t j = i; j < keys.size(); ++j)
      if (!done[j] && keys[j] == keys[i]) {
        group.push_back(j);
        done[j] = 1;
      }
    double w = 1.0 / double(group.size());
    double seq = 0.0;
    for (std::size_t g = 0; g < group.size(); ++g) seq += w;
    for (std::size_t g : group) out[g] = w;
    // n copies of 1/n don't always accumulate to exactly 1 (n=6, 7, ...).
    // Each group must carry unit total mass, so when the plain sum misses,
    // the last member absorbs the residual; by Sterbenz the subtraction is
    // exact and the corrected sequential sum lands on 1.0 bit-for-bit.
    if (seq != 1.0) {
      double partial = 0.0;
      for (std::size_t g = 0; g + 1 < group.size(); ++g) partial += w;
      out[group.back()] = 1.0 - partial;
    }
  }
  return out;
}

Tensor contrastive_loss(const Tensor& image, const Tensor& text, const Tensor& log_tau,
                        const std::vector<double>& weights) {
  if (image.rank() != 2 || text.rank() != 2)
    fail(ErrCode::shape, "contrastive_loss: expected [B,d] embeddings");
  if (image.shape() != text.shape())
    fail(ErrCode::shape, "contrastive_loss: image " + shape_str(image.shape()) +
                             " vs text " + shape_str(text.shape()));
  int B = image.dim(0);
  if (weights.size() != std::size_t(B))
    fail(ErrCode::validation, "contrastive_loss: need one weight per batch row");
  if (log_tau.size() != 1)
    fail(ErrCode::shape, "contrastive_loss: log_tau must be a scalar");
  for (double v : image.values())
    if (!std::isfinite(v)) fail(ErrCode::validation, "contrastive_loss: non-finite image embedding");
  for (double v : text.values())
    if (!std::isfinite(v)) fail(ErrCode::validation, "contrastive_loss: non-finite text embedding");

  Tensor inv_tau = exp_t(scale(log_tau, -1.0));
  Tensor logits = mul_scalar_tensor(matmul(image, transpose(text)), inv_tau);  // [B,B]
  Tensor row_diag = diagonal(log_softmax(logits));             // image -> text
  Tensor col_diag = diagonal(log_softmax(transpose(logits)));  // text -> image
  Tensor w({B}, std::vector<double>(weights.begin(), weights.end()));
  Tensor weighted = mul(w, add(row_diag, col_diag));
  return scale(sum_all(weighted), -1.0 / double(B));
}

Tensor fuse_modalities(std::span<const Tensor> mods, const Tensor& W, const Tensor& b) {
  if (mods.empty()) fail(ErrCode::shape, "fuse_modalities: no modality embeddings");
  Tensor cat = concat_cols(mods);
  int d = mods[0].dim(1);
  if (W.rank() != 2 || W.dim(0) != cat.dim(1) || W.dim(1) != d)
    fail(ErrCode::shape, "fuse_modalities: weight " + shape_str(W.shape()) +
                             " does not map " + shape_str(cat.shape()) + " back to width " +
                             std::to_string(d));
  return affine(cat, W, b);
}

}  // namespace ub
