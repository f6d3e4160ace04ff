#include "unibrain/cvp.hpp"

#include <cmath>

namespace ub {

namespace {

void check_square(const char* what, const Tensor& W, int d) {
  if (W.rank() != 2 || W.dim(0) != d || W.dim(1) != d)
    fail(ErrCode::shape, std::string("cvp_decode: ") + what + " must be [" +
                             std::to_string(d) + "x" + std::to_string(d) + "], got " +
                             shape_str(W.shape()));
}

}  // namespace

CvpOutput cvp_decode(const Tensor& queries, const Tensor& patches,
                     std::span<const CvpBlock> blocks, int heads) {
  if (queries.rank() != 2 || patches.rank() != 2)
    fail(ErrCode::shape, "cvp_decode: queries and patches must be rank-2");
  int d = queries.dim(1);
  if (patches.dim(1) != d)
    fail(ErrCode::shape, "cvp_decode: query width " + std::to_string(d) +
                             " does not match patch width " + std::to_string(patches.dim(1)));
  if (heads < 1 || d % heads != 0)
    fail(ErrCode::config, "cvp_decode: embed width " + std::to_string(d) +
                              " is not divisible by " + std::to_string(heads) + " heads");
  if (blocks.empty()) fail(ErrCode::config, "cvp_decode: no decoder blocks");
  int dh = d / heads;
  double inv_sqrt_dh = 1.0 / std::sqrt(double(dh));
  int C = queries.dim(0), l = patches.dim(0);

  CvpOutput out;
  Tensor h = queries;
  for (const CvpBlock& blk : blocks) {
    check_square("Wq", blk.Wq, d);
    check_square("Wk", blk.Wk, d);
    check_square("Wv", blk.Wv, d);
    check_square("Wo", blk.Wo, d);
    Tensor Q = affine(h, blk.Wq, blk.bq);        // [C, d]
    Tensor K = affine(patches, blk.Wk, blk.bk);  // [l, d]
    Tensor V = affine(patches, blk.Wv, blk.bv);  // [l, d]

    std::vector<Tensor> head_ctx;
    Tensor att_mean;  // head-averaged attention map for grounding
    for (int hd = 0; hd < heads; ++hd) {
      Tensor Qh = slice_cols(Q, hd * dh, dh);
      Tensor Kh = slice_cols(K, hd * dh, dh);
      Tensor Vh = slice_cols(V, hd * dh, dh);
      Tensor scores = scale(matmul(Qh, transpose(Kh)), inv_sqrt_dh);  // [C, l]
      Tensor A = softmax(scores);
      head_ctx.push_back(matmul(A, Vh));  // [C, dh]
      att_mean = att_mean.defined() ? add(att_mean, A) : A;
    }
    Tensor ctx = concat_cols(head_ctx);               // [C, d]
    h = add(h, affine(ctx, blk.Wo, blk.bo));          // residual attention
    Tensor f = affine(relu(affine(h, blk.Wf1, blk.bf1)), blk.Wf2, blk.bf2);
    h = add(h, f);                                    // residual FFN

    Tensor att = scale(att_mean, 1.0 / double(heads));
    // keep values only: grounding reads these after the tape is gone
    out.attention.push_back(att.detached_copy());
    (void)C;
    (void)l;
  }
  out.decoded = h;
  return out;
}

Tensor classify_queries(const Tensor& decoded, const Tensor& W1, const Tensor& b1,
                        const Tensor& W2, const Tensor& b2) {
  if (decoded.rank() != 2) fail(ErrCode::shape, "classify_queries: expected [C, d]");
  if (W2.rank() != 2 || W2.dim(1) != 1)
    fail(ErrCode::shape, "classify_queries: W2 must map to a single logit per row");
  Tensor hidden = relu(affine(decoded, W1, b1));  // [C, f]
  Tensor logits = affine(hidden, W2, b2);         // [C, 1]
  return sigmoid(reshape(logits, {decoded.dim(0)}));
}

Tensor bce_loss(const Tensor& probs, const Tensor& targets) {
  if (probs.shape() != targets.shape())
    fail(ErrCode::shape, "bce_loss: probs " + shape_str(probs.shape()) + " vs targets " +
                             shape_str(targets.shape()));
  for (double y : targets.values())
    if (y != 0.0 && y != 1.0) fail(ErrCode::validation, "bce_loss: targets must be 0 or 1");
  constexpr double kEps = 1e-7;
  Tensor p = clamp(probs, kEps, 1.0 - kEps);
  Tensor one_minus_y = scale(add_scalar(targets, -1.0), -1.0);
  Tensor one_minus_p = scale(add_scalar(p, -1.0), -1.0);
  Tensor ll = add(mul(targets, log_t(p)), mul(one_minus_y, log_t(one_minus_p)));
  return scale(sum_all(ll), -1.0 / double(probs.size()));
}

Tensor combine_losses(const Tensor& bce, std::span<const Tensor> align_losses) {
  if (align_losses.empty()) return bce;
  Tensor sum = align_losses[0];
  for (std::size_t i = 1; i < align_losses.size(); ++i) sum = add(sum, align_losses[i]);
  return add(bce, scale(sum, 1.0 / double(align_losses.size())));
}

}  // namespace ub
