#pragma once

#include <span>
#include <vector>

#include "unibrain/tensor.hpp"

namespace ub {

// One cross-attention decoder block.  Queries attend to the patch sequence
// (keys/values); there is no query-to-query attention, so each disease row is
// computed independently of the others.
struct CvpBlock {
  Tensor Wq, bq;    // [d, d], [d]
  Tensor Wk, bk;
  Tensor Wv, bv;
  Tensor Wo, bo;    // attention output mix
  Tensor Wf1, bf1;  // FFN expand [d, f]
  Tensor Wf2, bf2;  // FFN contract [f, d]
};

struct CvpOutput {
  Tensor decoded;                  // [C, d] refined query embeddings
  std::vector<Tensor> attention;   // per block: [C, l], head-averaged rows
};

// queries: [C, d] (text embeddings of the disease queries)
// patches: [l, d] fused patch embeddings
CvpOutput cvp_decode(const Tensor& queries, const Tensor& patches,
                     std::span<const CvpBlock> blocks, int heads);

// Shared per-row probability head: [C, d] -> probs [C] via a two-layer MLP
// and sigmoid.  Sharing the head across rows is what lets the query set vary
// at inference time.
Tensor classify_queries(const Tensor& decoded, const Tensor& W1, const Tensor& b1,
                        const Tensor& W2, const Tensor& b2);

// Mean binary cross-entropy with probabilities clamped to
// [1e-7, 1 - 1e-7]; probs/targets may be [C] or [B, C].
Tensor bce_loss(const Tensor& probs, const Tensor& targets);

// Total objective: bce + (sum of alignment losses) / (their count).  With no
// alignment terms enabled this is just bce.
Tensor combine_losses(const Tensor& bce, std::span<const Tensor> align_losses);

}  // namespace ub
