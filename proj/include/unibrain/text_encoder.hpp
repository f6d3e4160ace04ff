#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unibrain/common.hpp"

namespace ub {

// Frozen text embedder: a fixed random lookup table indexed by token hash.
// Tokens are whitespace-split after case folding, their table rows averaged
// and the result scaled to unit norm.  Texts with no tokens embed to the zero
// vector.  The table is generated from (vocab, dim, seed) alone and is never
// trained, so embeddings are stable across runs and platforms.
class TextEncoder {
public:
  TextEncoder(int dim, int vocab, std::uint64_t table_seed);

  int dim() const { return dim_; }
  int vocab() const { return vocab_; }
  std::uint64_t seed() const { return seed_; }

  std::vector<double> encode(const std::string& text) const;

  const std::vector<double>& table() const { return table_; }
  std::uint64_t table_checksum() const;  // FNV over the raw table bytes

private:
  int dim_;
  int vocab_;
  std::uint64_t seed_;
  std::vector<double> table_;  // vocab_ x dim_, row major
};

}  // namespace ub
