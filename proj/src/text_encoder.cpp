#include "unibrain/text_encoder.hpp"

#include <cmath>
#include <cstring>

namespace ub {

TextEncoder::TextEncoder(int dim, int vocab, std::uint64_t table_seed)
    : dim_(dim), vocab_(vocab), seed_(table_seed) {
  if (dim < 1 || vocab < 1)
    fail(ErrCode::config, "text encoder needs dim >= 1 and vocab >= 1");
  table_.resize(std::size_t(vocab) * std::size_t(dim));
  Rng rng(seed_stream(table_seed, 0x74657874ull));  // "text"
  double inv_sqrt_d = 1.0 / std::sqrt(double(dim));
  for (double& v : table_) v = rng.normal() * inv_sqrt_d;
}

std::vector<double> TextEncoder::encode(const std::string& text) const {
  std::vector<double> out(std::size_t(dim_), 0.0);
  auto tokens = split_ws(to_lower(text));
  if (tokens.empty()) return out;  // deliberate zero vector for empty text
  for (const std::string& tok : tokens) {
    std::size_t row = std::size_t(fnv1a(tok) % std::uint64_t(vocab_));
    const double* r = table_.data() + row * std::size_t(dim_);
    for (int i = 0; i < dim_; ++i) out[std::size_t(i)] += r[i];
  }
  double inv_n = 1.0 / double(tokens.size());
  double norm_sq = 0.0;
  for (double& v : out) {
    v *= inv_n;
    norm_sq += v * v;
  }
  double norm = std::sqrt(norm_sq + 1e-12);
  for (double& v : out) v /= norm;
  return out;
}

std::uint64_t TextEncoder::table_checksum() const {
  std::string_view bytes(reinterpret_cast<const char*>(table_.data()),
                         table_.size() * sizeof(double));
  return fnv1a(bytes);
}

}  // namespace ub
