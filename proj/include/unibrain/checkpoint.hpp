#pragma once

#include <deque>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "unibrain/tensor.hpp"

namespace ub {

// Named parameter tensors in insertion order.  Iteration order never depends
// on hashing, so optimizer sweeps and serialization are reproducible.  A
// deque keeps references from create()/get() valid as more parameters arrive.
class ParamStore {
public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  Tensor& create(const std::string& name, Shape shape);
  Tensor& put(const std::string& name, Tensor t);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::size_t count() const { return entries_.size(); }
  long total_elements() const;

  std::deque<Entry>& entries() { return entries_; }
  const std::deque<Entry>& entries() const { return entries_; }

private:
  std::deque<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

// Checkpoint layout: a JSON manifest at `path` and a raw blob at
// `path + ".blob"`.  The manifest records format "UBCKPT1", a version, a
// caller-supplied meta object, and per-tensor {name, shape, offset} with byte
// offsets into the blob; the blob is the tensors' float64 little-endian
// values back to back in manifest order.  Both files are written to
// temporaries and renamed, so a crash never leaves a half-written checkpoint.
void save_checkpoint(const std::string& path, const ParamStore& params,
                     const nlohmann::json& meta);

// Loads into an empty store (manifest order) and returns the meta object.
nlohmann::json load_checkpoint(const std::string& path, ParamStore& params);

}  // namespace ub
