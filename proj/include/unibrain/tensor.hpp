#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "unibrain/common.hpp"

namespace ub {

using Shape = std::vector<int>;

long shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

// Dense double tensor with value semantics (copies share storage).  When an
// op runs under an active Tape and any input is tracked on it, the result is
// tracked too and remembers how to push gradients back.  Tensors created on
// a tape that has since been destroyed silently degrade to constants.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor full(Shape shape, double v);

  bool defined() const { return block_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int rank() const { return int(shape_.size()); }
  int dim(int i) const { return shape_[std::size_t(i)]; }
  long size() const;

  double* data();
  const double* data() const;
  const std::vector<double>& values() const;

  double item() const;  // requires size() == 1
  double operator()(int i) const;
  double operator()(int i, int j) const;

  Tensor detached_copy() const;

private:
  struct Block {
    std::vector<double> values;
    std::int64_t tape_id = -1;  // id of the tape tracking this block
    int node = -1;              // node index on that tape
  };

  std::shared_ptr<Block> block_;
  Shape shape_;

  friend class Tape;
  friend struct TapeAccess;
};

// Records operations for reverse-mode differentiation.  Constructing a Tape
// makes it the active tape for the current thread (scoped; nesting restores
// the previous one).  Leaves must be watch()ed before use.
class Tape {
public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  std::int64_t id() const { return id_; }

  void watch(const Tensor& t);
  bool tracked(const Tensor& t) const;

  class Gradients {
  public:
    // Gradient of the loss w.r.t. t; zeros if t did not participate.
    std::vector<double> get(const Tensor& t) const;
    bool has(const Tensor& t) const;

  private:
    friend class Tape;
    std::int64_t tape_id_ = -1;
    std::vector<std::vector<double>> by_node_;
  };

  // Runs reverse accumulation from a scalar loss.  Single use per tape.
  Gradients gradients(const Tensor& loss);

  using BackFn = std::function<void(const std::vector<double>&, Tape&)>;

private:
  struct Node {
    long out_size = 0;
    BackFn backward;  // empty for leaves
  };

  int add_node(long out_size, BackFn fn);
  std::vector<double>& grad_buf(int node);

  std::int64_t id_;
  Tape* prev_ = nullptr;
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  bool used_ = false;

  friend struct TapeAccess;
};

// ---------------------------------------------------------------------------
// Operations.  All are pure: inputs are never modified.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
// elementwise product with a scalar tensor (gradient flows into both)
Tensor mul_scalar_tensor(const Tensor& a, const Tensor& s);

Tensor exp_t(const Tensor& a);
// natural log; input clamped at 1e-12 to keep the value finite
Tensor log_t(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// y = x W + b with x either [n,in] or [in]; b may be undefined for no bias
Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b);

Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_cols(std::span<const Tensor> parts);  // [n,c_i] -> [n, sum c_i]
Tensor stack_rows(std::span<const Tensor> rows);    // K x [d] -> [K,d]
Tensor slice_cols(const Tensor& a, int begin, int count);
Tensor slice_rows(const Tensor& a, int begin, int count);

Tensor sum_all(const Tensor& a);  // -> scalar
// axis 0 or 1 of a rank-2 tensor
Tensor sum_axis(const Tensor& a, int axis);
Tensor mean_axis(const Tensor& a, int axis);

// rows of rank-2 (or the whole rank-1 vector) scaled to unit L2 norm;
// 1e-12 under the square root guards zero vectors
Tensor l2_normalize(const Tensor& a);
// softmax over the last axis, max-subtracted for stability
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);
Tensor diagonal(const Tensor& a);  // [n,n] -> [n]

// 3-D convolution, kernel 3x3x3, zero padding 1.
//   x: [cin, X, Y, Z]   W: [cout, cin*27]   b: [cout] (optional)
// output: [cout, X', Y', Z'] with D' = floor((D - 3 + 2) / stride) + 1
Tensor conv3d(const Tensor& x, const Tensor& W, const Tensor& b, int stride);
// [c, X, Y, Z] -> [X*Y*Z, c] patch matrix (voxel-major, C order)
Tensor channels_last(const Tensor& x);

// ---------------------------------------------------------------------------
// Numeric check used by the test suites: central finite differences of f
// against the analytic gradient for every entry of every param.  Returns the
// worst relative error max(|a-n|) / max(|a|,|n|,1e-8).
double finite_diff_check(const std::function<Tensor(std::span<const Tensor>)>& f,
                         std::span<const Tensor> params, double eps = 1e-5);

// GEMM helper (row-major, Eigen-backed, single-threaded): C (+)= op(A)op(B).
void gemm(bool trans_a, bool trans_b, long m, long n, long k, const double* A,
          const double* B, double* C, bool accumulate);

}  // namespace ub
