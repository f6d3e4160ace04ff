#include "unibrain/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>

#define EIGEN_DONT_PARALLELIZE 1
#include <Eigen/Core>

namespace ub {

long shape_numel(const Shape& s) {
  long n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  if (shape_.empty()) fail(ErrCode::shape, "tensor shape must have rank >= 1");
  for (int d : shape_)
    if (d < 1) fail(ErrCode::shape, "tensor extent must be >= 1, got " + shape_str(shape_));
  block_ = std::make_shared<Block>();
  block_->values.assign(std::size_t(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : Tensor(std::move(shape)) {
  if (long(values.size()) != shape_numel(shape_))
    fail(ErrCode::shape, "value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape_));
  block_->values = std::move(values);
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{1}, {v}); }

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  for (double& x : t.block_->values) x = v;
  return t;
}

long Tensor::size() const { return block_ ? long(block_->values.size()) : 0; }

double* Tensor::data() {
  if (!block_) fail(ErrCode::shape, "tensor is undefined");
  return block_->values.data();
}

const double* Tensor::data() const {
  if (!block_) fail(ErrCode::shape, "tensor is undefined");
  return block_->values.data();
}

const std::vector<double>& Tensor::values() const {
  if (!block_) fail(ErrCode::shape, "tensor is undefined");
  return block_->values;
}

double Tensor::item() const {
  if (size() != 1)
    fail(ErrCode::shape, "item() requires a single-element tensor, got " + shape_str(shape_));
  return block_->values[0];
}

double Tensor::operator()(int i) const { return values()[std::size_t(i)]; }

double Tensor::operator()(int i, int j) const {
  return values()[std::size_t(i) * std::size_t(shape_[1]) + std::size_t(j)];
}

Tensor Tensor::detached_copy() const {
  if (!block_) return Tensor();
  return Tensor(shape_, block_->values);
}

// ---------------------------------------------------------------------------
// Tape

namespace {
thread_local Tape* t_active = nullptr;
std::atomic<std::int64_t> g_tape_counter{1};
}  // namespace

struct TapeAccess {
  static const std::shared_ptr<Tensor::Block>& block(const Tensor& t) { return t.block_; }
  static std::vector<double>& grad(Tape& tp, int node) { return tp.grad_buf(node); }
  static int add_node(Tape& tp, long size, Tape::BackFn fn) {
    return tp.add_node(size, std::move(fn));
  }
};

namespace {

int node_of(const Tape& tp, const Tensor& t) {
  if (!t.defined()) return -1;
  const auto& b = TapeAccess::block(t);
  return b->tape_id == tp.id() ? b->node : -1;
}

// y += g
void axpy1(std::vector<double>& y, const std::vector<double>& g) {
  for (std::size_t i = 0; i < g.size(); ++i) y[i] += g[i];
}

}  // namespace

Tape::Tape() : id_(g_tape_counter.fetch_add(1)), prev_(t_active) { t_active = this; }

Tape::~Tape() { t_active = prev_; }

Tape* Tape::active() { return t_active; }

void Tape::watch(const Tensor& t) {
  if (!t.defined()) fail(ErrCode::validation, "cannot watch an undefined tensor");
  const auto& b = TapeAccess::block(t);
  if (b->tape_id == id_ && b->node >= 0) return;
  b->tape_id = id_;
  b->node = add_node(t.size(), nullptr);
}

bool Tape::tracked(const Tensor& t) const { return node_of(*this, t) >= 0; }

int Tape::add_node(long out_size, BackFn fn) {
  nodes_.push_back(Node{out_size, std::move(fn)});
  grads_.emplace_back();
  return int(nodes_.size()) - 1;
}

std::vector<double>& Tape::grad_buf(int node) {
  auto& g = grads_[std::size_t(node)];
  if (g.empty()) g.assign(std::size_t(nodes_[std::size_t(node)].out_size), 0.0);
  return g;
}

Tape::Gradients Tape::gradients(const Tensor& loss) {
  if (used_) fail(ErrCode::runtime, "tape already consumed by a gradients() call");
  used_ = true;
  if (loss.size() != 1)
    fail(ErrCode::validation, "gradients() requires a scalar loss, got " + shape_str(loss.shape()));
  Gradients out;
  out.tape_id_ = id_;
  int root = node_of(*this, loss);
  if (root < 0) {
    // loss does not depend on anything watched: every gradient is zero
    out.by_node_.assign(nodes_.size(), {});
    return out;
  }
  grad_buf(root)[0] = 1.0;
  // reverse append order; each node sees its complete output gradient
  for (int i = root; i >= 0; --i) {
    if (grads_[std::size_t(i)].empty()) continue;
    if (nodes_[std::size_t(i)].backward) nodes_[std::size_t(i)].backward(grads_[std::size_t(i)], *this);
  }
  out.by_node_ = std::move(grads_);
  grads_.assign(nodes_.size(), {});
  return out;
}

std::vector<double> Tape::Gradients::get(const Tensor& t) const {
  std::vector<double> zero(std::size_t(t.size()), 0.0);
  if (!t.defined()) return zero;
  const auto& b = TapeAccess::block(t);
  if (b->tape_id != tape_id_ || b->node < 0 || std::size_t(b->node) >= by_node_.size())
    return zero;
  const auto& g = by_node_[std::size_t(b->node)];
  if (g.empty()) return zero;
  return g;
}

bool Tape::Gradients::has(const Tensor& t) const {
  if (!t.defined()) return false;
  const auto& b = TapeAccess::block(t);
  return b->tape_id == tape_id_ && b->node >= 0 && std::size_t(b->node) < by_node_.size() &&
         !by_node_[std::size_t(b->node)].empty();
}

// ---------------------------------------------------------------------------
// Op plumbing

namespace {

Tensor make_tracked(Shape shape, std::vector<double> values,
                    std::initializer_list<const Tensor*> inputs, Tape::BackFn backward) {
  Tensor out(std::move(shape), std::move(values));
  Tape* tp = Tape::active();
  if (!tp) return out;
  bool any = false;
  for (const Tensor* t : inputs)
    if (t && node_of(*tp, *t) >= 0) {
      any = true;
      break;
    }
  if (!any) return out;
  const auto& b = TapeAccess::block(out);
  b->tape_id = tp->id();
  b->node = TapeAccess::add_node(*tp, out.size(), std::move(backward));
  return out;
}

void need(const char* op, std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts)
    if (t && !t->defined()) fail(ErrCode::shape, std::string(op) + ": undefined input tensor");
}

void need_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    fail(ErrCode::shape, std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
}

void need_rank2(const char* op, const Tensor& a) {
  if (a.rank() != 2)
    fail(ErrCode::shape, std::string(op) + ": expected rank-2 tensor, got " + shape_str(a.shape()));
}

int active_node(const Tensor& t) {
  Tape* tp = Tape::active();
  return tp ? node_of(*tp, t) : -1;
}

}  // namespace

void gemm(bool trans_a, bool trans_b, long m, long n, long k, const double* A, const double* B,
          double* C, bool accumulate) {
  if (m <= 0 || n <= 0) return;
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<Mat> c(C, m, n);
  if (k <= 0) {
    if (!accumulate) c.setZero();
    return;
  }
  Eigen::Map<const Mat> a(A, trans_a ? k : m, trans_a ? m : k);
  Eigen::Map<const Mat> b(B, trans_b ? n : k, trans_b ? k : n);
  if (!trans_a && !trans_b) {
    if (accumulate) c.noalias() += a * b; else c.noalias() = a * b;
  } else if (trans_a && !trans_b) {
    if (accumulate) c.noalias() += a.transpose() * b; else c.noalias() = a.transpose() * b;
  } else if (!trans_a && trans_b) {
    if (accumulate) c.noalias() += a * b.transpose(); else c.noalias() = a * b.transpose();
  } else {
    if (accumulate) c.noalias() += a.transpose() * b.transpose();
    else c.noalias() = a.transpose() * b.transpose();
  }
}

// ---------------------------------------------------------------------------
// Elementwise ops

Tensor add(const Tensor& a, const Tensor& b) {
  need("add", {&a, &b});
  need_same("add", a, b);
  std::vector<double> out(a.values());
  const double* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += pb[i];
  int na = active_node(a), nb = active_node(b);
  return make_tracked(a.shape(), std::move(out), {&a, &b},
                      [na, nb](const std::vector<double>& g, Tape& t) {
                        if (na >= 0) axpy1(TapeAccess::grad(t, na), g);
                        if (nb >= 0) axpy1(TapeAccess::grad(t, nb), g);
                      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  need("sub", {&a, &b});
  need_same("sub", a, b);
  std::vector<double> out(a.values());
  const double* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= pb[i];
  int na = active_node(a), nb = active_node(b);
  return make_tracked(a.shape(), std::move(out), {&a, &b},
                      [na, nb](const std::vector<double>& g, Tape& t) {
                        if (na >= 0) axpy1(TapeAccess::grad(t, na), g);
                        if (nb >= 0) {
                          auto& gb = TapeAccess::grad(t, nb);
                          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                        }
                      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  need("mul", {&a, &b});
  need_same("mul", a, b);
  std::vector<double> out(a.values());
  const double* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= pb[i];
  int na = active_node(a), nb = active_node(b);
  Tensor ca = a, cb = b;  // keep operand storage alive for the backward pass
  return make_tracked(a.shape(), std::move(out), {&a, &b},
                      [na, nb, ca, cb](const std::vector<double>& g, Tape& t) {
                        if (na >= 0) {
                          auto& ga = TapeAccess::grad(t, na);
                          const double* vb = cb.data();
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
                        }
                        if (nb >= 0) {
                          auto& gb = TapeAccess::grad(t, nb);
                          const double* va = ca.data();
                          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
                        }
                      });
}

Tensor scale(const Tensor& a, double s) {
  need("scale", {&a});
  std::vector<double> out(a.values());
  for (double& v : out) v *= s;
  int na = active_node(a);
  return make_tracked(a.shape(), std::move(out), {&a},
                      [na, s](const std::vector<double>& g, Tape& t) {
                        if (na < 0) return;
                        auto& ga = TapeAccess::grad(t, na);
                        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
                      });
}

Tensor add_scalar(const Tensor& a, double s) {
  need("add_scalar", {&a});
  std::vector<double> out(a.values());
  for (double& v : out) v += s;
  int na = active_node(a);
  return make_tracked(a.shape(), std::move(out), {&a},
                      [na](const std::vector<double>& g, Tape& t) {
                        if (na >= 0) axpy1(TapeAccess::grad(t, na), g);
                      });
}

Tensor mul_scalar_tensor(const Tensor& a, const Tensor& s) {
  need("mul_scalar_tensor", {&a, &s});
  if (s.size() != 1)
    fail(ErrCode::shape, "mul_scalar_tensor: scale must be a single element, got " +
                             shape_str(s.shape()));
  double sv = s.values()[0];
  std::vector<double> out(a.values());
  for (double& v : out) v *= sv;
  int na = active_node(a), ns = active_node(s);
  Tensor ca = a;
  return make_tracked(a.shape(), std::move(out), {&a, &s},
                      [na, ns, sv, ca](const std::vector<double>& g, Tape& t) {
                        if (na >= 0) {
                          auto& ga = TapeAccess::grad(t, na);
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sv;
                        }
                        if (ns >= 0) {
                          double acc = 0.0;
                          const double* va = ca.data();
                          for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * va[i];
                          TapeAccess::grad(t, ns)[0] += acc;
                        }
                      });
}

Tensor exp_t(const Tensor& a) {
  need("exp", {&a});
  std::vector<double> out(a.values());
  for (double& v : out) v = std::exp(v);
  int na = active_node(a);
  auto keep = std::make_shared<std::vector<double>>(out);
  return make_tracked(a.shape(), std::move(out), {&a},
                      [na, keep](const std::vector<double>& g, Tape& t) {
                        if (na < 0) return;
                        auto& ga = TapeAccess::grad(t, na);
                        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*keep)[i];
                      });
}

Tensor log_t(const Tensor& a) {
  need("log", {&a});
  constexpr double kFloor = 1e-12;
  std::vector<double> out(a.values());
  for (double& v : out) v = std::log(v < kFloor ? kFloor : v);
  int na = active_node(a);
  Tensor ca = a;
  return make_tracked(a.shape(), std::move(out), {&a},
                      [na, ca](const std::vector<double>& g, Tape& t) {
                        if (na < 0) return;
                        auto& ga = TapeAccess::grad(t, na);
                        const double* x = ca.data();
                        for (std::size_t i = 0; i < g.size(); ++i)
                          if (x[i] > kFloor) ga[i] += g[i] / x[i];
                      });
}

Tensor sigmoid(const Tensor& a) {
  need("sigmoid", {&a});
  std::vector<double> out(a.values());
  for (double& v : out) {
    if (v >= 0.0) {
      v = 1.0 / (1.0 + std::exp(-v));
    } else {
      double e = std::exp(v);
      v = e / (1.0 + e);
    }
  }
  int na = active_node(a);
  auto keep = std::make_shared<std::vector<double>>(out);
  return make_tracked(a.shape(), std::move(out), {&a},
                      [na, keep](const std::vector<double>& g, Tape& t) {
                        if (na < 0) return;
                        auto& ga = TapeAccess::grad(t, na);
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          double y = (*keep)[i];
                          ga[i] += g[i] * y * (1.0 - y);
                        }
                      });
}

Tensor relu(const Tensor& a) {
  need("relu", {&a});
  std::vector<double> out(a.values());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  int na = active_node(a);
  Tensor ca = a;
  return make_tracked(a.shape(), std::move(out), {&a},
                      [na, ca](const std::vector<double>& g, Tape& t) {
                        if (na < 0) return;
                        auto& ga = TapeAccess::grad(t, na);
                        const double* x = ca.data();
                        for (std::size_t i = 0; i < g.size(); ++i)
                          if (x[i] > 0.0) ga[i] += g[i];
                      });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  need("clamp", {&a});
  if (!(lo < hi)) fail(ErrCode::validation, "clamp: lo must be < hi");
  std::vector<double> out(a.values());
  for (double& v : out) v = v < lo ? lo : (v > hi ? hi : v);
  int na = active_node(a);
  Tensor ca = a;
  return make_tracked(a.shape(), std::move(out), {&a},
                      [na, ca, lo, hi](const std::vector<double>& g, Tape& t) {
                        if (na < 0) return;
                        auto& ga = TapeAccess::grad(t, na);
                        const double* x = ca.data();
                        for (std::size_t i = 0; i < g.size(); ++i)
                          if (x[i] > lo && x[i] < hi) ga[i] += g[i];
                      });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  need("matmul", {&a, &b});
  need_rank2("matmul", a);
  need_rank2("matmul", b);
  if (a.dim(1) != b.dim(0))
    fail(ErrCode::shape, "matmul: inner extents differ, " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
  long m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(std::size_t(m * n), 0.0);
  gemm(false, false, m, n, k, a.data(), b.data(), out.data(), false);
  int na = active_node(a), nb = active_node(b);
  Tensor ca = a, cb = b;
  return make_tracked({int(m), int(n)}, std::move(out), {&a, &b},
                      [na, nb, ca, cb, m, k, n](const std::vector<double>& g, Tape& t) {
                        if (na >= 0)
                          gemm(false, true, m, k, n, g.data(), cb.data(),
                               TapeAccess::grad(t, na).data(), true);
                        if (nb >= 0)
                          gemm(true, false, k, n, m, ca.data(), g.data(),
                               TapeAccess::grad(t, nb).data(), true);
                      });
}

Tensor transpose(const Tensor& a) {
  need("transpose", {&a});
  need_rank2("transpose", a);
  int m = a.dim(0), n = a.dim(1);
  std::vector<double> out(std::size_t(m) * std::size_t(n));
  const double* pa = a.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[std::size_t(j) * m + i] = pa[std::size_t(i) * n + j];
  int na = active_node(a);
  return make_tracked({n, m}, std::move(out), {&a},
                      [na, m, n](const std::vector<double>& g, Tape& t) {
                        if (na < 0) return;
                        auto& ga = TapeAccess::grad(t, na);
                        for (int j = 0; j < n; ++j)
                          for (int i = 0; i < m; ++i)
                            ga[std::size_t(i) * n + j] += g[std::size_t(j) * m + i];
                      });
}

Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b) {
  need("affine", {&x, &W});
  need_rank2("affine", W);
  bool vec = x.rank() == 1;
  if (!vec) need_rank2("affine", x);
  long n = vec ? 1 : x.dim(0);
  long in = vec ? x.dim(0) : x.dim(1);
  long out_dim = W.dim(1);
  if (in != W.dim(0))
    fail(ErrCode::shape, "affine: input width " + std::to_string(in) + " does not match weight " +
                             shape_str(W.shape()));
  if (b.defined() && (b.rank() != 1 || b.dim(0) != out_dim))
    fail(ErrCode::shape, "affine: bias shape " + shape_str(b.shape()) + " does not match output width " +
                             std::to_string(out_dim));
  std::vector<double> out(std::size_t(n * out_dim), 0.0);
  gemm(false, false, n, out_dim, in, x.data(), W.data(), out.data(), false);
  if (b.defined()) {
    const double* pb = b.data();
    for (long r = 0; r < n; ++r)
      for (long c = 0; c < out_dim; ++c) out[std::size_t(r * out_dim + c)] += pb[c];
  }
  int nx = active_node(x), nw = active_node(W), nb = active_node(b);
  Tensor cx = x, cw = W;
  Shape out_shape = vec ? Shape{int(out_dim)} : Shape{int(n), int(out_dim)};
  return make_tracked(std::move(out_shape), std::move(out), {&x, &W, &b},
                      [nx, nw, nb, cx, cw, n, in, out_dim](const std::vector<double>& g, Tape& t) {
                        if (nx >= 0)
                          gemm(false, true, n, in, out_dim, g.data(), cw.data(),
                               TapeAccess::grad(t, nx).data(), true);
                        if (nw >= 0)
                          gemm(true, false, in, out_dim, n, cx.data(), g.data(),
                               TapeAccess::grad(t, nw).data(), true);
                        if (nb >= 0) {
                          auto& gb = TapeAccess::grad(t, nb);
                          for (long r = 0; r < n; ++r)
                            for (long c = 0; c < out_dim; ++c)
                              gb[std::size_t(c)] += g[std::size_t(r * out_dim + c)];
                        }
                      });
}

// ---------------------------------------------------------------------------
// Shape ops

Tensor reshape(const Tensor& a, Shape shape) {
  need("reshape", {&a});
  if (shape_numel(shape) != a.size())
    fail(ErrCode::shape, "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  int na = active_node(a);
  return make_tracked(std::move(shape), a.values(), {&a},
                      [na](const std::vector<double>& g, Tape& t) {
                        if (na >= 0) axpy1(TapeAccess::grad(t, na), g);
                      });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) fail(ErrCode::shape, "concat_cols: no inputs");
  int rows = -1;
  long total = 0;
  for (const Tensor& p : parts) {
    need("concat_cols", {&p});
    need_rank2("concat_cols", p);
    if (rows < 0) rows = p.dim(0);
    if (p.dim(0) != rows)
      fail(ErrCode::shape, "concat_cols: row count mismatch " + shape_str(p.shape()));
    total += p.dim(1);
  }
  std::vector<double> out(std::size_t(rows) * std::size_t(total));
  long off = 0;
  std::vector<int> nodes;
  std::vector<long> widths;
  std::vector<const Tensor*> ptrs;
  for (const Tensor& p : parts) {
    long w = p.dim(1);
    const double* pp = p.data();
    for (int r = 0; r < rows; ++r)
      std::memcpy(&out[std::size_t(r) * total + off], pp + std::size_t(r) * w,
                  std::size_t(w) * sizeof(double));
    nodes.push_back(active_node(p));
    widths.push_back(w);
    ptrs.push_back(&p);
    off += w;
  }
  Tape* tp = Tape::active();
  bool any = false;
  if (tp)
    for (const Tensor& p : parts)
      if (tp->tracked(p)) { any = true; break; }
  Tensor result(Shape{rows, int(total)}, std::move(out));
  if (tp && any) {
    const auto& blk = TapeAccess::block(result);
    blk->tape_id = tp->id();
    long tot = total;
    int nrows = rows;
    blk->node = TapeAccess::add_node(
        *tp, result.size(),
        [nodes, widths, tot, nrows](const std::vector<double>& g, Tape& t) {
          long off2 = 0;
          for (std::size_t k = 0; k < nodes.size(); ++k) {
            long w = widths[k];
            if (nodes[k] >= 0) {
              auto& gp = TapeAccess::grad(t, nodes[k]);
              for (int r = 0; r < nrows; ++r)
                for (long c = 0; c < w; ++c)
                  gp[std::size_t(r) * w + c] += g[std::size_t(r) * tot + off2 + c];
            }
            off2 += w;
          }
        });
  }
  return result;
}

Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) fail(ErrCode::shape, "stack_rows: no inputs");
  int d = -1;
  for (const Tensor& r : rows) {
    need("stack_rows", {&r});
    if (r.rank() != 1)
      fail(ErrCode::shape, "stack_rows: expected rank-1 rows, got " + shape_str(r.shape()));
    if (d < 0) d = r.dim(0);
    if (r.dim(0) != d) fail(ErrCode::shape, "stack_rows: row width mismatch");
  }
  int n = int(rows.size());
  std::vector<double> out(std::size_t(n) * std::size_t(d));
  std::vector<int> nodes;
  for (int i = 0; i < n; ++i) {
    std::memcpy(&out[std::size_t(i) * d], rows[std::size_t(i)].data(),
                std::size_t(d) * sizeof(double));
    nodes.push_back(active_node(rows[std::size_t(i)]));
  }
  Tape* tp = Tape::active();
  bool any = false;
  if (tp)
    for (const Tensor& r : rows)
      if (tp->tracked(r)) { any = true; break; }
  Tensor result(Shape{n, d}, std::move(out));
  if (tp && any) {
    const auto& blk = TapeAccess::block(result);
    blk->tape_id = tp->id();
    int dd = d;
    blk->node = TapeAccess::add_node(
        *tp, result.size(), [nodes, dd](const std::vector<double>& g, Tape& t) {
          for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (nodes[i] < 0) continue;
            auto& gr = TapeAccess::grad(t, nodes[i]);
            for (int c = 0; c < dd; ++c) gr[std::size_t(c)] += g[i * std::size_t(dd) + std::size_t(c)];
          }
        });
  }
  return result;
}

Tensor slice_cols(const Tensor& a, int begin, int count) {
  need("slice_cols", {&a});
  need_rank2("slice_cols", a);
  int m = a.dim(0), n = a.dim(1);
  if (begin < 0 || count < 1 || begin + count > n)
    fail(ErrCode::shape, "slice_cols: range [" + std::to_string(begin) + ", " +
                             std::to_string(begin + count) + ") out of " + shape_str(a.shape()));
  std::vector<double> out(std::size_t(m) * std::size_t(count));
  const double* pa = a.data();
  for (int r = 0; r < m; ++r)
    std::memcpy(&out[std::size_t(r) * count], pa + std::size_t(r) * n + begin,
                std::size_t(count) * sizeof(double));
  int na = active_node(a);
  return make_tracked({m, count}, std::move(out), {&a},
                      [na, m, n, begin, count](const std::vector<double>& g, Tape& t) {
                        if (na < 0) return;
                        auto& ga = TapeAccess::grad(t, na);
                        for (int r = 0; r < m; ++r)
                          for (int c = 0; c < count; ++c)
                            ga[std::size_t(r) * n + begin + c] += g[std::size_t(r) * count + c];
                      });
}

Tensor slice_rows(const Tensor& a, int begin, int count) {
  need("slice_rows", {&a});
  need_rank2("slice_rows", a);
  int m = a.dim(0), n = a.dim(1);
  if (begin < 0 || count < 1 || begin + count > m)
    fail(ErrCode::shape, "slice_rows: range [" + std::to_string(begin) + ", " +
                             std::to_string(begin + count) + ") out of " + shape_str(a.shape()));
  std::vector<double> out(std::size_t(count) * std::size_t(n));
  std::memcpy(out.data(), a.data() + std::size_t(begin) * n, out.size() * sizeof(double));
  int na = active_node(a);
  return make_tracked({count, n}, std::move(out), {&a},
                      [na, n, begin](const std::vector<double>& g, Tape& t) {
                        if (na < 0) return;
                        auto& ga = TapeAccess::grad(t, na);
                        for (std::size_t i = 0; i < g.size(); ++i)
                          ga[std::size_t(begin) * n + i] += g[i];
                      });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum_all(const Tensor& a) {
  need("sum_all", {&a});
  double s = 0.0;
  for (double v : a.values()) s += v;
  int na = active_node(a);
  long sz = a.size();
  return make_tracked({1}, {s}, {&a}, [na, sz](const std::vector<double>& g, Tape& t) {
    if (na < 0) return;
    auto& ga = TapeAccess::grad(t, na);
    for (long i = 0; i < sz; ++i) ga[std::size_t(i)] += g[0];
  });
}

Tensor sum_axis(const Tensor& a, int axis) {
  need("sum_axis", {&a});
  need_rank2("sum_axis", a);
  if (axis != 0 && axis != 1) fail(ErrCode::shape, "sum_axis: axis must be 0 or 1");
  int m = a.dim(0), n = a.dim(1);
  const double* pa = a.data();
  std::vector<double> out(std::size_t(axis == 0 ? n : m), 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[std::size_t(axis == 0 ? j : i)] += pa[std::size_t(i) * n + j];
  int na = active_node(a);
  return make_tracked({axis == 0 ? n : m}, std::move(out), {&a},
                      [na, m, n, axis](const std::vector<double>& g, Tape& t) {
                        if (na < 0) return;
                        auto& ga = TapeAccess::grad(t, na);
                        for (int i = 0; i < m; ++i)
                          for (int j = 0; j < n; ++j)
                            ga[std::size_t(i) * n + j] += g[std::size_t(axis == 0 ? j : i)];
                      });
}

Tensor mean_axis(const Tensor& a, int axis) {
  Tensor s = sum_axis(a, axis);
  return scale(s, 1.0 / double(axis == 0 ? a.dim(0) : a.dim(1)));
}

// ---------------------------------------------------------------------------
// Normalization and softmax

namespace {

// rows/cols view: rank-1 treated as a single row
void rows_cols(const Tensor& a, const char* op, int& rows, int& cols) {
  if (a.rank() == 1) {
    rows = 1;
    cols = a.dim(0);
  } else if (a.rank() == 2) {
    rows = a.dim(0);
    cols = a.dim(1);
  } else {
    fail(ErrCode::shape, std::string(op) + ": expected rank 1 or 2, got " + shape_str(a.shape()));
  }
}

}  // namespace

Tensor l2_normalize(const Tensor& a) {
  need("l2_normalize", {&a});
  int rows = 0, cols = 0;
  rows_cols(a, "l2_normalize", rows, cols);
  constexpr double kEps = 1e-12;
  const double* pa = a.data();
  std::vector<double> out(std::size_t(rows) * std::size_t(cols));
  std::vector<double> norms(std::size_t(rows), 0.0);
  for (int r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int c = 0; c < cols; ++c) {
      double v = pa[std::size_t(r) * cols + c];
      s += v * v;
    }
    double nr = std::sqrt(s + kEps);
    norms[std::size_t(r)] = nr;
    for (int c = 0; c < cols; ++c) out[std::size_t(r) * cols + c] = pa[std::size_t(r) * cols + c] / nr;
  }
  int na = active_node(a);
  Tensor ca = a;
  auto keep_norms = std::make_shared<std::vector<double>>(std::move(norms));
  return make_tracked(a.shape(), std::move(out), {&a},
                      [na, ca, keep_norms, rows, cols](const std::vector<double>& g, Tape& t) {
                        if (na < 0) return;
                        auto& ga = TapeAccess::grad(t, na);
                        const double* x = ca.data();
                        for (int r = 0; r < rows; ++r) {
                          double nr = (*keep_norms)[std::size_t(r)];
                          double dot = 0.0;
                          for (int c = 0; c < cols; ++c)
                            dot += g[std::size_t(r) * cols + c] * x[std::size_t(r) * cols + c];
                          double n3 = nr * nr * nr;
                          for (int c = 0; c < cols; ++c) {
                            std::size_t i = std::size_t(r) * cols + c;
                            ga[i] += g[i] / nr - x[i] * dot / n3;
                          }
                        }
                      });
}

Tensor softmax(const Tensor& a) {
  need("softmax", {&a});
  int rows = 0, cols = 0;
  rows_cols(a, "softmax", rows, cols);
  const double* pa = a.data();
  std::vector<double> out(std::size_t(rows) * std::size_t(cols));
  for (int r = 0; r < rows; ++r) {
    const double* x = pa + std::size_t(r) * cols;
    double* y = out.data() + std::size_t(r) * cols;
    double mx = x[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    double z = 0.0;
    for (int c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      z += y[c];
    }
    for (int c = 0; c < cols; ++c) y[c] /= z;
  }
  int na = active_node(a);
  auto keep = std::make_shared<std::vector<double>>(out);
  return make_tracked(a.shape(), std::move(out), {&a},
                      [na, keep, rows, cols](const std::vector<double>& g, Tape& t) {
                        if (na < 0) return;
                        auto& ga = TapeAccess::grad(t, na);
                        for (int r = 0; r < rows; ++r) {
                          const double* y = keep->data() + std::size_t(r) * cols;
                          const double* gr = g.data() + std::size_t(r) * cols;
                          double dot = 0.0;
                          for (int c = 0; c < cols; ++c) dot += gr[c] * y[c];
                          for (int c = 0; c < cols; ++c)
                            ga[std::size_t(r) * cols + c] += y[c] * (gr[c] - dot);
                        }
                      });
}

Tensor log_softmax(const Tensor& a) {
  need("log_softmax", {&a});
  int rows = 0, cols = 0;
  rows_cols(a, "log_softmax", rows, cols);
  const double* pa = a.data();
  std::vector<double> out(std::size_t(rows) * std::size_t(cols));
  for (int r = 0; r < rows; ++r) {
    const double* x = pa + std::size_t(r) * cols;
    double* y = out.data() + std::size_t(r) * cols;
    double mx = x[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    double z = 0.0;
    for (int c = 0; c < cols; ++c) z += std::exp(x[c] - mx);
    double lz = mx + std::log(z);
    for (int c = 0; c < cols; ++c) y[c] = x[c] - lz;
  }
  int na = active_node(a);
  auto keep = std::make_shared<std::vector<double>>(out);
  return make_tracked(a.shape(), std::move(out), {&a},
                      [na, keep, rows, cols](const std::vector<double>& g, Tape& t) {
                        if (na < 0) return;
                        auto& ga = TapeAccess::grad(t, na);
                        for (int r = 0; r < rows; ++r) {
                          const double* lsm = keep->data() + std::size_t(r) * cols;
                          const double* gr = g.data() + std::size_t(r) * cols;
                          double gsum = 0.0;
                          for (int c = 0; c < cols; ++c) gsum += gr[c];
                          for (int c = 0; c < cols; ++c)
                            ga[std::size_t(r) * cols + c] += gr[c] - std::exp(lsm[c]) * gsum;
                        }
                      });
}

Tensor diagonal(const Tensor& a) {
  need("diagonal", {&a});
  need_rank2("diagonal", a);
  if (a.dim(0) != a.dim(1))
    fail(ErrCode::shape, "diagonal: expected a square matrix, got " + shape_str(a.shape()));
  int n = a.dim(0);
  std::vector<double> out(std::size_t(n), 0.0);
  const double* pa = a.data();
  for (int i = 0; i < n; ++i) out[std::size_t(i)] = pa[std::size_t(i) * n + i];
  int na = active_node(a);
  return make_tracked({n}, std::move(out), {&a},
                      [na, n](const std::vector<double>& g, Tape& t) {
                        if (na < 0) return;
                        auto& ga = TapeAccess::grad(t, na);
                        for (int i = 0; i < n; ++i) ga[std::size_t(i) * n + i] += g[std::size_t(i)];
                      });
}

// ---------------------------------------------------------------------------
// 3-D convolution (kernel 3, pad 1) via im2col + GEMM

namespace {

struct ConvDims {
  int cin, X, Y, Z, cout, Xo, Yo, Zo, stride;
  long l() const { return long(Xo) * Yo * Zo; }
  long cols() const { return long(cin) * 27; }
};

ConvDims conv_dims(const Tensor& x, const Tensor& W, const Tensor& b, int stride) {
  if (x.rank() != 4)
    fail(ErrCode::shape, "conv3d: expected input [cin,X,Y,Z], got " + shape_str(x.shape()));
  if (stride < 1) fail(ErrCode::shape, "conv3d: stride must be >= 1");
  ConvDims d{};
  d.cin = x.dim(0);
  d.X = x.dim(1);
  d.Y = x.dim(2);
  d.Z = x.dim(3);
  d.stride = stride;
  if (W.rank() != 2 || W.dim(1) != d.cin * 27)
    fail(ErrCode::shape, "conv3d: weight must be [cout," + std::to_string(d.cin * 27) + "], got " +
                             shape_str(W.shape()));
  d.cout = W.dim(0);
  if (b.defined() && (b.rank() != 1 || b.dim(0) != d.cout))
    fail(ErrCode::shape, "conv3d: bias shape " + shape_str(b.shape()) + " does not match cout");
  auto out_extent = [stride](int n) { return (n - 3 + 2) / stride + 1; };
  d.Xo = out_extent(d.X);
  d.Yo = out_extent(d.Y);
  d.Zo = out_extent(d.Z);
  if (d.Xo < 1 || d.Yo < 1 || d.Zo < 1)
    fail(ErrCode::shape, "conv3d: input " + shape_str(x.shape()) + " too small for stride " +
                             std::to_string(stride));
  return d;
}

// P[p, (c*3+kx)*9 + ky*3 + kz] = x[c, ox*s-1+kx, oy*s-1+ky, oz*s-1+kz], 0 outside
void im2col(const ConvDims& d, const double* x, double* P) {
  long cols = d.cols();
  parallel_for(d.l(), [&](long lo, long hi) {
    for (long p = lo; p < hi; ++p) {
      int oz = int(p % d.Zo);
      int oy = int((p / d.Zo) % d.Yo);
      int ox = int(p / (long(d.Zo) * d.Yo));
      double* row = P + p * cols;
      for (int c = 0; c < d.cin; ++c) {
        const double* xc = x + (std::size_t(c) * d.X) * d.Y * d.Z;
        for (int kx = 0; kx < 3; ++kx) {
          int ix = ox * d.stride - 1 + kx;
          for (int ky = 0; ky < 3; ++ky) {
            int iy = oy * d.stride - 1 + ky;
            for (int kz = 0; kz < 3; ++kz) {
              int iz = oz * d.stride - 1 + kz;
              double v = 0.0;
              if (ix >= 0 && ix < d.X && iy >= 0 && iy < d.Y && iz >= 0 && iz < d.Z)
                v = xc[(std::size_t(ix) * d.Y + iy) * d.Z + iz];
              row[((long(c) * 3 + kx) * 3 + ky) * 3 + kz] = v;
            }
          }
        }
      }
    }
  });
}

// scatter dP back onto the input grid; parallel over channels (disjoint writes)
void col2im(const ConvDims& d, const double* dP, double* dx) {
  long cols = d.cols();
  parallel_for(d.cin, [&](long clo, long chi) {
    for (long c = clo; c < chi; ++c) {
      double* xc = dx + (std::size_t(c) * d.X) * d.Y * d.Z;
      for (long p = 0; p < d.l(); ++p) {
        int oz = int(p % d.Zo);
        int oy = int((p / d.Zo) % d.Yo);
        int ox = int(p / (long(d.Zo) * d.Yo));
        const double* row = dP + p * cols;
        for (int kx = 0; kx < 3; ++kx) {
          int ix = ox * d.stride - 1 + kx;
          if (ix < 0 || ix >= d.X) continue;
          for (int ky = 0; ky < 3; ++ky) {
            int iy = oy * d.stride - 1 + ky;
            if (iy < 0 || iy >= d.Y) continue;
            for (int kz = 0; kz < 3; ++kz) {
              int iz = oz * d.stride - 1 + kz;
              if (iz < 0 || iz >= d.Z) continue;
              xc[(std::size_t(ix) * d.Y + iy) * d.Z + iz] +=
                  row[((c * 3 + kx) * 3 + ky) * 3 + kz];
            }
          }
        }
      }
    }
  });
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& W, const Tensor& b, int stride) {
  need("conv3d", {&x, &W});
  ConvDims d = conv_dims(x, W, b, stride);
  long l = d.l(), cols = d.cols();
  auto P = std::make_shared<std::vector<double>>(std::size_t(l * cols));
  im2col(d, x.data(), P->data());
  // out_mat[p, c] then scattered to channel-major layout
  std::vector<double> out_mat(std::size_t(l) * std::size_t(d.cout));
  gemm(false, true, l, d.cout, cols, P->data(), W.data(), out_mat.data(), false);
  if (b.defined()) {
    const double* pb = b.data();
    for (long p = 0; p < l; ++p)
      for (int c = 0; c < d.cout; ++c) out_mat[std::size_t(p) * d.cout + c] += pb[c];
  }
  std::vector<double> out(std::size_t(d.cout) * std::size_t(l));
  parallel_for(l, [&](long lo, long hi) {
    for (long p = lo; p < hi; ++p)
      for (int c = 0; c < d.cout; ++c)
        out[std::size_t(c) * l + p] = out_mat[std::size_t(p) * d.cout + c];
  });
  int nx = active_node(x), nw = active_node(W), nb = active_node(b);
  Tensor cw = W;
  return make_tracked(
      {d.cout, d.Xo, d.Yo, d.Zo}, std::move(out), {&x, &W, &b},
      [nx, nw, nb, cw, P, d, l, cols](const std::vector<double>& g, Tape& t) {
        // g arrives channel-major; regroup voxel-major first
        std::vector<double> g_mat(std::size_t(l) * std::size_t(d.cout));
        for (int c = 0; c < d.cout; ++c)
          for (long p = 0; p < l; ++p)
            g_mat[std::size_t(p) * d.cout + c] = g[std::size_t(c) * l + p];
        if (nb >= 0) {
          auto& gb = TapeAccess::grad(t, nb);
          for (long p = 0; p < l; ++p)
            for (int c = 0; c < d.cout; ++c) gb[std::size_t(c)] += g_mat[std::size_t(p) * d.cout + c];
        }
        if (nw >= 0)
          gemm(true, false, d.cout, cols, l, g_mat.data(), P->data(),
               TapeAccess::grad(t, nw).data(), true);
        if (nx >= 0) {
          std::vector<double> dP(std::size_t(l) * std::size_t(cols));
          gemm(false, false, l, cols, d.cout, g_mat.data(), cw.data(), dP.data(), false);
          col2im(d, dP.data(), TapeAccess::grad(t, nx).data());
        }
      });
}

Tensor channels_last(const Tensor& x) {
  need("channels_last", {&x});
  if (x.rank() != 4)
    fail(ErrCode::shape, "channels_last: expected [c,X,Y,Z], got " + shape_str(x.shape()));
  int c = x.dim(0);
  long l = long(x.dim(1)) * x.dim(2) * x.dim(3);
  const double* px = x.data();
  std::vector<double> out(std::size_t(l) * std::size_t(c));
  for (int ch = 0; ch < c; ++ch)
    for (long p = 0; p < l; ++p) out[std::size_t(p) * c + ch] = px[std::size_t(ch) * l + p];
  int nx = active_node(x);
  return make_tracked({int(l), c}, std::move(out), {&x},
                      [nx, c, l](const std::vector<double>& g, Tape& t) {
                        if (nx < 0) return;
                        auto& gx = TapeAccess::grad(t, nx);
                        for (int ch = 0; ch < c; ++ch)
                          for (long p = 0; p < l; ++p)
                            gx[std::size_t(ch) * l + p] += g[std::size_t(p) * c + ch];
                      });
}

// ---------------------------------------------------------------------------
// Finite differences

double finite_diff_check(const std::function<Tensor(std::span<const Tensor>)>& f,
                         std::span<const Tensor> params, double eps) {
  std::vector<Tensor> mutable_params(params.begin(), params.end());  // share storage
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    for (Tensor& p : mutable_params) tape.watch(p);
    Tensor loss = f(params);
    if (loss.size() != 1) fail(ErrCode::validation, "finite_diff_check: f must return a scalar");
    auto grads = tape.gradients(loss);
    for (const Tensor& p : params) analytic.push_back(grads.get(p));
  }
  double worst = 0.0;
  for (std::size_t pi = 0; pi < mutable_params.size(); ++pi) {
    double* v = mutable_params[pi].data();
    for (long j = 0; j < mutable_params[pi].size(); ++j) {
      double orig = v[j];
      v[j] = orig + eps;
      double fp = f(params).item();
      v[j] = orig - eps;
      double fm = f(params).item();
      v[j] = orig;
      double num = (fp - fm) / (2.0 * eps);
      double ana = analytic[pi][std::size_t(j)];
      double denom = std::max({std::fabs(ana), std::fabs(num), 1e-8});
      worst = std::max(worst, std::fabs(ana - num) / denom);
    }
  }
  return worst;
}

}  // namespace ub
