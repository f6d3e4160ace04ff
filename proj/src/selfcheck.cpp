#include "unibrain/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <numeric>
#include <vector>

#include "unibrain/alignment.hpp"
#include "unibrain/cvp.hpp"
#include "unibrain/encoders.hpp"
#include "unibrain/metrics.hpp"
#include "unibrain/model.hpp"

namespace ub {

namespace {

Tensor randn(Shape shape, Rng& rng, double s = 1.0) {
  Tensor t(std::move(shape));
  double* p = t.data();
  for (long i = 0; i < t.size(); ++i) p[i] = s * rng.normal();
  return t;
}

Tensor unit_rows(int n, int d, Rng& rng) {
  Tensor t = randn({n, d}, rng);
  double* p = t.data();
  for (int r = 0; r < n; ++r) {
    double norm = 0.0;
    for (int c = 0; c < d; ++c) norm += p[r * d + c] * p[r * d + c];
    norm = std::sqrt(norm);
    for (int c = 0; c < d; ++c) p[r * d + c] /= norm;
  }
  return t;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1e", v);
  return buf;
}

struct Report {
  std::ostream& os;
  bool all_ok = true;
  int suites = 0;

  void line(const std::string& name, bool ok, const std::string& detail) {
    ++suites;
    all_ok = all_ok && ok;
    os << std::left << std::setw(30) << name << (ok ? "pass" : "FAIL");
    if (!detail.empty()) os << "  (" << detail << ")";
    os << '\n';
  }
};

// ---- gradient suites -------------------------------------------------------

double fd_primitives() {
  Rng rng(101);
  double worst = 0.0;
  {
    Tensor x = randn({3, 5}, rng), W = randn({5, 4}, rng, 0.5), b = randn({4}, rng, 0.1);
    std::vector<Tensor> ps{x, W, b};
    worst = std::max(worst, finite_diff_check(
                                [](std::span<const Tensor> p) {
                                  return sum_all(relu(affine(p[0], p[1], p[2])));
                                },
                                ps));
  }
  {
    Tensor x = randn({2, 5, 5, 4}, rng, 0.5);
    Tensor W = randn({3, 2 * 27}, rng, 0.2), b = randn({3}, rng, 0.1);
    std::vector<Tensor> ps{x, W, b};
    worst = std::max(worst, finite_diff_check(
                                [](std::span<const Tensor> p) {
                                  return sum_all(sigmoid(conv3d(p[0], p[1], p[2], 2)));
                                },
                                ps));
  }
  {
    Tensor a = randn({4, 6}, rng);
    std::vector<Tensor> ps{a};
    worst = std::max(worst, finite_diff_check(
                                [](std::span<const Tensor> p) {
                                  Tensor sm = softmax(p[0]);
                                  return sum_all(mul(sm, sm));
                                },
                                ps));
    worst = std::max(worst, finite_diff_check(
                                [](std::span<const Tensor> p) {
                                  return sum_all(mul(l2_normalize(p[0]), log_softmax(p[0])));
                                },
                                ps));
  }
  {
    Tensor a = randn({3, 4}, rng), bm = randn({4, 5}, rng);
    std::vector<Tensor> ps{a, bm};
    worst = std::max(worst, finite_diff_check(
                                [](std::span<const Tensor> p) {
                                  return sum_all(matmul(transpose(p[0]), matmul(p[0], p[1])));
                                },
                                ps));
  }
  {
    Tensor u1 = randn({6, 4}, rng), u2 = randn({6, 4}, rng);
    Tensor W = randn({8, 4}, rng, 0.4), b = randn({4}, rng, 0.1);
    std::vector<Tensor> ps{u1, u2, W, b};
    worst = std::max(worst, finite_diff_check(
                                [](std::span<const Tensor> p) {
                                  std::vector<Tensor> mods{p[0], p[1]};
                                  Tensor fused = fuse_modalities(mods, p[2], p[3]);
                                  return sum_all(mul(pool_patches(fused), pool_patches(p[0])));
                                },
                                ps));
  }
  return worst;
}

double fd_full_objective() {
  // two-case batch through the whole network: encode, fuse, decode, classify,
  // align, combine -- then differentiate with respect to one parameter of
  // every family plus the temperature
  ModelConfig cfg;
  cfg.input_dims = {8, 8, 8};
  cfg.conv1 = 3;
  cfg.conv2 = 4;
  cfg.proj_hidden = 6;
  cfg.d = 8;
  cfg.heads = 2;
  cfg.blocks = 1;
  cfg.ffn = 12;
  cfg.cls_hidden = 6;
  cfg.text_vocab = 128;

  std::vector<std::string> modalities{"M1", "M2"};
  std::vector<std::string> classes{"normal", "a", "b"};
  std::vector<DiseaseQuery> queries{{"normal", "nothing"}, {"a", "spot"}, {"b", "ring"}};
  Model m = init_model(cfg, Toggles{}, modalities, classes, queries, 2024);

  Rng rng(55);
  const int B = 2, K = 2;
  std::vector<std::vector<Tensor>> vols(B);
  std::vector<Tensor> labels;
  std::vector<std::vector<Tensor>> txt(std::size_t(K) + 1);  // K modality rows + global
  for (int i = 0; i < B; ++i) {
    for (int k = 0; k < K; ++k) vols[std::size_t(i)].push_back(randn({1, 8, 8, 8}, rng, 0.5));
    labels.push_back(Tensor({3}, {double(i), 1.0, 0.0}));
    for (int k = 0; k <= K; ++k)
      txt[std::size_t(k)].push_back(Tensor({cfg.d}, m.text->encode("report " + std::to_string(i) +
                                                                   " stream " + std::to_string(k))));
  }
  Tensor qm = m.query_matrix(m.queries);

  auto loss_fn = [&](std::span<const Tensor>) -> Tensor {
    std::vector<Tensor> prob_rows, label_rows;
    std::vector<std::vector<Tensor>> img(std::size_t(K) + 1);
    for (int i = 0; i < B; ++i) {
      CaseEncoding enc = m.encode_case(vols[std::size_t(i)]);
      prob_rows.push_back(m.probs_from_decoded(m.decode(qm, enc.fused).decoded));
      label_rows.push_back(labels[std::size_t(i)]);
      for (int k = 0; k < K; ++k) img[std::size_t(k)].push_back(enc.pooled[std::size_t(k)]);
      img[std::size_t(K)].push_back(enc.fused_pooled);
    }
    Tensor bce = bce_loss(stack_rows(prob_rows), stack_rows(label_rows));
    std::vector<double> w(std::size_t(B), 1.0);
    std::vector<Tensor> align;
    for (int k = 0; k <= K; ++k)
      align.push_back(contrastive_loss(stack_rows(img[std::size_t(k)]),
                                       stack_rows(txt[std::size_t(k)]), m.log_tau(), w));
    return combine_losses(bce, align);
  };

  std::vector<Tensor> checked;
  for (const char* name : {"enc.conv1.W", "enc.conv2.b", "proj.W1", "proj.b2", "fuse.W",
                           "cvp.b0.Wq", "cvp.b0.bv", "cvp.b0.Wf1", "cls.W1", "cls.b2", "log_tau"})
    checked.push_back(m.params.get(name));
  return finite_diff_check(loss_fn, checked, 1e-5);
}

// ---- analytic-vs-naive suites ----------------------------------------------

// the loss straight from its definition, no tensor ops involved
double naive_contrastive(const Tensor& img, const Tensor& txt, double tau,
                         const std::vector<double>& w) {
  int B = img.dim(0), d = img.dim(1);
  auto sim = [&](int i, int j) {
    double s = 0.0;
    for (int c = 0; c < d; ++c) s += img(i, c) * txt(j, c);
    return s / tau;
  };
  double total = 0.0;
  for (int i = 0; i < B; ++i) {
    double row = 0.0, col = 0.0;
    for (int j = 0; j < B; ++j) {
      row += std::exp(sim(i, j));
      col += std::exp(sim(j, i));
    }
    total += w[std::size_t(i)] *
             (std::log(std::exp(sim(i, i)) / row) + std::log(std::exp(sim(i, i)) / col));
  }
  return -total / double(B);
}

double contrastive_agreement() {
  Rng rng(77);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    int B = 2 + int(rng.below(7));
    int d = 4 + int(rng.below(12));
    Tensor img = unit_rows(B, d, rng);
    Tensor txt = unit_rows(B, d, rng);
    // duplicate text rows at random so the debias weights matter
    std::vector<std::string> keys;
    for (int i = 0; i < B; ++i) keys.push_back("r" + std::to_string(rng.below(3)));
    for (int i = 0; i < B; ++i) {
      int first = -1;
      for (int j = 0; j < B; ++j)
        if (keys[std::size_t(j)] == keys[std::size_t(i)]) {
          first = j;
          break;
        }
      if (first != i)
        for (int c = 0; c < d; ++c) txt.data()[i * d + c] = txt(first, c);
    }
    double log_tau = rng.uniform(-1.0, 1.0);
    std::vector<double> w = duplicate_weights(keys);
    double got = contrastive_loss(img, txt, Tensor::scalar(log_tau), w).item();
    double want = naive_contrastive(img, txt, std::exp(log_tau), w);
    worst = std::max(worst, std::fabs(got - want));
  }
  // frozen anchors
  {
    Tensor one({1, 3}, {1.0, 0.0, 0.0});
    std::vector<double> w{1.0};
    worst = std::max(worst, std::fabs(contrastive_loss(one, one, Tensor::scalar(0.3), w).item()));
    Tensor pair({2, 2}, {1, 0, 1, 0});
    std::vector<double> wp = duplicate_weights({"same", "same"});
    double dup = contrastive_loss(pair, pair, Tensor::scalar(0.0), wp).item();
    worst = std::max(worst, std::fabs(dup - std::log(2.0)));
  }
  return worst;
}

bool weight_mass_exact(std::string& detail) {
  Rng rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    int B = 1 + int(rng.below(17));
    std::vector<std::string> keys;
    for (int i = 0; i < B; ++i) keys.push_back("k" + std::to_string(rng.below(4)));
    std::vector<double> w = duplicate_weights(keys);
    std::vector<std::string> distinct;
    for (const auto& k : keys)
      if (std::find(distinct.begin(), distinct.end(), k) == distinct.end()) distinct.push_back(k);
    for (const auto& k : distinct) {
      double sum = 0.0;
      long count = 0;
      for (int i = 0; i < B; ++i)
        if (keys[std::size_t(i)] == k) {
          sum += w[std::size_t(i)];
          ++count;
        }
      if (sum != 1.0) {
        detail = "group '" + k + "' of " + std::to_string(count) + " sums to " + sci(sum);
        return false;
      }
      for (int i = 0; i < B; ++i)
        if (keys[std::size_t(i)] == k &&
            std::fabs(w[std::size_t(i)] - 1.0 / double(count)) > 1e-15) {
          detail = "member weight strays from 1/count";
          return false;
        }
    }
  }
  detail = "all group masses exactly 1";
  return true;
}

// rank metrics re-derived from their definitions
double naive_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0.0;
  long pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      ++pairs;
      if (s[i] > s[j]) num += 1.0;
      else if (s[i] == s[j]) num += 0.5;
    }
  return 100.0 * num / double(pairs);
}

double naive_ap(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), std::size_t(0));
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  double hits = 0.0, total = 0.0;
  long positives = 0;
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (y[idx[r]] != 1) continue;
    ++positives;
    hits += 1.0;
    total += hits / double(r + 1);
  }
  return 100.0 * total / double(positives);
}

double metric_agreement() {
  Rng rng(13);
  double worst = 0.0;
  for (int trial = 0; trial < 60; ++trial) {
    int n = 4 + int(rng.below(40));
    std::vector<double> s;
    std::vector<int> y;
    bool pos = false, neg = false;
    for (int i = 0; i < n; ++i) {
      s.push_back(double(rng.below(6)) / 6.0);  // coarse grid forces ties
      y.push_back(int(rng.below(2)));
      (y.back() ? pos : neg) = true;
    }
    if (!pos || !neg) {
      y[0] = 1;
      y[1] = 0;
    }
    bool def = false;
    double auc = auc_percent(s, y, def);
    if (!def) return 1.0;
    worst = std::max(worst, std::fabs(auc - naive_auc(s, y)));
    double ap = ap_percent(s, y, def);
    if (!def) return 1.0;
    worst = std::max(worst, std::fabs(ap - naive_ap(s, y)));
  }
  // frozen anchors: all-tied scores and a perfect ranking
  {
    std::vector<double> s{0.5, 0.5, 0.5, 0.5};
    std::vector<int> y{1, 0, 1, 0};
    bool def = false;
    worst = std::max(worst, std::fabs(auc_percent(s, y, def) - 50.0));
    std::vector<double> p{0.9, 0.8, 0.2, 0.1};
    std::vector<int> sorted_y{1, 1, 0, 0};
    worst = std::max(worst, std::fabs(auc_percent(p, sorted_y, def) - 100.0));
    worst = std::max(worst, std::fabs(ap_percent(p, sorted_y, def) - 100.0));
  }
  return worst;
}

double softmax_invariants() {
  Rng rng(7);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    int n = 2 + int(rng.below(5)), c = 2 + int(rng.below(9));
    Tensor a = randn({n, c}, rng, 2.0);
    Tensor sm = softmax(a);
    Tensor shifted = softmax(add_scalar(a, 17.5));
    Tensor lsm = log_softmax(a);
    for (int i = 0; i < n; ++i) {
      double row = 0.0;
      for (int j = 0; j < c; ++j) {
        row += sm(i, j);
        worst = std::max(worst, std::fabs(sm(i, j) - shifted(i, j)));
        worst = std::max(worst, std::fabs(std::log(sm(i, j)) - lsm(i, j)));
      }
      worst = std::max(worst, std::fabs(row - 1.0));
    }
  }
  return worst;
}

double bce_anchors() {
  double worst = 0.0;
  Tensor half({2}, {0.5, 0.5});
  Tensor y({2}, {1.0, 0.0});
  worst = std::max(worst, std::fabs(bce_loss(half, y).item() - std::log(2.0)));
  Tensor extreme({2}, {0.0, 1.0});  // clamped, so finite
  double e = bce_loss(extreme, y).item();
  if (!std::isfinite(e) || e <= 0.0) return 1.0;
  // scalar re-derivation of the clamped extremes
  double hi = 1.0 - 1e-7;
  double want = -0.5 * (std::log(1e-7) + std::log(1.0 - hi));
  worst = std::max(worst, std::fabs(e - want));
  return worst;
}

}  // namespace

bool run_selfcheck(std::ostream& os) {
  Report rep{os};

  double v = fd_primitives();
  rep.line("gradient primitives", v < 1e-4, "max rel err " + sci(v));

  v = fd_full_objective();
  rep.line("full objective gradient", v < 1e-4, "max rel err " + sci(v));

  v = contrastive_agreement();
  rep.line("contrastive vs definition", v <= 1e-10, "max abs err " + sci(v));

  std::string detail;
  bool ok = weight_mass_exact(detail);
  rep.line("duplicate debias mass", ok, detail);

  v = metric_agreement();
  rep.line("rank metrics vs definition", v <= 1e-10, "max abs err " + sci(v));

  v = softmax_invariants();
  rep.line("softmax invariants", v <= 1e-12, "max abs err " + sci(v));

  v = bce_anchors();
  rep.line("bce anchors", v <= 1e-12, "max abs err " + sci(v));

  os << (rep.all_ok ? "self-check: all " : "self-check: FAILURES among ") << rep.suites
     << " suites" << (rep.all_ok ? " passed" : "") << '\n';
  return rep.all_ok;
}

}  // namespace ub
