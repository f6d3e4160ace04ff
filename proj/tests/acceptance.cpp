// Acceptance suite: ten gated end-to-end properties of the pipeline, printed
// one pass/fail line each.  Gates cover the report decomposition golden
// fixture and its grouping invariants, exact label extraction, gradient
// correctness of every primitive and the full training objective, brute-force
// loss and metric oracles, duplicate-debias weight mass and permutation
// invariance, end-to-end learning quality with ablations, attention
// grounding localization, the fixed-weight query-extension contract, and
// byte-level training determinism.  Exit status is the number of failures.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "unibrain/alignment.hpp"
#include "unibrain/ard.hpp"
#include "unibrain/common.hpp"
#include "unibrain/cvp.hpp"
#include "unibrain/dataset.hpp"
#include "unibrain/lexicon.hpp"
#include "unibrain/metrics.hpp"
#include "unibrain/model.hpp"
#include "unibrain/synthdata.hpp"
#include "unibrain/tensor.hpp"
#include "unibrain/trainer.hpp"
#include "unibrain/volume.hpp"

namespace fs = std::filesystem;
using namespace ub;

namespace {

int g_failures = 0;

void gate(int num, const std::string& name, bool ok, const std::string& detail) {
  if (!ok) ++g_failures;
  std::printf("%s  criterion %2d: %s%s%s\n", ok ? "PASS" : "FAIL", num, name.c_str(),
              detail.empty() ? "" : " -- ", detail.c_str());
  std::fflush(stdout);
}

fs::path repo_file(const std::string& rel) {
  fs::path dir = fs::current_path();
  for (int up = 0; up < 6; ++up) {
    if (fs::exists(dir / rel)) return dir / rel;
    dir = dir.parent_path();
  }
  throw std::runtime_error("cannot locate " + rel + " above " + fs::current_path().string());
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(const char* format, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c, d);
  return buf;
}

// ---------------------------------------------------------------------------
// criterion 1: decomposition golden fixture + grouping invariants under fuzz

struct SurfacePools {
  std::vector<std::string> anatomy, side, modality, signal, morphology, pathology;
};

SurfacePools collect_pools(const Lexicon& lex) {
  SurfacePools p;
  for (const auto& e : lex.entries) {
    switch (e.type) {
      case EntityType::anatomy: p.anatomy.push_back(e.surface); break;
      case EntityType::side: p.side.push_back(e.surface); break;
      case EntityType::modality: p.modality.push_back(e.surface); break;
      case EntityType::signal: p.signal.push_back(e.surface); break;
      case EntityType::morphology: p.morphology.push_back(e.surface); break;
      case EntityType::pathology: p.pathology.push_back(e.surface); break;
    }
  }
  return p;
}

std::string fuzz_sentence(Rng& rng, const SurfacePools& p, const Lexicon& lex) {
  auto pick = [&](const std::vector<std::string>& v) { return v[rng.below(v.size())]; };
  switch (rng.below(7)) {
    case 0:
      return "The " + pick(p.side) + " " + pick(p.anatomy) + " is " + pick(p.morphology) + ".";
    case 1:
      return "Patchy " + pick(p.signal) + " on " + pick(p.modality) + " in the " + pick(p.side) +
             " " + pick(p.anatomy) + ".";
    case 2:  // enumeration phrasing: signals announced before modality runs
      return pick(p.signal) + " on " + pick(p.modality) + ", " + pick(p.signal) + " on " +
             pick(p.modality) + ", " + pick(p.modality) + ", and " + pick(p.modality) + ".";
    case 3:
      return pick(p.pathology) + " in the " + pick(p.side) + " " + pick(p.anatomy) + ".";
    case 4:
      return lex.negation_cues[rng.below(lex.negation_cues.size())] + " " + pick(p.pathology) +
             ".";
    case 5:
      return "Scattered " + pick(p.signal) + " with " + pick(p.anatomy) + " " +
             pick(p.morphology) + ".";
    default:
      return pick(p.modality) + " shows " + pick(p.signal) + " in the " + pick(p.anatomy) +
             "; " + pick(p.pathology) + " considered.";
  }
}

bool check_grouping(const DecomposedReport& rep, const Lexicon& lex, std::string& why) {
  const int K = int(lex.modalities.size());
  for (const auto& s : rep.global) {
    int hits = 0, where = -1;
    for (int k = 0; k < K; ++k) {
      const auto& lst = rep.per_modality[std::size_t(k)];
      if (std::find(lst.begin(), lst.end(), s) != lst.end()) {
        ++hits;
        where = k;
      }
    }
    bool modality_bound = s.kind == SentenceKind::sig && !s.modality.empty();
    if (modality_bound) {
      if (hits != 1 || lex.modalities[std::size_t(where)] != s.modality) {
        why = "signal sentence '" + s.rendered + "' in " + std::to_string(hits) + " lists";
        return false;
      }
    } else if (hits != K) {
      why = "shared sentence '" + s.rendered + "' in " + std::to_string(hits) + "/" +
            std::to_string(K) + " lists";
      return false;
    }
  }
  for (int k = 0; k < K; ++k)
    for (const auto& s : rep.per_modality[std::size_t(k)])
      if (std::find(rep.global.begin(), rep.global.end(), s) == rep.global.end()) {
        why = "sentence '" + s.rendered + "' missing from the global list";
        return false;
      }
  return true;
}

void criterion1(const Lexicon& lex, const fs::path& work) {
  auto cases = load_corpus(repo_file("data/fixtures/ard_corpus.jsonl").string());
  std::vector<DecomposedReport> reps;
  reps.reserve(cases.size());
  for (const auto& c : cases) reps.push_back(decompose_report(c.report(), lex));
  fs::path out = work / "ard_structured.jsonl";
  write_structured(out.string(), cases, reps, lex);
  bool golden_ok = read_bytes(out) == read_bytes(repo_file("data/fixtures/ard_golden.jsonl"));

  SurfacePools pools = collect_pools(lex);
  Rng rng(seed_stream(42, 0x667a7a31ULL));
  int fuzzed = 0;
  bool inv_ok = true;
  std::string why;
  for (int r = 0; r < 1000 && inv_ok; ++r) {
    ReportDocument doc;
    doc.id = "fuzz" + std::to_string(r);
    int nf = 1 + int(rng.below(4));
    for (int i = 0; i < nf; ++i) doc.findings.push_back(fuzz_sentence(rng, pools, lex));
    int ni = int(rng.below(3));
    for (int i = 0; i < ni; ++i) doc.impression.push_back(fuzz_sentence(rng, pools, lex));
    inv_ok = check_grouping(decompose_report(doc, lex), lex, why);
    ++fuzzed;
  }
  std::string detail = golden_ok ? "golden matches byte-for-byte" : "golden output differs";
  detail += inv_ok ? fmt("; invariants hold on %.0f fuzzed reports", double(fuzzed))
                   : "; invariant broken on report " + std::to_string(fuzzed - 1) + ": " + why;
  gate(1, "report decomposition golden + grouping invariants", golden_ok && inv_ok, detail);
}

// ---------------------------------------------------------------------------
// criterion 2: exact label extraction on the synthetic corpus

void criterion2(const Lexicon& lex, const std::vector<CorpusCase>& cases) {
  std::vector<std::vector<int>> pred, gold;
  int negated_sentences = 0;
  for (const auto& c : cases) {
    pred.push_back(decompose_report(c.report(), lex).labels);
    gold.push_back(c.gold_labels);
    for (const auto& s : c.impression)
      if (s.rfind("No evidence of", 0) == 0) ++negated_sentences;
  }
  LabelingEval ev = evaluate_labeling(pred, gold);
  bool exact = ev.mention.micro_f1 == 100.0 && ev.mention.macro_f1 == 100.0 &&
               ev.negation.micro_f1 == 100.0 && ev.negation.macro_f1 == 100.0;
  bool exercised = negated_sentences > 0;
  gate(2, "label extraction exact on synthetic corpus", exact && exercised,
       fmt("mention F1 %.1f, negation F1 %.1f, ", ev.mention.micro_f1, ev.negation.micro_f1) +
           std::to_string(negated_sentences) + " injected negations over " +
           std::to_string(cases.size()) + " cases");
}

// ---------------------------------------------------------------------------
// criterion 3: gradients of every primitive and of the full objective

Tensor rand_tensor(Shape shape, Rng& rng, double scl = 1.0) {
  Tensor t(shape);
  double* v = t.data();
  for (long i = 0; i < t.size(); ++i) v[i] = rng.normal() * scl;
  return t;
}

void criterion3(const Lexicon& /*lex*/) {
  Rng rng(seed_stream(42, 0x67726164ULL));
  double worst = 0.0;
  std::string worst_name = "-";
  auto record = [&](const std::string& name, double err) {
    if (err > worst) {
      worst = err;
      worst_name = name;
    }
  };

  {  // affine + relu + sigmoid
    Tensor x = rand_tensor({5, 4}, rng);
    std::vector<Tensor> ps{rand_tensor({4, 6}, rng), rand_tensor({6}, rng)};
    record("affine/relu/sigmoid", finite_diff_check(
                                      [&](std::span<const Tensor> p) {
                                        return sum_all(sigmoid(relu(affine(x, p[0], p[1]))));
                                      },
                                      ps));
  }
  {  // conv3d, both strides, via channels_last
    std::vector<Tensor> ps{rand_tensor({1, 4, 4, 4}, rng, 0.5), rand_tensor({3, 27}, rng, 0.3),
                           rand_tensor({3}, rng)};
    record("conv3d", finite_diff_check(
                         [&](std::span<const Tensor> p) {
                           Tensor h = conv3d(p[0], p[1], p[2], 2);
                           return sum_all(mul(channels_last(h), channels_last(h)));
                         },
                         ps));
  }
  {  // matmul / transpose chain
    std::vector<Tensor> ps{rand_tensor({3, 4}, rng), rand_tensor({4, 5}, rng)};
    record("matmul/transpose", finite_diff_check(
                                   [&](std::span<const Tensor> p) {
                                     return sum_all(matmul(transpose(p[0]), matmul(p[0], p[1])));
                                   },
                                   ps));
  }
  {  // softmax / log_softmax / l2_normalize
    std::vector<Tensor> ps{rand_tensor({4, 6}, rng), rand_tensor({4, 6}, rng)};
    record("softmax/log_softmax/l2n",
           finite_diff_check(
               [&](std::span<const Tensor> p) {
                 return sum_all(mul(l2_normalize(p[0]), log_softmax(p[1])));
               },
               ps));
    record("softmax self-product", finite_diff_check(
                                       [&](std::span<const Tensor> p) {
                                         return sum_all(mul(softmax(p[0]), p[0]));
                                       },
                                       ps));
  }
  {  // modality fusion + patch pooling
    std::vector<Tensor> ps{rand_tensor({8, 4}, rng), rand_tensor({8, 4}, rng),
                           rand_tensor({8, 4}, rng), rand_tensor({4}, rng)};
    record("fuse/pool", finite_diff_check(
                            [&](std::span<const Tensor> p) {
                              std::vector<Tensor> mods{p[0], p[1]};
                              return sum_all(pool_patches(fuse_modalities(mods, p[2], p[3])));
                            },
                            ps));
  }
  {  // bce on sigmoid probabilities
    Tensor y({2, 3}, {1, 0, 1, 0, 0, 1});
    std::vector<Tensor> ps{rand_tensor({2, 3}, rng)};
    record("bce", finite_diff_check(
                      [&](std::span<const Tensor> p) { return bce_loss(sigmoid(p[0]), y); }, ps));
  }
  {  // contrastive with duplicates, including the temperature
    Tensor txt = rand_tensor({3, 5}, rng);
    auto w = duplicate_weights({"r1", "r1", "r2"});
    std::vector<Tensor> ps{rand_tensor({3, 5}, rng), Tensor::scalar(0.3)};
    record("contrastive", finite_diff_check(
                              [&](std::span<const Tensor> p) {
                                return contrastive_loss(l2_normalize(p[0]), txt, p[1], w);
                              },
                              ps));
  }

  // full objective at B=2, K=2, l=8 (8x8x8 input), d=8, C=3: the training
  // loss as assembled per batch, differentiated through every parameter
  ModelConfig mc;
  mc.input_dims = {8, 8, 8};
  mc.conv1 = 3;
  mc.conv2 = 4;
  mc.proj_hidden = 6;
  mc.d = 8;
  mc.heads = 2;
  mc.blocks = 2;
  mc.ffn = 16;
  mc.cls_hidden = 6;
  mc.text_vocab = 128;
  std::vector<std::string> mods{"MODA", "MODB"};
  std::vector<std::string> classes{"normal", "alpha", "beta"};
  std::vector<DiseaseQuery> queries{{"normal", "no abnormal findings"},
                                    {"alpha", "patchy signal in the alpha zone"},
                                    {"beta", "nodular mass in the beta zone"}};
  Model m = init_model(mc, Toggles{}, mods, classes, queries, 7);

  const int B = 2, K = 2;
  std::vector<std::vector<Tensor>> vols(B);
  for (int b = 0; b < B; ++b)
    for (int k = 0; k < K; ++k) vols[std::size_t(b)].push_back(rand_tensor({1, 8, 8, 8}, rng, 0.4));
  Tensor labels({B, 3}, {0, 1, 0, 1, 0, 0});
  auto text_row = [&](const std::string& key) {
    auto v = m.text->encode(key);
    return Tensor({mc.d}, v);
  };
  // duplicate global keys exercise the debias weights inside the objective
  std::vector<std::string> glob_keys{"shared structured report", "shared structured report"};
  std::vector<std::vector<std::string>> mod_keys{{"moda finding one", "modb finding one"},
                                                 {"moda finding two", "modb finding one"}};
  Tensor txt_glob = stack_rows(std::vector<Tensor>{text_row(glob_keys[0]), text_row(glob_keys[1])});
  std::vector<Tensor> txt_mod;
  std::vector<std::vector<double>> w_mod;
  for (int k = 0; k < K; ++k) {
    txt_mod.push_back(stack_rows(std::vector<Tensor>{text_row(mod_keys[0][std::size_t(k)]),
                                                     text_row(mod_keys[1][std::size_t(k)])}));
    w_mod.push_back(duplicate_weights({mod_keys[0][std::size_t(k)], mod_keys[1][std::size_t(k)]}));
  }
  auto w_glob = duplicate_weights(glob_keys);
  Tensor Q = m.query_matrix(m.queries);

  auto objective = [&](std::span<const Tensor>) {
    std::vector<Tensor> prob_rows, img_glob;
    std::vector<std::vector<Tensor>> img_mod;
    img_mod.resize(std::size_t(K));
    for (int b = 0; b < B; ++b) {
      CaseEncoding enc = m.encode_case(vols[std::size_t(b)]);
      for (int k = 0; k < K; ++k) img_mod[std::size_t(k)].push_back(enc.pooled[std::size_t(k)]);
      img_glob.push_back(enc.fused_pooled);
      prob_rows.push_back(m.probs_from_decoded(m.decode(Q, enc.fused).decoded));
    }
    Tensor bce = bce_loss(stack_rows(prob_rows), labels);
    std::vector<Tensor> align;
    align.push_back(contrastive_loss(stack_rows(img_glob), txt_glob, m.log_tau(), w_glob));
    for (int k = 0; k < K; ++k)
      align.push_back(contrastive_loss(stack_rows(img_mod[std::size_t(k)]),
                                       txt_mod[std::size_t(k)], m.log_tau(),
                                       w_mod[std::size_t(k)]));
    return combine_losses(bce, align);
  };
  std::vector<Tensor> all_params;
  for (const auto& e : m.params.entries()) all_params.push_back(e.tensor);
  long n_scalars = m.params.total_elements();
  record("full objective", finite_diff_check(objective, all_params));

  gate(3, "central-difference gradient checks", worst < 1e-4,
       fmt("max rel err %.2e (", worst) + worst_name + ", " + std::to_string(n_scalars) +
           " objective parameters)");
}

// ---------------------------------------------------------------------------
// criterion 4: contrastive loss vs. brute-force enumeration

double naive_contrastive(const std::vector<std::vector<double>>& img,
                         const std::vector<std::vector<double>>& txt,
                         const std::vector<std::string>& keys, double log_tau) {
  const std::size_t B = img.size();
  double tau = std::exp(log_tau);
  std::vector<std::vector<double>> S(B, std::vector<double>(B));
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < B; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < img[i].size(); ++c) dot += img[i][c] * txt[j][c];
      S[i][j] = dot / tau;
    }
  auto lse = [](const std::vector<double>& v) {
    double mx = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
  };
  double loss = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    double w = 0.0;
    for (const auto& k : keys) w += (k == keys[i]) ? 1.0 : 0.0;
    w = 1.0 / w;
    std::vector<double> row(B), col(B);
    for (std::size_t j = 0; j < B; ++j) {
      row[j] = S[i][j];
      col[j] = S[j][i];
    }
    loss += w * (lse(row) - S[i][i]);  // image -> text
    loss += w * (lse(col) - S[i][i]);  // text -> image
  }
  return loss / double(B);
}

void criterion4() {
  Rng rng(seed_stream(42, 0x6f72634cULL));
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    int B = 1 + int(rng.below(8));
    int d = 3 + int(rng.below(14));
    int groups = 1 + int(rng.below(std::uint64_t(B)));
    std::vector<std::vector<double>> img, txt_rows;
    txt_rows.resize(std::size_t(groups));
    std::vector<std::string> keys;
    for (auto& t : txt_rows) {
      t.resize(std::size_t(d));
      for (auto& v : t) v = rng.normal();
    }
    std::vector<std::vector<double>> txt;
    for (int b = 0; b < B; ++b) {
      int g = int(rng.below(std::uint64_t(groups)));
      keys.push_back("report" + std::to_string(g));
      txt.push_back(txt_rows[std::size_t(g)]);
      std::vector<double> row(std::size_t(d), 0.0);
      double nrm = 0.0;
      for (auto& v : row) {
        v = rng.normal();
        nrm += v * v;
      }
      nrm = std::sqrt(nrm);
      for (auto& v : row) v /= nrm;
      img.push_back(row);
    }
    double log_tau = rng.uniform(std::log(0.2), std::log(3.0));
    Tensor ti({B, d}), tt({B, d});
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < d; ++c) {
        ti.data()[b * d + c] = img[std::size_t(b)][std::size_t(c)];
        tt.data()[b * d + c] = txt[std::size_t(b)][std::size_t(c)];
      }
    double impl =
        contrastive_loss(ti, tt, Tensor::scalar(log_tau), duplicate_weights(keys)).item();
    worst = std::max(worst, std::fabs(impl - naive_contrastive(img, txt, keys, log_tau)));
  }

  Tensor img2({2, 3}, {1, 0, 0, 1, 0, 0});  // identical rows: a true duplicate pair
  Tensor txt2({2, 3}, {0, 1, 0, 0, 1, 0});
  double dup_pair =
      contrastive_loss(img2, txt2, Tensor::scalar(0.0), duplicate_weights({"same", "same"}))
          .item();
  Tensor img1({1, 4}, {0.5, 0.5, 0.5, 0.5});
  Tensor txt1({1, 4}, {1, 0, 0, 0});
  double single = contrastive_loss(img1, txt1, Tensor::scalar(0.0), {1.0}).item();

  bool ok = worst <= 1e-10 && std::fabs(dup_pair - std::log(2.0)) <= 1e-12 && single == 0.0;
  gate(4, "contrastive loss vs brute-force enumeration", ok,
       fmt("max |impl-naive| %.2e over 100 batches; dup pair |err| %.2e; B=1 loss %.1f", worst,
           std::fabs(dup_pair - std::log(2.0)), single));
}

// ---------------------------------------------------------------------------
// criterion 5: duplicate weight mass + permutation invariance of the losses

void criterion5() {
  Rng rng(seed_stream(42, 0x6f6d6567ULL));
  bool mass_ok = true;
  for (int trial = 0; trial < 200 && mass_ok; ++trial) {
    int n = 1 + int(rng.below(17));
    std::vector<std::string> keys;
    for (int i = 0; i < n; ++i) keys.push_back("k" + std::to_string(rng.below(6)));
    auto w = duplicate_weights(keys);
    std::map<std::string, double> mass;
    for (int i = 0; i < n; ++i) mass[keys[std::size_t(i)]] += w[std::size_t(i)];
    for (const auto& [k, m] : mass)
      if (m != 1.0) mass_ok = false;
  }

  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    int B = 2 + int(rng.below(7));
    int d = 4 + int(rng.below(8));
    int C = 2 + int(rng.below(4));
    std::vector<Tensor> img_rows, txt_row_t, prob_rows, label_rows;
    std::vector<std::string> keys;
    for (int b = 0; b < B; ++b) {
      img_rows.push_back(l2_normalize(rand_tensor({d}, rng)));
      keys.push_back("rep" + std::to_string(rng.below(std::uint64_t(2 + B / 2))));
      Tensor pr({C}), lr({C});
      for (int c = 0; c < C; ++c) {
        pr.data()[c] = rng.uniform(0.02, 0.98);
        lr.data()[c] = double(rng.below(2));
      }
      prob_rows.push_back(pr);
      label_rows.push_back(lr);
    }
    std::map<std::string, Tensor> key_text;
    for (const auto& k : keys)
      if (!key_text.count(k)) key_text.emplace(k, rand_tensor({d}, rng));
    for (const auto& k : keys) txt_row_t.push_back(key_text.at(k));
    Tensor log_tau = Tensor::scalar(rng.uniform(-0.5, 0.5));

    auto batch_losses = [&](const std::vector<std::size_t>& order) {
      std::vector<Tensor> ir, tr, pr, lr;
      std::vector<std::string> ks;
      for (std::size_t i : order) {
        ir.push_back(img_rows[i]);
        tr.push_back(txt_row_t[i]);
        pr.push_back(prob_rows[i]);
        lr.push_back(label_rows[i]);
        ks.push_back(keys[i]);
      }
      Tensor contrast =
          contrastive_loss(stack_rows(ir), stack_rows(tr), log_tau, duplicate_weights(ks));
      Tensor bce = bce_loss(stack_rows(pr), stack_rows(lr));
      std::vector<Tensor> align{contrast};
      Tensor total = combine_losses(bce, align);
      return std::array<double, 3>{contrast.item(), bce.item(), total.item()};
    };
    std::vector<std::size_t> ident, perm;
    for (int b = 0; b < B; ++b) ident.push_back(std::size_t(b));
    perm = ident;
    for (std::size_t i = perm.size(); i > 1; --i)
      std::swap(perm[i - 1], perm[rng.below(i)]);
    auto a = batch_losses(ident), b = batch_losses(perm);
    for (int j = 0; j < 3; ++j) worst = std::max(worst, std::fabs(a[std::size_t(j)] - b[std::size_t(j)]));
  }
  bool ok = mass_ok && worst <= 1e-12;
  gate(5, "duplicate weight mass exact + permutation invariance", ok,
       std::string(mass_ok ? "group mass sums exactly 1.0" : "group mass deviates") +
           fmt("; max permutation drift %.2e", worst));
}

// ---------------------------------------------------------------------------
// criterion 9: evaluation metrics vs naive implementations

double naive_auc(const std::vector<double>& s, const std::vector<int>& y, bool& defined) {
  double wins = 0.0;
  long np = 0, nn = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] == 1)
      ++np;
    else
      ++nn;
  }
  defined = np > 0 && nn > 0;
  if (!defined) return 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
  return 100.0 * wins / (double(np) * double(nn));
}

double naive_ap(const std::vector<double>& s, const std::vector<int>& y, bool& defined) {
  std::vector<std::size_t> idx(s.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  long seen_pos = 0;
  double sum_prec = 0.0;
  for (std::size_t r = 0; r < idx.size(); ++r)
    if (y[idx[r]] == 1) {
      ++seen_pos;
      sum_prec += double(seen_pos) / double(r + 1);
    }
  defined = seen_pos > 0;
  return defined ? 100.0 * sum_prec / double(seen_pos) : 0.0;
}

void criterion9() {
  Rng rng(seed_stream(42, 0x6d657472ULL));
  double worst = 0.0;
  bool flags_ok = true;
  for (int trial = 0; trial < 100; ++trial) {
    int N = 2 + int(rng.below(49));
    int C = 1 + int(rng.below(13));
    std::vector<std::vector<double>> probs(std::size_t(N), std::vector<double>(std::size_t(C), 0.0));
    std::vector<std::vector<int>> labels(std::size_t(N), std::vector<int>(std::size_t(C), 0));
    for (int c = 0; c < C; ++c) {
      int mode = int(rng.below(8));  // 0 -> all negative, 1 -> all positive
      for (int n = 0; n < N; ++n) {
        probs[std::size_t(n)][std::size_t(c)] = double(rng.below(9)) / 8.0;  // heavy ties
        labels[std::size_t(n)][std::size_t(c)] =
            mode == 0 ? 0 : (mode == 1 ? 1 : int(rng.below(2)));
      }
    }
    EvalReport rep = evaluate_predictions(probs, labels);
    double a_auc = 0.0, a_acc = 0.0, a_f1 = 0.0, m_ap = 0.0;
    int n_auc = 0, n_ap = 0, n_f1 = 0;
    for (int c = 0; c < C; ++c) {
      std::vector<double> col(std::size_t(N), 0.0);
      std::vector<int> y(std::size_t(N), 0);
      long tp = 0, fp = 0, tn = 0, fn = 0;
      for (int n = 0; n < N; ++n) {
        col[std::size_t(n)] = probs[std::size_t(n)][std::size_t(c)];
        y[std::size_t(n)] = labels[std::size_t(n)][std::size_t(c)];
        bool hit = col[std::size_t(n)] > 0.5;
        if (hit && y[std::size_t(n)] == 1) ++tp;
        if (hit && y[std::size_t(n)] == 0) ++fp;
        if (!hit && y[std::size_t(n)] == 0) ++tn;
        if (!hit && y[std::size_t(n)] == 1) ++fn;
      }
      bool auc_def = false, ap_def = false;
      double auc = naive_auc(col, y, auc_def);
      double ap = naive_ap(col, y, ap_def);
      double acc = 100.0 * double(tp + tn) / double(N);
      bool f1_def = (2 * tp + fp + fn) > 0;
      double f1 = f1_def ? 100.0 * 2.0 * double(tp) / double(2 * tp + fp + fn) : 0.0;
      const ClassMetrics& pc = rep.per_class[std::size_t(c)];
      if (pc.auc_defined != auc_def || pc.ap_defined != ap_def || pc.f1_defined != f1_def)
        flags_ok = false;
      if (auc_def) {
        worst = std::max(worst, std::fabs(pc.auc - auc));
        a_auc += auc;
        ++n_auc;
      }
      if (ap_def) {
        worst = std::max(worst, std::fabs(pc.ap - ap));
        m_ap += ap;
        ++n_ap;
      }
      if (f1_def) {
        worst = std::max(worst, std::fabs(pc.f1 - f1));
        a_f1 += f1;
        ++n_f1;
      }
      worst = std::max(worst, std::fabs(pc.acc - acc));
      a_acc += acc;
    }
    if (n_auc) worst = std::max(worst, std::fabs(rep.a_auc - a_auc / n_auc));
    if (n_ap) worst = std::max(worst, std::fabs(rep.m_ap - m_ap / n_ap));
    if (n_f1) worst = std::max(worst, std::fabs(rep.a_f1 - a_f1 / n_f1));
    worst = std::max(worst, std::fabs(rep.a_acc - a_acc / C));
    if (rep.auc_excluded != C - n_auc || rep.ap_excluded != C - n_ap ||
        rep.f1_excluded != C - n_f1)
      flags_ok = false;
  }
  bool def = false;
  double tied_auc = auc_percent(std::vector<double>{0.5, 0.5, 0.5, 0.5},
                                std::vector<int>{1, 0, 1, 0}, def);
  bool auc_fix = def && tied_auc == 50.0;
  double alt_ap = ap_percent(std::vector<double>{0.9, 0.8, 0.7, 0.6},
                             std::vector<int>{1, 0, 1, 0}, def);
  bool ap_fix = def && std::fabs(alt_ap - 250.0 / 3.0) <= 1e-12;
  bool ok = worst <= 1e-10 && flags_ok && auc_fix && ap_fix;
  gate(9, "evaluation metrics vs naive implementation", ok,
       fmt("max |impl-naive| %.2e; tied AUC %.1f; alternating AP %.10f", worst, tied_auc,
           alt_ap));
}

// ---------------------------------------------------------------------------

struct RunArtifacts {
  fs::path ckpt, csv;
  EvalReport report;
};

RunArtifacts run_training(const TrainConfig& cfg, const Lexicon& lex,
                          const std::vector<CorpusCase>& train_cases,
                          const std::vector<CorpusCase>& eval_cases,
                          const std::vector<DiseaseQuery>& queries, const fs::path& work,
                          const std::string& tag, Model* model_out) {
  RunArtifacts art;
  art.ckpt = work / (tag + ".ckpt");
  art.csv = work / (tag + "_loss.csv");
  TrainResult res =
      train_model(cfg, lex, train_cases, queries, art.ckpt.string(), art.csv.string());
  art.report = eval_corpus(res.model, eval_cases, nullptr);
  if (model_out) *model_out = std::move(res.model);
  return art;
}

std::string metric_line(const EvalReport& r) {
  return fmt("aAUC %6.2f  aACC %6.2f  aF1 %6.2f  mAP %6.2f", r.a_auc, r.a_acc, r.a_f1, r.m_ap);
}

}  // namespace

int main() {
  try {
    std::printf("acceptance suite\n================\n");
    auto t_start = std::chrono::steady_clock::now();
    Lexicon lex = Lexicon::load(repo_file("data/fixtures/lexicon.json").string());
    fs::path work = fs::current_path() / "acceptance_work";
    fs::remove_all(work);
    fs::create_directories(work);

    SynthSpec spec = SynthSpec::load(repo_file("data/synth_spec.json").string());
    spec.validate(lex);
    fs::path corpus_dir = work / "corpus";
    generate_corpus(spec, lex, 42, spec.default_cases, corpus_dir.string());
    auto all_cases = load_corpus((corpus_dir / "corpus.jsonl").string());
    std::printf("setup: %zu synthetic cases (200 train / %zu held out)\n\n", all_cases.size(),
                all_cases.size() - 200);
    std::vector<CorpusCase> train_cases(all_cases.begin(), all_cases.begin() + 200);
    std::vector<CorpusCase> eval_cases(all_cases.begin() + 200, all_cases.end());

    auto guarded = [](int num, const char* name, const std::function<void()>& body) {
      try {
        body();
      } catch (const std::exception& e) {
        gate(num, name, false, std::string("exception: ") + e.what());
      }
    };

    guarded(1, "report decomposition golden + grouping invariants",
            [&] { criterion1(lex, work); });
    guarded(2, "label extraction exact on synthetic corpus", [&] { criterion2(lex, all_cases); });
    guarded(3, "central-difference gradient checks", [&] { criterion3(lex); });
    guarded(4, "contrastive loss vs brute-force enumeration", [&] { criterion4(); });
    guarded(5, "duplicate weight mass exact + permutation invariance", [&] { criterion5(); });

    // --- the trained model shared by criteria 6, 7, 8 and 10 ---------------
    TrainConfig cfg;  // 32x32x8 volumes, B=8, 30 epochs, seed 42 by default
    auto queries = load_queries(repo_file("data/queries.json").string());
    Model model;
    RunArtifacts main_run;
    bool trained = false;
    guarded(6, "end-to-end learning + ablations", [&] {
      main_run = run_training(cfg, lex, train_cases, eval_cases, queries, work, "main", &model);
      trained = true;

      struct Ablation {
        std::string name;
        std::function<void(TrainConfig&)> apply;
      };
      std::vector<Ablation> ablations{
          {"--no-modality-align", [](TrainConfig& c) { c.toggles.modality_align = false; }},
          {"--no-global-align", [](TrainConfig& c) { c.toggles.global_align = false; }},
          {"--no-cvp", [](TrainConfig& c) { c.toggles.cvp = false; }},
          {"--query-mode name", [](TrainConfig& c) { c.toggles.query_mode = "name"; }}};
      bool ablations_ok = true;
      std::vector<std::string> ablation_lines;
      for (std::size_t i = 0; i < ablations.size(); ++i) {
        TrainConfig acfg = cfg;
        ablations[i].apply(acfg);
        RunArtifacts art = run_training(acfg, lex, train_cases, eval_cases, queries, work,
                                        "ablation" + std::to_string(i), nullptr);
        const EvalReport& r = art.report;
        if (!(std::isfinite(r.a_auc) && std::isfinite(r.m_ap))) ablations_ok = false;
        char buf[160];
        std::snprintf(buf, sizeof buf, "      %-20s %s", ablations[i].name.c_str(),
                      metric_line(r).c_str());
        ablation_lines.push_back(buf);
      }
      bool main_ok = main_run.report.a_auc >= 90.0 && main_run.report.m_ap >= 70.0;
      gate(6, "end-to-end learning + ablations", main_ok && ablations_ok,
           "held-out " + metric_line(main_run.report));
      std::printf("      %-20s %s\n", "(main)", metric_line(main_run.report).c_str());
      for (const auto& l : ablation_lines) std::printf("%s\n", l.c_str());
      std::fflush(stdout);
    });

    // --- criterion 7: grounding localization --------------------------------
    guarded(7, "grounding argmax inside planted lesion", [&] {
      if (!trained) throw std::runtime_error("no trained model (criterion 6 failed)");
      int tp = 0, hits = 0;
      for (const auto& c : eval_cases) {
        auto probs = infer_case(model, c, model.queries);
        for (std::size_t q = 0; q < model.queries.size(); ++q) {
          const std::string& name = model.queries[q].name;
          if (name == "normal") continue;  // no planted box to localize
          int ci = lex.class_index(name);
          if (ci < 0 || c.gold_labels[std::size_t(ci)] != 1 || probs[q] <= 0.5) continue;
          ++tp;
          GroundResult g = ground_case(model, c, name);
          for (const auto& box : c.lesion_boxes)
            if (box.disease == name && box.contains(g.argmax[0], g.argmax[1], g.argmax[2])) {
              ++hits;
              break;
            }
        }
      }
      double rate = tp ? 100.0 * hits / tp : 0.0;
      gate(7, "grounding argmax inside planted lesion", tp > 0 && rate >= 70.0,
           fmt("%.1f%% of %.0f true positives localized", rate, double(tp)));
    });

    // --- criterion 8: query extension leaves trained probabilities fixed ----
    guarded(8, "zero-shot query extension keeps trained outputs", [&] {
      if (!trained) throw std::runtime_error("no trained model (criterion 6 failed)");
      auto extended = load_queries(repo_file("data/queries_extended.json").string());
      double drift = 0.0;
      bool prefix_ok = extended.size() == 6;
      for (std::size_t q = 0; q < model.queries.size() && prefix_ok; ++q)
        prefix_ok = extended[q].name == model.queries[q].name &&
                    extended[q].description == model.queries[q].description;
      if (prefix_ok)
        for (const auto& c : eval_cases) {
          auto base = infer_case(model, c, model.queries);
          auto more = infer_case(model, c, extended);
          for (std::size_t q = 0; q < base.size(); ++q)
            drift = std::max(drift, std::fabs(more[q] - base[q]));
        }
      gate(8, "zero-shot query extension keeps trained outputs", prefix_ok && drift <= 1e-12,
           fmt("max drift %.2e across 4->6 queries on %.0f cases", drift,
               double(eval_cases.size())));
    });

    guarded(9, "evaluation metrics vs naive implementation", [&] { criterion9(); });

    // --- criterion 10: byte-level determinism -------------------------------
    guarded(10, "training determinism (checkpoints + loss CSV)", [&] {
      if (!trained) throw std::runtime_error("no trained model (criterion 6 failed)");
      RunArtifacts repeat =
          run_training(cfg, lex, train_cases, eval_cases, queries, work, "repeat", nullptr);
      bool ckpt_same = read_bytes(main_run.ckpt) == read_bytes(repeat.ckpt) &&
                       read_bytes(main_run.ckpt.string() + ".blob") ==
                           read_bytes(repeat.ckpt.string() + ".blob");
      bool csv_same = read_bytes(main_run.csv) == read_bytes(repeat.csv);
      gate(10, "training determinism (checkpoints + loss CSV)", ckpt_same && csv_same,
           std::string(ckpt_same ? "checkpoints byte-identical" : "checkpoints differ") + "; " +
               (csv_same ? "loss CSVs byte-identical" : "loss CSVs differ"));
    });

    auto secs = std::chrono::duration_cast<std::chrono::seconds>(
                    std::chrono::steady_clock::now() - t_start)
                    .count();
    std::printf("\n%d/10 criteria passed (%lld s)\n", 10 - g_failures,
                static_cast<long long>(secs));
    return g_failures;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "acceptance suite aborted: %s\n", e.what());
    return 99;
  }
}
