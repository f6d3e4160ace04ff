#include "unibrain/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "unibrain/alignment.hpp"
#include "unibrain/ard.hpp"

namespace fs = std::filesystem;

namespace ub {

namespace {

constexpr std::uint64_t kShuffleStream = 0x73687566ULL;  // + epoch
constexpr std::uint64_t kAugmentStream = 0x61756721ULL;  // + epoch
const double kLogTauMin = std::log(1e-3);
const double kLogTauMax = std::log(100.0);

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Everything train needs per case, computed once up front.
struct PreparedCase {
  std::vector<Volume> volumes;       // modality order
  std::vector<Tensor> text_mod;      // K x [d] frozen embeddings
  Tensor text_glob;                  // [d]
  std::vector<std::string> keys;     // rendered modality reports ("" = absent)
  std::string global_key;
  Tensor labels;                     // [C] over the query set
};

std::vector<double> query_labels(const CorpusCase& c, const Lexicon& lex,
                                 const std::vector<DiseaseQuery>& queries,
                                 const DecomposedReport& rep) {
  const std::vector<int>* src = nullptr;
  if (!c.gold_labels.empty()) {
    if (c.gold_labels.size() != std::size_t(lex.num_classes()))
      fail(ErrCode::validation,
           "case " + c.id + ": gold label count does not match the lexicon classes");
    src = &c.gold_labels;
  } else {
    src = &rep.labels;
  }
  std::vector<double> y;
  for (const auto& q : queries) {
    int ci = lex.class_index(q.name);
    if (ci < 0) fail(ErrCode::validation, "query '" + q.name + "' is not a lexicon class");
    y.push_back(double((*src)[std::size_t(ci)]));
  }
  return y;
}

}  // namespace

nlohmann::json TrainConfig::to_json() const {
  return nlohmann::json{
      {"model", model.to_json()},
      {"toggles",
       {{"modality_align", toggles.modality_align},
        {"global_align", toggles.global_align},
        {"cvp", toggles.cvp},
        {"query_mode", toggles.query_mode}}},
      {"batch", batch},
      {"epochs", epochs},
      {"lr0", lr0},
      {"poly_power", poly_power},
      {"weight_decay", weight_decay},
      {"augment",
       {{"flip_prob", flip_prob},
        {"shift_range", shift_range},
        {"scale_lo", scale_lo},
        {"scale_hi", scale_hi}}},
      {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrCode::config, "train config: expected a JSON object");
  TrainConfig cfg;
  if (j.contains("model")) cfg.model = ModelConfig::from_json(j["model"]);
  if (j.contains("toggles")) {
    const auto& t = j["toggles"];
    cfg.toggles.modality_align = t.value("modality_align", true);
    cfg.toggles.global_align = t.value("global_align", true);
    cfg.toggles.cvp = t.value("cvp", true);
    cfg.toggles.query_mode = t.value("query_mode", "description");
  }
  cfg.batch = j.value("batch", cfg.batch);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.lr0 = j.value("lr0", cfg.lr0);
  cfg.poly_power = j.value("poly_power", cfg.poly_power);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  if (j.contains("augment")) {
    const auto& a = j["augment"];
    cfg.flip_prob = a.value("flip_prob", cfg.flip_prob);
    cfg.shift_range = a.value("shift_range", cfg.shift_range);
    cfg.scale_lo = a.value("scale_lo", cfg.scale_lo);
    cfg.scale_hi = a.value("scale_hi", cfg.scale_hi);
  }
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrCode::io, "cannot open train config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrCode::parse, path + ": invalid JSON: " + std::string(e.what()));
  }
  return from_json(j);
}

void TrainConfig::validate() const {
  model.validate();
  if (toggles.query_mode != "description" && toggles.query_mode != "name")
    fail(ErrCode::config, "train config: query_mode must be 'description' or 'name'");
  if (batch < 1) fail(ErrCode::config, "train config: batch must be >= 1");
  if (epochs < 1) fail(ErrCode::config, "train config: epochs must be >= 1");
  if (!(lr0 > 0.0)) fail(ErrCode::config, "train config: lr0 must be positive");
  if (!(poly_power >= 0.0)) fail(ErrCode::config, "train config: poly_power must be >= 0");
  if (weight_decay < 0.0) fail(ErrCode::config, "train config: weight_decay must be >= 0");
  if (flip_prob < 0.0 || flip_prob > 1.0)
    fail(ErrCode::config, "train config: flip_prob must lie in [0, 1]");
  if (shift_range < 0.0) fail(ErrCode::config, "train config: shift_range must be >= 0");
  if (!(scale_lo <= scale_hi) || scale_lo <= 0.0)
    fail(ErrCode::config, "train config: need 0 < scale_lo <= scale_hi");
}

double poly_lr(double lr0, double power, int epoch, int epochs) {
  if (epoch < 0 || epoch >= epochs) fail(ErrCode::validation, "poly_lr: epoch out of range");
  return lr0 * std::pow(1.0 - double(epoch) / double(epochs), power);
}

void adam_step(ParamStore& params, const Tape::Gradients& grads, AdamState& state, double lr,
               double weight_decay) {
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  auto& entries = params.entries();
  if (state.m.empty()) {
    for (const auto& e : entries) {
      state.m.emplace_back(std::size_t(e.tensor.size()), 0.0);
      state.v.emplace_back(std::size_t(e.tensor.size()), 0.0);
    }
  }
  if (state.m.size() != entries.size())
    fail(ErrCode::shape, "adam_step: state does not match the parameter store");
  state.t += 1;
  double c1 = 1.0 - std::pow(b1, double(state.t));
  double c2 = 1.0 - std::pow(b2, double(state.t));
  for (std::size_t p = 0; p < entries.size(); ++p) {
    Tensor& t = entries[p].tensor;
    std::vector<double> g = grads.get(t);
    if (long(g.size()) != t.size()) fail(ErrCode::shape, "adam_step: gradient shape mismatch");
    double* w = t.data();
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (std::size_t i = 0; i < g.size(); ++i) {
      double gi = g[i] + weight_decay * w[i];
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

AugmentDraw draw_augment(Rng& rng, const TrainConfig& cfg) {
  AugmentDraw d;
  for (int a = 0; a < 3; ++a) d.flip[std::size_t(a)] = rng.uniform01() < cfg.flip_prob;
  d.shift = rng.uniform(-cfg.shift_range, cfg.shift_range);
  d.scale = rng.uniform(cfg.scale_lo, cfg.scale_hi);
  return d;
}

void apply_augment(Volume& vol, const AugmentDraw& draw) {
  for (int a = 0; a < 3; ++a)
    if (draw.flip[std::size_t(a)]) flip_axis(vol, a);
  shift_scale(vol, draw.shift, draw.scale);
}

TrainResult train_model(const TrainConfig& cfg, const Lexicon& lex,
                        const std::vector<CorpusCase>& cases,
                        const std::vector<DiseaseQuery>& queries, const std::string& ckpt_out,
                        const std::string& csv_out) {
  cfg.validate();
  lex.validate();
  Model model = init_model(cfg.model, cfg.toggles, lex.modalities, lex.disease_classes, queries,
                           cfg.seed);
  int K = int(lex.modalities.size());
  int C = int(queries.size());

  // Load and embed everything once; training touches no files after this.
  std::vector<PreparedCase> prepared;
  for (const CorpusCase& c : cases) {
    bool complete = true;
    for (const auto& mod : lex.modalities)
      if (!c.volume_paths.count(mod)) complete = false;
    if (!complete) {
      std::cerr << "warning: case " << c.id << " lacks a modality volume; skipped\n";
      continue;
    }
    PreparedCase pc;
    for (const auto& mod : lex.modalities) {
      Volume v = load_volume(c.volume_paths.at(mod));
      if (v.dims != cfg.model.input_dims)
        fail(ErrCode::shape, "case " + c.id + ": volume dims do not match the configured input");
      pc.volumes.push_back(std::move(v));
    }
    DecomposedReport rep = decompose_report(c.report(), lex);
    pc.keys = rep.modality_keys;
    pc.global_key = rep.global_key;
    for (int k = 0; k < K; ++k)
      pc.text_mod.push_back(Tensor({cfg.model.d}, model.text->encode(pc.keys[std::size_t(k)])));
    pc.text_glob = Tensor({cfg.model.d}, model.text->encode(pc.global_key));
    pc.labels = Tensor({C}, query_labels(c, lex, queries, rep));
    prepared.push_back(std::move(pc));
  }
  if (prepared.empty()) fail(ErrCode::validation, "train: no usable cases in the corpus");

  Tensor query_mat = model.query_matrix(model.queries);  // constant [C, d]
  AdamState adam;
  TrainResult result;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = poly_lr(cfg.lr0, cfg.poly_power, epoch, cfg.epochs);
    std::vector<std::size_t> order(prepared.size());
    std::iota(order.begin(), order.end(), std::size_t(0));
    Rng shuffle_rng(seed_stream(cfg.seed, kShuffleStream + std::uint64_t(epoch)));
    shuffle_rng.shuffle(order);
    Rng aug_rng(seed_stream(cfg.seed, kAugmentStream + std::uint64_t(epoch)));

    double bce_sum = 0.0, glob_sum = 0.0, total_sum = 0.0;
    std::vector<double> mod_sum(std::size_t(K), 0.0);
    long steps = 0;

    for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch)) {
      std::size_t stop = std::min(order.size(), start + std::size_t(cfg.batch));
      Tape tape;
      for (auto& e : model.params.entries()) tape.watch(e.tensor);

      std::vector<Tensor> prob_rows, label_rows;
      std::vector<std::vector<Tensor>> img_mod, txt_mod;
      std::vector<std::vector<std::string>> key_mod;
      img_mod.resize(std::size_t(K));
      txt_mod.resize(std::size_t(K));
      key_mod.resize(std::size_t(K));
      std::vector<Tensor> img_glob, txt_glob;
      std::vector<std::string> key_glob;

      for (std::size_t bi = start; bi < stop; ++bi) {
        const PreparedCase& pc = prepared[order[bi]];
        AugmentDraw draw = draw_augment(aug_rng, cfg);
        std::vector<Tensor> vols;
        for (const Volume& base : pc.volumes) {
          Volume v = base;
          apply_augment(v, draw);
          vols.push_back(volume_tensor(v));
        }
        CaseEncoding enc = model.encode_case(vols);

        Tensor probs = cfg.toggles.cvp
                           ? model.probs_from_decoded(model.decode(query_mat, enc.fused).decoded)
                           : model.probs_linear(enc.fused_pooled);
        prob_rows.push_back(probs);
        label_rows.push_back(pc.labels);

        // a row joins an alignment batch only when its report text exists
        for (int k = 0; k < K; ++k) {
          if (pc.keys[std::size_t(k)].empty()) continue;
          img_mod[std::size_t(k)].push_back(enc.pooled[std::size_t(k)]);
          txt_mod[std::size_t(k)].push_back(pc.text_mod[std::size_t(k)]);
          key_mod[std::size_t(k)].push_back(pc.keys[std::size_t(k)]);
        }
        if (!pc.global_key.empty()) {
          img_glob.push_back(enc.fused_pooled);
          txt_glob.push_back(pc.text_glob);
          key_glob.push_back(pc.global_key);
        }
      }

      Tensor bce = bce_loss(stack_rows(prob_rows), stack_rows(label_rows));
      std::vector<Tensor> align;
      double glob_item = 0.0;
      std::vector<double> mod_item(std::size_t(K), 0.0);
      if (cfg.toggles.global_align && !img_glob.empty()) {
        Tensor lg = contrastive_loss(stack_rows(img_glob), stack_rows(txt_glob), model.log_tau(),
                                     duplicate_weights(key_glob));
        glob_item = lg.item();
        align.push_back(std::move(lg));
      }
      if (cfg.toggles.modality_align) {
        for (int k = 0; k < K; ++k) {
          auto& rows = img_mod[std::size_t(k)];
          if (rows.empty()) continue;
          Tensor lk = contrastive_loss(stack_rows(rows), stack_rows(txt_mod[std::size_t(k)]),
                                       model.log_tau(), duplicate_weights(key_mod[std::size_t(k)]));
          mod_item[std::size_t(k)] = lk.item();
          align.push_back(std::move(lk));
        }
      }
      Tensor total = combine_losses(bce, align);

      auto grads = tape.gradients(total);
      adam_step(model.params, grads, adam, lr, cfg.weight_decay);
      {
        double* lt = model.params.get("log_tau").data();
        lt[0] = std::clamp(lt[0], kLogTauMin, kLogTauMax);
      }

      bce_sum += bce.item();
      glob_sum += glob_item;
      for (int k = 0; k < K; ++k) mod_sum[std::size_t(k)] += mod_item[std::size_t(k)];
      total_sum += total.item();
      ++steps;
    }

    std::vector<double> row;
    row.push_back(bce_sum / double(steps));
    row.push_back(glob_sum / double(steps));
    for (int k = 0; k < K; ++k) row.push_back(mod_sum[std::size_t(k)] / double(steps));
    row.push_back(total_sum / double(steps));
    row.push_back(lr);
    result.curve.push_back(std::move(row));
  }

  save_model(ckpt_out, model);

  std::string tmp = csv_out + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) fail(ErrCode::io, "cannot open '" + tmp + "' for writing");
    os << "epoch,bce,global";
    for (const auto& mod : lex.modalities) os << ',' << mod;
    os << ",total,lr\n";
    for (std::size_t e = 0; e < result.curve.size(); ++e) {
      os << e;
      for (double v : result.curve[e]) os << ',' << fmt17(v);
      os << '\n';
    }
    os.close();
    if (!os) fail(ErrCode::io, "failed writing '" + tmp + "'");
  }
  std::error_code ec;
  fs::rename(tmp, csv_out, ec);
  if (ec) fail(ErrCode::io, "cannot move '" + tmp + "' into place: " + ec.message());

  result.model = std::move(model);
  return result;
}

namespace {

std::vector<Tensor> load_case_volumes(const Model& m, const CorpusCase& c) {
  std::vector<Tensor> vols;
  for (const auto& mod : m.modalities) {
    auto it = c.volume_paths.find(mod);
    if (it == c.volume_paths.end())
      fail(ErrCode::validation, "case " + c.id + " lacks a volume for modality " + mod);
    Volume v = load_volume(it->second);
    if (v.dims != m.cfg.input_dims)
      fail(ErrCode::shape, "case " + c.id + ": volume dims do not match the checkpoint");
    vols.push_back(volume_tensor(v));
  }
  return vols;
}

}  // namespace

std::vector<double> infer_case(const Model& m, const CorpusCase& c,
                               std::span<const DiseaseQuery> queries) {
  std::vector<Tensor> vols = load_case_volumes(m, c);
  CaseEncoding enc = m.encode_case(vols);
  Tensor probs;
  if (m.toggles.cvp) {
    Tensor qm = m.query_matrix(queries);
    probs = m.probs_from_decoded(m.decode(qm, enc.fused).decoded);
  } else {
    if (queries.size() != m.queries.size())
      fail(ErrCode::validation, "the linear head predicts the trained query set only");
    probs = m.probs_linear(enc.fused_pooled);
  }
  return probs.values();
}

GroundResult ground_case(const Model& m, const CorpusCase& c, const std::string& disease) {
  if (!m.toggles.cvp)
    fail(ErrCode::validation, "grounding requires the cross-attention head (cvp enabled)");
  int qi = -1;
  for (std::size_t i = 0; i < m.queries.size(); ++i)
    if (m.queries[i].name == disease) qi = int(i);
  if (qi < 0) fail(ErrCode::validation, "disease '" + disease + "' is not a trained query");

  std::vector<Tensor> vols = load_case_volumes(m, c);
  CaseEncoding enc = m.encode_case(vols);
  Tensor qm = m.query_matrix(m.queries);
  CvpOutput out = m.decode(qm, enc.fused);
  const Tensor& att = out.attention.back();  // [C, l]

  int l = m.cfg.patches();
  std::vector<double> weights(std::size_t(l), 0.0);
  for (int p = 0; p < l; ++p) weights[std::size_t(p)] = att(qi, p);

  GroundResult g;
  g.patch_weights = weights;
  g.heatmap = upsample_trilinear(weights, m.cfg.grid(), m.cfg.input_dims);
  float best = g.heatmap.voxels[0];
  for (int x = 0; x < g.heatmap.dims[0]; ++x)
    for (int y = 0; y < g.heatmap.dims[1]; ++y)
      for (int z = 0; z < g.heatmap.dims[2]; ++z)
        if (g.heatmap.at(x, y, z) > best) {
          best = g.heatmap.at(x, y, z);
          g.argmax = {x, y, z};
        }
  return g;
}

EvalReport eval_corpus(const Model& m, const std::vector<CorpusCase>& cases, const Lexicon* lex,
                       std::vector<std::vector<double>>* probs_out,
                       std::vector<std::vector<int>>* labels_out) {
  if (cases.empty()) fail(ErrCode::validation, "eval: empty corpus");
  std::vector<std::vector<double>> probs;
  std::vector<std::vector<int>> labels;
  for (const CorpusCase& c : cases) {
    probs.push_back(infer_case(m, c, m.queries));
    std::vector<int> y;
    const std::vector<int>* src = nullptr;
    std::vector<int> derived;
    if (!c.gold_labels.empty()) {
      if (c.gold_labels.size() != m.classes.size())
        fail(ErrCode::validation,
             "case " + c.id + ": gold label count does not match the checkpoint classes");
      src = &c.gold_labels;
    } else if (lex) {
      derived = decompose_report(c.report(), *lex).labels;
      if (derived.size() != m.classes.size())
        fail(ErrCode::validation, "lexicon classes do not match the checkpoint classes");
      src = &derived;
    } else {
      fail(ErrCode::validation,
           "case " + c.id + " has no gold labels; pass a lexicon to derive them");
    }
    for (const auto& q : m.queries) {
      int ci = m.class_index(q.name);
      if (ci < 0) fail(ErrCode::validation, "query '" + q.name + "' missing from classes");
      y.push_back((*src)[std::size_t(ci)]);
    }
    labels.push_back(std::move(y));
  }
  EvalReport rep = evaluate_predictions(probs, labels);
  if (probs_out) *probs_out = std::move(probs);
  if (labels_out) *labels_out = std::move(labels);
  return rep;
}

Volume upsample_trilinear(const std::vector<double>& grid_vals, std::array<int, 3> grid_dims,
                          std::array<int, 3> out_dims) {
  long expect = long(grid_dims[0]) * grid_dims[1] * grid_dims[2];
  if (long(grid_vals.size()) != expect)
    fail(ErrCode::shape, "upsample_trilinear: grid value count does not match grid dims");
  auto at = [&](int x, int y, int z) {
    return grid_vals[(std::size_t(x) * std::size_t(grid_dims[1]) + std::size_t(y)) *
                         std::size_t(grid_dims[2]) +
                     std::size_t(z)];
  };
  Volume out = make_volume(out_dims);
  for (int x = 0; x < out_dims[0]; ++x) {
    for (int y = 0; y < out_dims[1]; ++y) {
      for (int z = 0; z < out_dims[2]; ++z) {
        int i0[3], i1[3];
        double f[3];
        int oidx[3] = {x, y, z};
        for (int a = 0; a < 3; ++a) {
          // voxel-center mapping, clamped at the borders
          double s = (oidx[a] + 0.5) * double(grid_dims[std::size_t(a)]) /
                         double(out_dims[std::size_t(a)]) -
                     0.5;
          s = std::clamp(s, 0.0, double(grid_dims[std::size_t(a)] - 1));
          i0[a] = int(std::floor(s));
          i1[a] = std::min(i0[a] + 1, grid_dims[std::size_t(a)] - 1);
          f[a] = s - double(i0[a]);
        }
        double v = 0.0;
        for (int cx = 0; cx < 2; ++cx)
          for (int cy = 0; cy < 2; ++cy)
            for (int cz = 0; cz < 2; ++cz) {
              double w = (cx ? f[0] : 1.0 - f[0]) * (cy ? f[1] : 1.0 - f[1]) *
                         (cz ? f[2] : 1.0 - f[2]);
              v += w * at(cx ? i1[0] : i0[0], cy ? i1[1] : i0[1], cz ? i1[2] : i0[2]);
            }
        out.at(x, y, z) = float(v);
      }
    }
  }
  return out;
}

}  // namespace ub
