#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "unibrain/dataset.hpp"
#include "unibrain/lexicon.hpp"
#include "unibrain/metrics.hpp"
#include "unibrain/model.hpp"
#include "unibrain/volume.hpp"

namespace ub {

struct TrainConfig {
  ModelConfig model;
  Toggles toggles;
  int batch = 8, epochs = 30;
  double lr0 = 2e-4, poly_power = 0.9, weight_decay = 1e-5;
  double flip_prob = 0.5;           // per plane, shared across the K volumes
  double shift_range = 0.1;         // intensity shift in [-r, r]
  double scale_lo = 0.9, scale_hi = 1.1;
  std::uint64_t seed = 42;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::string& path);
  void validate() const;
};

// lr0 * (1 - epoch/epochs)^power
double poly_lr(double lr0, double power, int epoch, int epochs);

// Adam with bias correction; the L2 term weight_decay * param is added to
// each gradient before the moment updates.  Parameters absent from the
// gradients (untouched by the loss) still decay.
struct AdamState {
  std::vector<std::vector<double>> m, v;  // parallel to the store's entries
  long t = 0;
};

void adam_step(ParamStore& params, const Tape::Gradients& grads, AdamState& state, double lr,
               double weight_decay);

// One case's augmentation draws.  Flips are drawn per plane in axis order
// (sagittal x, coronal y, axial z), then one shift and one scale shared by
// all K volumes: v -> (v + shift) * scale.
struct AugmentDraw {
  std::array<bool, 3> flip{false, false, false};
  double shift = 0.0, scale = 1.0;
};

AugmentDraw draw_augment(Rng& rng, const TrainConfig& cfg);
void apply_augment(Volume& vol, const AugmentDraw& draw);

struct TrainResult {
  Model model;
  // per epoch: [bce, global, modality 1..K, total, lr]
  std::vector<std::vector<double>> curve;
};

// Trains on the corpus and writes the checkpoint and the loss CSV
// (header: epoch,bce,global,<modality names>,total,lr; disabled or empty
// terms log 0).  Cases missing a modality volume are skipped with a warning.
TrainResult train_model(const TrainConfig& cfg, const Lexicon& lex,
                        const std::vector<CorpusCase>& cases,
                        const std::vector<DiseaseQuery>& queries, const std::string& ckpt_out,
                        const std::string& csv_out);

// Deterministic forward pass; queries defaults to the trained set.
std::vector<double> infer_case(const Model& m, const CorpusCase& c,
                               std::span<const DiseaseQuery> queries);

struct GroundResult {
  Volume heatmap;               // input-dims trilinear upsample of the attention
  std::array<int, 3> argmax{};  // voxel coordinates of the heatmap peak
  std::vector<double> patch_weights;  // final-block attention row (sums to 1)
};

// Final-block head-averaged cross-attention of one disease query, reshaped to
// the patch grid and upsampled to the input dims.
GroundResult ground_case(const Model& m, const CorpusCase& c, const std::string& disease);

// Gold labels per query from the corpus (vectors aligned with m.classes);
// falls back to decomposing the report text when lex is given.
EvalReport eval_corpus(const Model& m, const std::vector<CorpusCase>& cases, const Lexicon* lex,
                       std::vector<std::vector<double>>* probs_out = nullptr,
                       std::vector<std::vector<int>>* labels_out = nullptr);

// Voxel-center trilinear interpolation from the patch grid to out_dims.
Volume upsample_trilinear(const std::vector<double>& grid_vals, std::array<int, 3> grid_dims,
                          std::array<int, 3> out_dims);

}  // namespace ub
