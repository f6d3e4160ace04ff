#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "unibrain/checkpoint.hpp"
#include "unibrain/cvp.hpp"
#include "unibrain/encoders.hpp"
#include "unibrain/text_encoder.hpp"

namespace ub {

// Network dimensions.  The image encoder is two stride-2 conv+relu blocks
// followed by a two-layer projection to width d; the same parameters encode
// every modality.
struct ModelConfig {
  std::array<int, 3> input_dims{32, 32, 8};
  int conv1 = 8, conv2 = 16;  // encoder channels
  int proj_hidden = 32;
  int d = 32;  // shared embedding width
  int heads = 4, blocks = 4, ffn = 64;
  int cls_hidden = 32;
  int text_vocab = 4096;
  double tau_init = 1.0 / 0.07;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  void validate() const;

  std::array<int, 3> grid() const;  // patch grid after the conv strides
  int patches() const;              // l = product of grid extents
};

struct DiseaseQuery {
  std::string name, description;
};

// JSON array [{"name", "description"}]
std::vector<DiseaseQuery> load_queries(const std::string& path);

struct Toggles {
  bool modality_align = true;
  bool global_align = true;
  bool cvp = true;
  std::string query_mode = "description";  // what the query embedding reads
};

struct CaseEncoding {
  std::vector<Tensor> u;       // K x [l, d] per-modality patch embeddings
  std::vector<Tensor> pooled;  // K x [d] pooled, unit norm
  Tensor fused;                // [l, d]
  Tensor fused_pooled;         // [d]
};

struct Model {
  ModelConfig cfg;
  Toggles toggles;
  std::vector<std::string> modalities;  // volume/alignment order
  std::vector<std::string> classes;     // gold-label order (lexicon classes)
  std::vector<DiseaseQuery> queries;    // trained query set
  std::uint64_t text_seed = 0;
  ParamStore params;
  std::optional<TextEncoder> text;  // frozen; regenerated from text_seed

  int class_index(const std::string& name) const;  // -1 when absent

  Tensor encode_volume(const Tensor& vol) const;  // [1,X,Y,Z] -> [l, d]
  CaseEncoding encode_case(std::span<const Tensor> vols) const;

  // constant [C, d] rows from the frozen text encoder (name or description
  // per toggles.query_mode)
  Tensor query_matrix(std::span<const DiseaseQuery> qs) const;

  CvpOutput decode(const Tensor& queries_cd, const Tensor& fused) const;
  Tensor probs_from_decoded(const Tensor& decoded) const;  // [C]
  Tensor probs_linear(const Tensor& fused_pooled) const;   // [C_trained]
  Tensor log_tau() const;
};

// Fresh parameters from the seed; queries must name known classes.
Model init_model(const ModelConfig& cfg, const Toggles& toggles,
                 const std::vector<std::string>& modalities,
                 const std::vector<std::string>& classes,
                 const std::vector<DiseaseQuery>& queries, std::uint64_t seed);

void save_model(const std::string& path, const Model& m);
Model load_model(const std::string& path);

}  // namespace ub
