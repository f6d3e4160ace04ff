#include "unibrain/model.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "unibrain/alignment.hpp"

namespace ub {

namespace {

constexpr std::uint64_t kTextStream = 0x74657874ULL;  // text-table seed family
constexpr std::uint64_t kInitStream = 0x696e6974ULL;  // weight-init family

int conv_extent(int in, int stride) { return (in - 3 + 2) / stride + 1; }

void fill_normal(Tensor& t, Rng& rng, double scale) {
  for (long i = 0; i < t.size(); ++i) t.data()[i] = rng.normal() * scale;
}

std::vector<ConvSpec> conv_stack(const ParamStore& params) {
  std::vector<ConvSpec> convs(2);
  convs[0] = ConvSpec{params.get("enc.conv1.W"), params.get("enc.conv1.b"), 2};
  convs[1] = ConvSpec{params.get("enc.conv2.W"), params.get("enc.conv2.b"), 2};
  return convs;
}

std::vector<CvpBlock> cvp_stack(const ParamStore& params, int blocks) {
  std::vector<CvpBlock> out;
  for (int i = 0; i < blocks; ++i) {
    std::string p = "cvp.b" + std::to_string(i) + ".";
    CvpBlock b;
    b.Wq = params.get(p + "Wq");
    b.bq = params.get(p + "bq");
    b.Wk = params.get(p + "Wk");
    b.bk = params.get(p + "bk");
    b.Wv = params.get(p + "Wv");
    b.bv = params.get(p + "bv");
    b.Wo = params.get(p + "Wo");
    b.bo = params.get(p + "bo");
    b.Wf1 = params.get(p + "Wf1");
    b.bf1 = params.get(p + "bf1");
    b.Wf2 = params.get(p + "Wf2");
    b.bf2 = params.get(p + "bf2");
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace

nlohmann::json ModelConfig::to_json() const {
  return nlohmann::json{{"input_dims", {input_dims[0], input_dims[1], input_dims[2]}},
                        {"conv1", conv1},
                        {"conv2", conv2},
                        {"proj_hidden", proj_hidden},
                        {"d", d},
                        {"heads", heads},
                        {"blocks", blocks},
                        {"ffn", ffn},
                        {"cls_hidden", cls_hidden},
                        {"text_vocab", text_vocab},
                        {"tau_init", tau_init}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrCode::config, "model config: expected a JSON object");
  ModelConfig cfg;
  if (j.contains("input_dims")) {
    if (!j["input_dims"].is_array() || j["input_dims"].size() != 3)
      fail(ErrCode::config, "model config: input_dims must have 3 entries");
    for (int i = 0; i < 3; ++i)
      cfg.input_dims[std::size_t(i)] = j["input_dims"][std::size_t(i)].get<int>();
  }
  cfg.conv1 = j.value("conv1", cfg.conv1);
  cfg.conv2 = j.value("conv2", cfg.conv2);
  cfg.proj_hidden = j.value("proj_hidden", cfg.proj_hidden);
  cfg.d = j.value("d", cfg.d);
  cfg.heads = j.value("heads", cfg.heads);
  cfg.blocks = j.value("blocks", cfg.blocks);
  cfg.ffn = j.value("ffn", cfg.ffn);
  cfg.cls_hidden = j.value("cls_hidden", cfg.cls_hidden);
  cfg.text_vocab = j.value("text_vocab", cfg.text_vocab);
  cfg.tau_init = j.value("tau_init", cfg.tau_init);
  return cfg;
}

void ModelConfig::validate() const {
  for (int a = 0; a < 3; ++a)
    if (input_dims[std::size_t(a)] < 8)
      fail(ErrCode::config, "model config: input dims must be >= 8 for two stride-2 convs");
  if (conv1 < 1 || conv2 < 1 || proj_hidden < 1 || d < 1 || ffn < 1 || cls_hidden < 1)
    fail(ErrCode::config, "model config: widths must be >= 1");
  if (heads < 1 || blocks < 1) fail(ErrCode::config, "model config: heads/blocks must be >= 1");
  if (d % heads != 0) fail(ErrCode::config, "model config: d must be divisible by heads");
  if (text_vocab < 1) fail(ErrCode::config, "model config: text_vocab must be >= 1");
  if (!(tau_init > 0.0)) fail(ErrCode::config, "model config: tau_init must be positive");
}

std::array<int, 3> ModelConfig::grid() const {
  std::array<int, 3> g{};
  for (int a = 0; a < 3; ++a)
    g[std::size_t(a)] = conv_extent(conv_extent(input_dims[std::size_t(a)], 2), 2);
  return g;
}

int ModelConfig::patches() const {
  auto g = grid();
  return g[0] * g[1] * g[2];
}

std::vector<DiseaseQuery> load_queries(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrCode::io, "cannot open query file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrCode::parse, path + ": invalid JSON: " + std::string(e.what()));
  }
  if (!j.is_array() || j.empty())
    fail(ErrCode::parse, path + ": expected a non-empty array of {name, description}");
  std::vector<DiseaseQuery> out;
  std::set<std::string> seen;
  for (const auto& q : j) {
    DiseaseQuery dq;
    dq.name = q.value("name", "");
    dq.description = q.value("description", "");
    if (dq.name.empty()) fail(ErrCode::parse, path + ": query with empty name");
    if (!seen.insert(dq.name).second)
      fail(ErrCode::validation, path + ": duplicate query name '" + dq.name + "'");
    out.push_back(std::move(dq));
  }
  return out;
}

int Model::class_index(const std::string& name) const {
  for (std::size_t i = 0; i < classes.size(); ++i)
    if (classes[i] == name) return int(i);
  return -1;
}

Tensor Model::encode_volume(const Tensor& vol) const {
  auto convs = conv_stack(params);
  Tensor raw = encode_image(vol, convs);
  return project_patches(raw, params.get("proj.W1"), params.get("proj.b1"),
                         params.get("proj.W2"), params.get("proj.b2"));
}

CaseEncoding Model::encode_case(std::span<const Tensor> vols) const {
  if (vols.size() != modalities.size())
    fail(ErrCode::shape, "encode_case: expected one volume per modality");
  CaseEncoding enc;
  for (const Tensor& v : vols) {
    enc.u.push_back(encode_volume(v));
    enc.pooled.push_back(pool_patches(enc.u.back()));
  }
  enc.fused = fuse_modalities(enc.u, params.get("fuse.W"), params.get("fuse.b"));
  enc.fused_pooled = pool_patches(enc.fused);
  return enc;
}

Tensor Model::query_matrix(std::span<const DiseaseQuery> qs) const {
  if (qs.empty()) fail(ErrCode::validation, "query_matrix: no queries");
  std::vector<Tensor> rows;
  for (const DiseaseQuery& q : qs) {
    const std::string& src = toggles.query_mode == "name" ? q.name : q.description;
    if (toggles.query_mode == "description" && q.description.empty())
      fail(ErrCode::validation, "query '" + q.name + "' has no description");
    rows.push_back(Tensor({cfg.d}, text->encode(src)));
  }
  return stack_rows(rows);
}

CvpOutput Model::decode(const Tensor& queries_cd, const Tensor& fused) const {
  auto blocks = cvp_stack(params, cfg.blocks);
  return cvp_decode(queries_cd, fused, blocks, cfg.heads);
}

Tensor Model::probs_from_decoded(const Tensor& decoded) const {
  return classify_queries(decoded, params.get("cls.W1"), params.get("cls.b1"),
                          params.get("cls.W2"), params.get("cls.b2"));
}

Tensor Model::probs_linear(const Tensor& fused_pooled) const {
  Tensor x = reshape(fused_pooled, {1, cfg.d});
  Tensor logits = affine(x, params.get("lin.W"), params.get("lin.b"));
  return reshape(sigmoid(logits), {int(queries.size())});
}

Tensor Model::log_tau() const { return params.get("log_tau"); }

Model init_model(const ModelConfig& cfg, const Toggles& toggles,
                 const std::vector<std::string>& modalities,
                 const std::vector<std::string>& classes,
                 const std::vector<DiseaseQuery>& queries, std::uint64_t seed) {
  cfg.validate();
  if (toggles.query_mode != "description" && toggles.query_mode != "name")
    fail(ErrCode::config, "query_mode must be 'description' or 'name'");
  if (modalities.empty()) fail(ErrCode::validation, "init_model: no modalities");
  if (classes.empty()) fail(ErrCode::validation, "init_model: no classes");
  if (queries.empty()) fail(ErrCode::validation, "init_model: no queries");
  std::set<std::string> qnames;
  for (const auto& q : queries) {
    if (!qnames.insert(q.name).second)
      fail(ErrCode::validation, "init_model: duplicate query '" + q.name + "'");
    bool known = false;
    for (const auto& c : classes) known = known || c == q.name;
    if (!known)
      fail(ErrCode::validation, "init_model: query '" + q.name + "' is not a known class");
  }

  Model m;
  m.cfg = cfg;
  m.toggles = toggles;
  m.modalities = modalities;
  m.classes = classes;
  m.queries = queries;
  m.text_seed = seed_stream(seed, kTextStream);
  m.text.emplace(cfg.d, cfg.text_vocab, m.text_seed);

  Rng rng(seed_stream(seed, kInitStream));
  int K = int(modalities.size());
  int C = int(queries.size());
  auto weight = [&](const std::string& name, Shape shape, long fan_in) {
    Tensor& t = m.params.create(name, std::move(shape));
    fill_normal(t, rng, 1.0 / std::sqrt(double(fan_in)));
  };
  auto bias = [&](const std::string& name, int n) { m.params.create(name, {n}); };

  weight("enc.conv1.W", {cfg.conv1, 27}, 27);
  bias("enc.conv1.b", cfg.conv1);
  weight("enc.conv2.W", {cfg.conv2, cfg.conv1 * 27}, cfg.conv1 * 27);
  bias("enc.conv2.b", cfg.conv2);
  weight("proj.W1", {cfg.conv2, cfg.proj_hidden}, cfg.conv2);
  bias("proj.b1", cfg.proj_hidden);
  weight("proj.W2", {cfg.proj_hidden, cfg.d}, cfg.proj_hidden);
  bias("proj.b2", cfg.d);
  weight("fuse.W", {K * cfg.d, cfg.d}, K * cfg.d);
  bias("fuse.b", cfg.d);
  for (int i = 0; i < cfg.blocks; ++i) {
    std::string p = "cvp.b" + std::to_string(i) + ".";
    for (const char* w : {"Wq", "Wk", "Wv", "Wo"}) {
      weight(p + w, {cfg.d, cfg.d}, cfg.d);
      bias(p + "b" + std::string(w + 1), cfg.d);
    }
    weight(p + "Wf1", {cfg.d, cfg.ffn}, cfg.d);
    bias(p + "bf1", cfg.ffn);
    weight(p + "Wf2", {cfg.ffn, cfg.d}, cfg.ffn);
    bias(p + "bf2", cfg.d);
  }
  weight("cls.W1", {cfg.d, cfg.cls_hidden}, cfg.d);
  bias("cls.b1", cfg.cls_hidden);
  weight("cls.W2", {cfg.cls_hidden, 1}, cfg.cls_hidden);
  bias("cls.b2", 1);
  weight("lin.W", {cfg.d, C}, cfg.d);
  bias("lin.b", C);
  m.params.put("log_tau", Tensor::scalar(std::log(cfg.tau_init)));

  return m;
}

void save_model(const std::string& path, const Model& m) {
  nlohmann::json queries = nlohmann::json::array();
  for (const auto& q : m.queries)
    queries.push_back({{"name", q.name}, {"description", q.description}});
  nlohmann::json meta{
      {"kind", "unibrain-model"},
      {"config", m.cfg.to_json()},
      {"toggles",
       {{"modality_align", m.toggles.modality_align},
        {"global_align", m.toggles.global_align},
        {"cvp", m.toggles.cvp},
        {"query_mode", m.toggles.query_mode}}},
      {"modalities", m.modalities},
      {"classes", m.classes},
      {"queries", std::move(queries)},
      {"text", {{"vocab", m.cfg.text_vocab}, {"seed", m.text_seed}}}};
  save_checkpoint(path, m.params, meta);
}

Model load_model(const std::string& path) {
  Model m;
  nlohmann::json meta = load_checkpoint(path, m.params);
  if (meta.value("kind", "") != "unibrain-model")
    fail(ErrCode::checkpoint, path + ": not a model checkpoint");
  try {
    m.cfg = ModelConfig::from_json(meta.at("config"));
    const auto& t = meta.at("toggles");
    m.toggles.modality_align = t.value("modality_align", true);
    m.toggles.global_align = t.value("global_align", true);
    m.toggles.cvp = t.value("cvp", true);
    m.toggles.query_mode = t.value("query_mode", "description");
    m.modalities = meta.at("modalities").get<std::vector<std::string>>();
    m.classes = meta.at("classes").get<std::vector<std::string>>();
    for (const auto& q : meta.at("queries"))
      m.queries.push_back({q.value("name", ""), q.value("description", "")});
    m.text_seed = meta.at("text").at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrCode::checkpoint, path + ": malformed model meta: " + std::string(e.what()));
  }
  m.cfg.validate();
  m.text.emplace(m.cfg.d, m.cfg.text_vocab, m.text_seed);
  if (!m.params.contains("log_tau"))
    fail(ErrCode::checkpoint, path + ": checkpoint lacks model parameters");
  return m;
}

}  // namespace ub
