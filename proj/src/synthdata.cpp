#include "unibrain/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "unibrain/ard.hpp"

namespace fs = std::filesystem;

namespace ub {

namespace {

constexpr std::uint64_t kCaseStream = 0x53594e5448434153ULL;  // per-case rng family

std::array<int, 3> int3(const nlohmann::json& j, const char* field, const std::string& where) {
  if (!j.contains(field) || !j[field].is_array() || j[field].size() != 3)
    fail(ErrCode::parse, where + ": '" + field + "' must be an array of 3 integers");
  std::array<int, 3> out{0, 0, 0};
  for (int i = 0; i < 3; ++i) out[std::size_t(i)] = j[field][std::size_t(i)].get<int>();
  return out;
}

// The generated text must parse back to the generated labels, so every word
// the generator writes has to be a lexicon surface of the right type.
void require_surface(const Lexicon& lex, const std::string& word, EntityType type,
                     const std::string& what) {
  std::string key = normalize_ws(to_lower(word));
  for (const auto& e : lex.entries)
    if (e.type == type && e.surface == key && e.canonical == word) return;
  fail(ErrCode::validation, "synth spec: " + what + " '" + word +
                                "' is not a lexicon surface with that canonical form");
}

std::string cap_first_word(std::string s) {
  if (!s.empty()) s[0] = char(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

std::string safe_name(const std::string& s) {
  std::string out = s;
  for (char& c : out)
    if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
  return out;
}

}  // namespace

SynthSpec SynthSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrCode::parse, "synth spec: expected a JSON object");
  SynthSpec spec;
  spec.dims = int3(j, "dims", "synth spec");
  spec.noise = j.value("noise", 0.1);
  spec.lesion_offset = j.value("lesion_offset", 1.0);
  spec.negation_rate = j.value("negation_rate", 0.05);
  spec.max_diseases = j.value("max_diseases", 2);
  spec.default_cases = j.value("cases", 0);
  if (!j.contains("diseases") || !j["diseases"].is_array())
    fail(ErrCode::parse, "synth spec: 'diseases' must be an array");
  for (const auto& dj : j["diseases"]) {
    SynthDisease d;
    d.name = dj.value("name", "");
    d.anatomy = dj.value("anatomy", "");
    d.side = dj.value("side", "");
    std::string where = "synth spec disease '" + d.name + "'";
    if (!dj.contains("region") || !dj["region"].is_object())
      fail(ErrCode::parse, where + ": 'region' must be an object with lo/hi");
    d.region_lo = int3(dj["region"], "lo", where);
    d.region_hi = int3(dj["region"], "hi", where);
    if (!dj.contains("size") || !dj["size"].is_object())
      fail(ErrCode::parse, where + ": 'size' must be an object with min/max");
    d.size_min = int3(dj["size"], "min", where);
    d.size_max = int3(dj["size"], "max", where);
    if (dj.contains("signature")) {
      if (!dj["signature"].is_object()) fail(ErrCode::parse, where + ": 'signature' must map modality to hyper|hypo|none");
      for (const auto& [mod, sig] : dj["signature"].items())
        d.signature[mod] = sig.get<std::string>();
    }
    d.prevalence = dj.value("prevalence", 0.3);
    spec.diseases.push_back(std::move(d));
  }
  return spec;
}

SynthSpec SynthSpec::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrCode::io, "cannot open synth spec '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrCode::parse, path + ": invalid JSON: " + std::string(e.what()));
  }
  return from_json(j);
}

void SynthSpec::validate(const Lexicon& lex) const {
  for (int a = 0; a < 3; ++a)
    if (dims[std::size_t(a)] < 1) fail(ErrCode::validation, "synth spec: dims must be >= 1");
  if (!(noise >= 0.0) || !std::isfinite(noise))
    fail(ErrCode::validation, "synth spec: noise must be a finite non-negative number");
  if (!std::isfinite(lesion_offset))
    fail(ErrCode::validation, "synth spec: lesion_offset must be finite");
  if (negation_rate < 0.0 || negation_rate > 1.0)
    fail(ErrCode::validation, "synth spec: negation_rate must lie in [0, 1]");
  if (max_diseases < 0) fail(ErrCode::validation, "synth spec: max_diseases must be >= 0");
  if (lex.modalities.empty()) fail(ErrCode::validation, "synth spec: lexicon has no modalities");

  for (const auto& d : diseases) {
    std::string where = "synth spec disease '" + d.name + "'";
    if (d.name.empty()) fail(ErrCode::validation, "synth spec: disease with empty name");
    if (lex.class_index(d.name) < 0)
      fail(ErrCode::validation, where + ": not a lexicon disease class");
    require_surface(lex, d.name, EntityType::pathology, "disease");
    require_surface(lex, d.anatomy, EntityType::anatomy, "anatomy");
    if (!d.side.empty()) require_surface(lex, d.side, EntityType::side, "side");
    if (!(d.prevalence > 0.0 && d.prevalence <= 1.0))
      fail(ErrCode::validation, where + ": prevalence must lie in (0, 1]");
    bool visible = false;
    for (const auto& [mod, sig] : d.signature) {
      if (lex.modality_index(mod) < 0)
        fail(ErrCode::validation, where + ": signature names unknown modality '" + mod + "'");
      if (sig != "hyper" && sig != "hypo" && sig != "none")
        fail(ErrCode::validation, where + ": signature values must be hyper|hypo|none");
      if (sig != "none") visible = true;
    }
    if (!visible)
      fail(ErrCode::validation, where + ": invisible in every modality (all-none signature)");
    for (int a = 0; a < 3; ++a) {
      auto ax = std::size_t(a);
      if (d.region_lo[ax] < 0 || d.region_hi[ax] > dims[ax] || d.region_lo[ax] >= d.region_hi[ax])
        fail(ErrCode::validation, where + ": region must be a non-empty box inside dims");
      if (d.size_min[ax] < 1 || d.size_max[ax] < d.size_min[ax])
        fail(ErrCode::validation, where + ": size range must satisfy 1 <= min <= max");
      if (d.size_max[ax] > d.region_hi[ax] - d.region_lo[ax])
        fail(ErrCode::validation, where + ": max size exceeds the region extent");
    }
  }
}

SynthCase generate_case(const SynthSpec& spec, const Lexicon& lex, std::uint64_t seed,
                        long index) {
  Rng rng(seed_stream(seed, kCaseStream + std::uint64_t(index)));

  // 1. sample which diseases are present (independent Bernoulli, then cap)
  std::vector<std::size_t> present;
  for (std::size_t di = 0; di < spec.diseases.size(); ++di)
    if (rng.uniform01() < spec.diseases[di].prevalence) present.push_back(di);
  while (int(present.size()) > spec.max_diseases)
    present.erase(present.begin() + long(rng.below(present.size())));

  // 2. place one box per present disease
  std::vector<LesionBox> boxes;
  for (std::size_t di : present) {
    const SynthDisease& d = spec.diseases[di];
    LesionBox box;
    box.disease = d.name;
    for (int a = 0; a < 3; ++a) {
      auto ax = std::size_t(a);
      int size = d.size_min[ax] + int(rng.below(std::uint64_t(d.size_max[ax] - d.size_min[ax] + 1)));
      int room = d.region_hi[ax] - d.region_lo[ax] - size;
      int lo = d.region_lo[ax] + int(rng.below(std::uint64_t(room + 1)));
      box.lo[ax] = lo;
      box.hi[ax] = lo + size;
    }
    boxes.push_back(box);
  }

  // 3. optionally inject one negated mention of an absent disease
  int negated_di = -1;
  if (!spec.diseases.empty() && rng.uniform01() < spec.negation_rate) {
    std::vector<std::size_t> absent;
    for (std::size_t di = 0; di < spec.diseases.size(); ++di)
      if (std::find(present.begin(), present.end(), di) == present.end()) absent.push_back(di);
    if (!absent.empty()) negated_di = int(absent[rng.below(absent.size())]);
  }

  // 4. text
  SynthCase out;
  char idbuf[32];
  std::snprintf(idbuf, sizeof idbuf, "case%06ld", index);
  out.record.id = idbuf;
  if (present.empty()) {
    out.record.findings.push_back("Brain parenchyma is unremarkable.");
    out.record.impression.push_back("No obvious abnormality.");
  } else {
    for (std::size_t di : present) {
      const SynthDisease& d = spec.diseases[di];
      std::string location = (d.side.empty() ? d.anatomy : d.side + " " + d.anatomy);
      for (const std::string& mod : lex.modalities) {
        auto it = d.signature.find(mod);
        if (it == d.signature.end() || it->second == "none") continue;
        std::string signal = it->second == "hyper" ? "hyperintensity" : "hypointensity";
        out.record.findings.push_back(
            cap_first_word("patchy " + signal + " on " + mod + " in " + location + "."));
      }
      out.record.impression.push_back(cap_first_word(d.name + " in " + location + "."));
    }
  }
  if (negated_di >= 0)
    out.record.impression.push_back("No evidence of " + spec.diseases[std::size_t(negated_di)].name + ".");

  // 5. gold labels over the lexicon class list
  out.record.gold_labels.assign(std::size_t(lex.num_classes()), 0);
  if (present.empty()) {
    int nc = lex.class_index("normal");
    if (nc < 0) fail(ErrCode::validation, "synth: lexicon lacks a 'normal' class");
    out.record.gold_labels[std::size_t(nc)] = 1;
  } else {
    for (std::size_t di : present)
      out.record.gold_labels[std::size_t(lex.class_index(spec.diseases[di].name))] = 1;
  }
  out.record.lesion_boxes = boxes;

  // 6. volumes: background noise, then signed box offsets per signature
  for (const std::string& mod : lex.modalities) {
    Volume vol = make_volume(spec.dims);
    for (float& v : vol.voxels) v = float(spec.noise * rng.normal());
    for (std::size_t bi = 0; bi < present.size(); ++bi) {
      const SynthDisease& d = spec.diseases[present[bi]];
      auto it = d.signature.find(mod);
      if (it == d.signature.end() || it->second == "none") continue;
      float offset = float(it->second == "hyper" ? spec.lesion_offset : -spec.lesion_offset);
      const LesionBox& box = boxes[bi];
      for (int x = box.lo[0]; x < box.hi[0]; ++x)
        for (int y = box.lo[1]; y < box.hi[1]; ++y)
          for (int z = box.lo[2]; z < box.hi[2]; ++z) vol.at(x, y, z) += offset;
    }
    out.volumes[mod] = std::move(vol);
  }

  // Generator/parser agreement: the text must decompose back to the labels.
  DecomposedReport rep = decompose_report(out.record.report(), lex);
  if (rep.labels != out.record.gold_labels)
    fail(ErrCode::validation,
         "synth: generated report for " + out.record.id + " does not parse back to its labels");

  return out;
}

std::vector<CorpusCase> generate_corpus(const SynthSpec& spec, const Lexicon& lex,
                                        std::uint64_t seed, int n, const std::string& out_dir) {
  if (n < 0) fail(ErrCode::validation, "generate_corpus: n must be >= 0");
  spec.validate(lex);
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "volumes", ec);
  if (ec) fail(ErrCode::io, "cannot create '" + out_dir + "': " + ec.message());

  std::vector<fs::path> written;
  auto cleanup = [&]() {
    std::error_code ig;
    for (const auto& p : written) fs::remove(p, ig);
  };

  std::vector<CorpusCase> cases;
  try {
    for (long i = 0; i < n; ++i) {
      SynthCase sc = generate_case(spec, lex, seed, i);
      for (const std::string& mod : lex.modalities) {
        std::string rel = "volumes/" + sc.record.id + "_" + safe_name(mod) + ".ubv";
        fs::path abs = fs::path(out_dir) / rel;
        save_volume(abs.string(), sc.volumes.at(mod));
        written.push_back(abs);
        sc.record.volume_paths[mod] = rel;  // relative in the saved corpus
      }
      cases.push_back(std::move(sc.record));
    }
    fs::path corpus = fs::path(out_dir) / "corpus.jsonl";
    save_corpus(corpus.string(), cases);
    written.push_back(corpus);
  } catch (...) {
    cleanup();
    throw;
  }

  // return resolved paths, mirroring what load_corpus would produce
  for (auto& c : cases)
    for (auto& [mod, p] : c.volume_paths) p = (fs::path(out_dir) / p).string();
  return cases;
}

}  // namespace ub
