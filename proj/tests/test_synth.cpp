#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "unibrain/ard.hpp"
#include "unibrain/synthdata.hpp"

using namespace ub;
namespace fs = std::filesystem;

namespace {

fs::path repo_file(const char* rel) {
  fs::path p = rel;
  for (int i = 0; i < 4 && !fs::exists(p); ++i) p = ".." / p;
  return p;
}

const Lexicon& fixture_lexicon() {
  static Lexicon lex = Lexicon::load(repo_file("data/fixtures/lexicon.json").string());
  return lex;
}

const SynthSpec& fixture_spec() {
  static SynthSpec spec = [] {
    SynthSpec s = SynthSpec::load(repo_file("data/synth_spec.json").string());
    s.validate(fixture_lexicon());
    return s;
  }();
  return spec;
}

fs::path temp_dir(const char* tag) {
  fs::path dir = fs::temp_directory_path() / (std::string("ub_synth_") + tag);
  fs::remove_all(dir);
  return dir;
}

const SynthDisease& spec_disease(const SynthSpec& spec, const std::string& name) {
  for (const auto& d : spec.diseases)
    if (d.name == name) return d;
  REQUIRE(false);
  return spec.diseases.front();
}

}  // namespace

TEST_CASE("synthetic cases are a pure function of spec, seed, and index") {
  const auto& lex = fixture_lexicon();
  const auto& spec = fixture_spec();
  for (long idx : {0L, 3L, 17L}) {
    SynthCase a = generate_case(spec, lex, 42, idx);
    SynthCase b = generate_case(spec, lex, 42, idx);
    CHECK(a.record.id == b.record.id);
    CHECK(a.record.findings == b.record.findings);
    CHECK(a.record.impression == b.record.impression);
    CHECK(a.record.gold_labels == b.record.gold_labels);
    REQUIRE(a.volumes.size() == b.volumes.size());
    for (const auto& [mod, vol] : a.volumes) {
      REQUIRE(b.volumes.count(mod) == 1);
      CHECK(vol.voxels == b.volumes.at(mod).voxels);
    }
  }
  // a different seed moves the voxels
  SynthCase a = generate_case(spec, lex, 42, 0);
  SynthCase c = generate_case(spec, lex, 43, 0);
  CHECK(a.volumes.at("T1WI").voxels != c.volumes.at("T1WI").voxels);
}

TEST_CASE("lesion boxes carry the declared signed contrast per modality") {
  const auto& lex = fixture_lexicon();
  const auto& spec = fixture_spec();
  int checked = 0;
  for (long idx = 0; idx < 60 && checked < 8; ++idx) {
    SynthCase sc = generate_case(spec, lex, 7, idx);
    for (const LesionBox& box : sc.record.lesion_boxes) {
      const SynthDisease& dis = spec_disease(spec, box.disease);
      // boxes stay inside their declared placement region
      for (int a = 0; a < 3; ++a) {
        CHECK(box.lo[std::size_t(a)] >= dis.region_lo[std::size_t(a)]);
        CHECK(box.hi[std::size_t(a)] <= dis.region_hi[std::size_t(a)]);
        CHECK(box.hi[std::size_t(a)] - box.lo[std::size_t(a)] >= dis.size_min[std::size_t(a)]);
        CHECK(box.hi[std::size_t(a)] - box.lo[std::size_t(a)] <= dis.size_max[std::size_t(a)]);
      }
      for (const auto& [mod, kind] : dis.signature) {
        const Volume& vol = sc.volumes.at(mod);
        double in_sum = 0.0, out_sum = 0.0;
        long in_n = 0, out_n = 0;
        for (int x = 0; x < vol.dims[0]; ++x)
          for (int y = 0; y < vol.dims[1]; ++y)
            for (int z = 0; z < vol.dims[2]; ++z) {
              bool in_any = false;
              for (const LesionBox& other : sc.record.lesion_boxes)
                if (other.contains(x, y, z)) in_any = true;
              if (box.contains(x, y, z)) {
                in_sum += vol.at(x, y, z);
                ++in_n;
              } else if (!in_any) {
                out_sum += vol.at(x, y, z);
                ++out_n;
              }
            }
        REQUIRE(in_n >= 75);  // at least size_min volume
        double contrast = in_sum / double(in_n) - out_sum / double(out_n);
        double expect = kind == "hyper" ? spec.lesion_offset
                        : kind == "hypo" ? -spec.lesion_offset
                                         : 0.0;
        CHECK(std::fabs(contrast - expect) < 0.15);
      }
      ++checked;
    }
  }
  CHECK(checked >= 4);  // the scan found enough lesions to be meaningful
}

TEST_CASE("generated reports decompose back to the gold labels") {
  const auto& lex = fixture_lexicon();
  const auto& spec = fixture_spec();
  bool saw_normal = false, saw_sick = false, saw_negation = false;
  for (long idx = 0; idx < 80; ++idx) {
    SynthCase sc = generate_case(spec, lex, 42, idx);
    REQUIRE(sc.record.gold_labels.size() == std::size_t(lex.num_classes()));
    DecomposedReport rep = decompose_report(sc.record.report(), lex);
    CHECK(rep.labels == sc.record.gold_labels);
    if (sc.record.gold_labels[0] == 1) saw_normal = true;
    if (sc.record.gold_labels[0] == 0) saw_sick = true;
    for (const auto& s : sc.record.impression)
      if (s.rfind("No evidence of", 0) == 0) saw_negation = true;
  }
  CHECK(saw_normal);
  CHECK(saw_sick);
  CHECK(saw_negation);
}

TEST_CASE("disease frequency tracks the configured prevalence") {
  const auto& lex = fixture_lexicon();
  const auto& spec = fixture_spec();
  const int n = 200;
  std::map<std::string, int> count;
  int over_cap = 0;
  for (long idx = 0; idx < n; ++idx) {
    SynthCase sc = generate_case(spec, lex, 42, idx);
    if (int(sc.record.lesion_boxes.size()) > spec.max_diseases) ++over_cap;
    std::set<std::string> seen;
    for (const auto& box : sc.record.lesion_boxes) {
      CHECK(!seen.count(box.disease));  // one box per disease
      seen.insert(box.disease);
      count[box.disease] += 1;
    }
  }
  CHECK(over_cap == 0);
  for (const auto& d : spec.diseases) {
    double freq = double(count[d.name]) / double(n);
    CHECK(std::fabs(freq - d.prevalence) < 0.10);
  }
}

TEST_CASE("corpus generation writes a loadable corpus matching the case stream") {
  const auto& lex = fixture_lexicon();
  const auto& spec = fixture_spec();
  fs::path dir = temp_dir("corpus");
  std::vector<CorpusCase> made = generate_corpus(spec, lex, 42, 6, dir.string());
  REQUIRE(made.size() == 6);
  std::vector<CorpusCase> loaded = load_corpus((dir / "corpus.jsonl").string());
  REQUIRE(loaded.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    SynthCase direct = generate_case(spec, lex, 42, long(i));
    CHECK(loaded[i].id == direct.record.id);
    CHECK(loaded[i].findings == direct.record.findings);
    CHECK(loaded[i].impression == direct.record.impression);
    CHECK(loaded[i].gold_labels == direct.record.gold_labels);
    CHECK(made[i].id == loaded[i].id);
    REQUIRE(loaded[i].volume_paths.size() == lex.modalities.size());
    for (const auto& [mod, path] : loaded[i].volume_paths) {
      Volume on_disk = load_volume(path);
      CHECK(on_disk.dims == spec.dims);
      CHECK(on_disk.voxels == direct.volumes.at(mod).voxels);
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("an empty corpus request still writes the corpus file") {
  const auto& lex = fixture_lexicon();
  const auto& spec = fixture_spec();
  fs::path dir = temp_dir("empty");
  std::vector<CorpusCase> made = generate_corpus(spec, lex, 42, 0, dir.string());
  CHECK(made.empty());
  CHECK(fs::exists(dir / "corpus.jsonl"));
  // loading it back flags the emptiness rather than returning nothing
  CHECK_THROWS_AS(load_corpus((dir / "corpus.jsonl").string()), Error);
  fs::remove_all(dir);
}

TEST_CASE("spec validation rejects impossible geometry") {
  const auto& lex = fixture_lexicon();
  SynthSpec spec = fixture_spec();
  spec.diseases[0].region_hi = {40, 14, 7};  // outside the volume
  CHECK_THROWS_AS(spec.validate(lex), Error);
  spec = fixture_spec();
  spec.diseases[0].size_max = {20, 8, 4};  // larger than the region
  CHECK_THROWS_AS(spec.validate(lex), Error);
  spec = fixture_spec();
  spec.diseases[0].name = "gremlins";  // not a lexicon pathology
  CHECK_THROWS_AS(spec.validate(lex), Error);
  spec = fixture_spec();
  for (auto& [mod, kind] : spec.diseases[0].signature) kind = "none";  // invisible
  CHECK_THROWS_AS(spec.validate(lex), Error);
}
