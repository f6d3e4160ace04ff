#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "unibrain/dataset.hpp"
#include "unibrain/lexicon.hpp"
#include "unibrain/volume.hpp"

namespace ub {

// One plantable disease: where its box lesion may sit, how large it may be,
// which side/anatomy words describe it, and how it shows up per modality.
struct SynthDisease {
  std::string name;     // canonical pathology from the lexicon
  std::string anatomy;  // canonical anatomy word used in the generated text
  std::string side;     // canonical side word; may be empty
  std::array<int, 3> region_lo{0, 0, 0};  // half-open placement region
  std::array<int, 3> region_hi{0, 0, 0};
  std::array<int, 3> size_min{1, 1, 1};  // inclusive size range per axis
  std::array<int, 3> size_max{1, 1, 1};
  std::map<std::string, std::string> signature;  // modality -> hyper|hypo|none
  double prevalence = 0.3;
};

struct SynthSpec {
  std::array<int, 3> dims{32, 32, 8};
  double noise = 0.1;          // background is noise * N(0,1)
  double lesion_offset = 1.0;  // signed intensity added inside the box
  double negation_rate = 0.05;  // chance of one injected negated mention
  int max_diseases = 2;
  int default_cases = 0;  // the "cases" field: corpus size when none is given
  std::vector<SynthDisease> diseases;

  static SynthSpec from_json(const nlohmann::json& j);
  static SynthSpec load(const std::string& path);
  // region boxes inside dims, sizes fit their regions, names/signature words
  // resolve against the lexicon
  void validate(const Lexicon& lex) const;
};

struct SynthCase {
  CorpusCase record;                      // text, gold labels, lesion boxes
  std::map<std::string, Volume> volumes;  // keyed by modality
};

// Fully determined by (spec, lexicon, seed, index); cases are independent
// streams, so corpus generation can run in any order.
SynthCase generate_case(const SynthSpec& spec, const Lexicon& lex, std::uint64_t seed,
                        long index);

// Writes <out_dir>/corpus.jsonl plus volumes/<id>_<modality>.ubv and returns
// the cases with volume paths resolved to out_dir.  Any failure removes the
// files written so far.
std::vector<CorpusCase> generate_corpus(const SynthSpec& spec, const Lexicon& lex,
                                        std::uint64_t seed, int n, const std::string& out_dir);

}  // namespace ub
