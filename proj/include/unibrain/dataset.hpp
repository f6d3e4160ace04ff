#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "unibrain/ard.hpp"

namespace ub {

// Axis-aligned voxel box, half-open: lo inclusive, hi exclusive.
struct LesionBox {
  std::string disease;
  std::array<int, 3> lo{0, 0, 0};
  std::array<int, 3> hi{0, 0, 0};

  bool contains(int x, int y, int z) const {
    return x >= lo[0] && x < hi[0] && y >= lo[1] && y < hi[1] && z >= lo[2] && z < hi[2];
  }
};

struct CorpusCase {
  std::string id;
  std::vector<std::string> findings;
  std::vector<std::string> impression;
  // modality -> volume file, resolved against the corpus file's directory
  std::map<std::string, std::string> volume_paths;
  std::vector<int> gold_labels;        // empty when the corpus carries none
  std::vector<LesionBox> lesion_boxes;  // synthetic corpora record these

  ReportDocument report() const { return ReportDocument{id, findings, impression}; }
};

// JSONL, one case per line.
std::vector<CorpusCase> load_corpus(const std::string& path);
void save_corpus(const std::string& path, const std::vector<CorpusCase>& cases);

// A single case stored as one JSON object (same schema as a corpus line);
// relative volume paths resolve against the file's directory.
CorpusCase load_case_file(const std::string& path);

// Structured decomposition output, JSONL aligned with the input corpus:
// {"id", "per_modality": {modality: [sentences]}, "global": [...], "labels": [...]}
void write_structured(const std::string& path, const std::vector<CorpusCase>& cases,
                      const std::vector<DecomposedReport>& reports, const Lexicon& lex);

}  // namespace ub
