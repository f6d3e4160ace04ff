#pragma once

#include <string>
#include <vector>

#include "unibrain/lexicon.hpp"

namespace ub {

// A radiology report as it arrives: id plus findings/impression sentence
// lists.  Elements may still contain multiple sentences; they are split
// before analysis.
struct ReportDocument {
  std::string id;
  std::vector<std::string> findings;
  std::vector<std::string> impression;
};

struct Entity {
  EntityType type = EntityType::anatomy;
  std::string canonical;
  int begin = 0, end = 0;  // character span in the normalized sentence
  bool negated = false;    // pathology mentions preceded by a negation cue
};

enum class SentenceKind { sig, morph, patho };

// One structured knowledge sentence.  Unused slots stay empty; equality is
// over kind + slots, which is also the deduplication key.
struct StructuredSentence {
  SentenceKind kind = SentenceKind::patho;
  std::string morphology, modality, signal, side, anatomy, pathology;
  std::string rendered;

  bool operator==(const StructuredSentence& o) const {
    return kind == o.kind && morphology == o.morphology && modality == o.modality &&
           signal == o.signal && side == o.side && anatomy == o.anatomy &&
           pathology == o.pathology;
  }
};

std::string render_sentence(const StructuredSentence& s);
std::string join_sentences(const std::vector<StructuredSentence>& list);

// splits on . ; ! ? and trims; empty pieces are dropped
std::vector<std::string> split_sentences(const std::string& text);

// Longest-match left-to-right scan over the lowercased, whitespace-collapsed
// sentence.  Matches must sit on word boundaries and never overlap a span an
// earlier (longer) match consumed.  Pathology entities are flagged negated
// when a negation cue occurs before them in the sentence.
std::vector<Entity> extract_entities(const std::string& sentence, const Lexicon& lex);

// Applies the three template rules to one sentence's entities:
//   signal sentences   -> one per mentioned modality (nearest signal), or one
//                         per signal when no modality is named
//   morphology+anatomy -> nearest-pair union (only when no signals present)
//   pathology          -> one per non-negated pathology, nearest location
std::vector<StructuredSentence> structure_sentence(const std::vector<Entity>& entities,
                                                   const Lexicon& lex);

struct DecomposedReport {
  // structured sentences routed per modality (signal sentences go only to
  // their own modality; morphology/pathology go to every list)
  std::vector<std::vector<StructuredSentence>> per_modality;
  std::vector<StructuredSentence> global;
  std::vector<int> labels;  // aligned with lexicon.disease_classes

  std::vector<std::string> modality_keys;  // rendered text per modality ("" when empty)
  std::string global_key;
};

DecomposedReport decompose_report(const ReportDocument& report, const Lexicon& lex);

// Mention / negation extraction quality against gold labels, as percentages.
// The mention task treats gold 1 as positive, the negation task gold 0.
// Classes that are vacuous for a task (no gold or predicted positives) score
// 100; micro aggregates raw counts across classes.
struct LabelingEval {
  struct Task {
    std::vector<double> per_class_f1;
    double micro_f1 = 0.0;
    double macro_f1 = 0.0;
  };
  Task mention, negation;
};

LabelingEval evaluate_labeling(const std::vector<std::vector<int>>& pred,
                               const std::vector<std::vector<int>>& gold);

}  // namespace ub
