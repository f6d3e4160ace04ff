#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "unibrain/common.hpp"

namespace ub {

enum class EntityType { anatomy, side, modality, signal, morphology, pathology };

EntityType entity_type_from(const std::string& s);
const char* entity_type_name(EntityType t);

struct LexEntry {
  std::string surface;    // match text, lowercase, whitespace-collapsed
  std::string canonical;  // display/grouping form, case preserved
  EntityType type;
};

// Clinical vocabulary driving report decomposition: entity surfaces, negation
// cues, the fixed disease-class list (label order), and one description
// sentence per disease used for query embeddings.
struct Lexicon {
  std::vector<LexEntry> entries;  // sorted longest surface first
  std::vector<std::string> negation_cues;
  std::vector<std::string> disease_classes;
  std::map<std::string, std::string> disease_descriptions;

  // canonical modality names in first-appearance order; defines K and the
  // modality axis everywhere downstream
  std::vector<std::string> modalities;

  int num_classes() const { return int(disease_classes.size()); }
  int modality_index(const std::string& canonical) const;  // -1 if unknown
  int class_index(const std::string& canonical) const;     // -1 if unknown

  static Lexicon from_json(const nlohmann::json& j);
  static Lexicon load(const std::string& path);
  nlohmann::json to_json() const;
  void validate() const;
};

}  // namespace ub
