#include "unibrain/lexicon.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace ub {

EntityType entity_type_from(const std::string& s) {
  if (s == "anatomy") return EntityType::anatomy;
  if (s == "side") return EntityType::side;
  if (s == "modality") return EntityType::modality;
  if (s == "signal") return EntityType::signal;
  if (s == "morphology") return EntityType::morphology;
  if (s == "pathology") return EntityType::pathology;
  fail(ErrCode::validation, "unknown entity type '" + s + "'");
}

const char* entity_type_name(EntityType t) {
  switch (t) {
    case EntityType::anatomy: return "anatomy";
    case EntityType::side: return "side";
    case EntityType::modality: return "modality";
    case EntityType::signal: return "signal";
    case EntityType::morphology: return "morphology";
    case EntityType::pathology: return "pathology";
  }
  return "?";
}

int Lexicon::modality_index(const std::string& canonical) const {
  for (std::size_t i = 0; i < modalities.size(); ++i)
    if (modalities[i] == canonical) return int(i);
  return -1;
}

int Lexicon::class_index(const std::string& canonical) const {
  for (std::size_t i = 0; i < disease_classes.size(); ++i)
    if (disease_classes[i] == canonical) return int(i);
  return -1;
}

Lexicon Lexicon::from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrCode::parse, "lexicon: expected a JSON object");
  Lexicon lex;
  for (const auto& e : j.value("entities", nlohmann::json::array())) {
    LexEntry le;
    le.surface = normalize_ws(to_lower(e.value("surface", "")));
    le.canonical = e.value("canonical", "");
    le.type = entity_type_from(e.value("type", ""));
    lex.entries.push_back(std::move(le));
  }
  for (const auto& c : j.value("negation_cues", nlohmann::json::array()))
    lex.negation_cues.push_back(normalize_ws(to_lower(c.get<std::string>())));
  for (const auto& c : j.value("disease_classes", nlohmann::json::array()))
    lex.disease_classes.push_back(c.get<std::string>());
  if (j.contains("disease_descriptions"))
    for (const auto& [k, v] : j["disease_descriptions"].items())
      lex.disease_descriptions[k] = v.get<std::string>();

  // longest-first ordering drives longest-match scanning; ties keep file order
  std::stable_sort(lex.entries.begin(), lex.entries.end(),
                   [](const LexEntry& a, const LexEntry& b) {
                     return a.surface.size() > b.surface.size();
                   });
  std::stable_sort(lex.negation_cues.begin(), lex.negation_cues.end(),
                   [](const std::string& a, const std::string& b) {
                     return a.size() > b.size();
                   });
  // modality order follows first appearance in the file, not surface length
  for (const auto& e : j.value("entities", nlohmann::json::array())) {
    if (e.value("type", "") != "modality") continue;
    std::string canon = e.value("canonical", "");
    if (std::find(lex.modalities.begin(), lex.modalities.end(), canon) == lex.modalities.end())
      lex.modalities.push_back(canon);
  }
  lex.validate();
  return lex;
}

Lexicon Lexicon::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrCode::io, "cannot open lexicon '" + path + "'");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrCode::parse, "lexicon '" + path + "' is not valid JSON: " + e.what());
  }
  return from_json(j);
}

nlohmann::json Lexicon::to_json() const {
  nlohmann::json j;
  j["entities"] = nlohmann::json::array();
  for (const auto& e : entries)
    j["entities"].push_back({{"surface", e.surface},
                             {"canonical", e.canonical},
                             {"type", entity_type_name(e.type)}});
  j["negation_cues"] = negation_cues;
  j["disease_classes"] = disease_classes;
  j["disease_descriptions"] = disease_descriptions;
  return j;
}

void Lexicon::validate() const {
  if (entries.empty()) fail(ErrCode::validation, "lexicon has no entities");
  for (const auto& e : entries) {
    if (e.surface.empty()) fail(ErrCode::validation, "lexicon entity with empty surface");
    if (e.canonical.empty())
      fail(ErrCode::validation, "lexicon entity '" + e.surface + "' has no canonical form");
  }
  if (modalities.empty()) fail(ErrCode::validation, "lexicon defines no modalities");
  if (disease_classes.empty()) fail(ErrCode::validation, "lexicon defines no disease classes");
  std::set<std::string> seen;
  for (const auto& c : disease_classes) {
    if (!seen.insert(c).second)
      fail(ErrCode::validation, "duplicate disease class '" + c + "'");
    if (!disease_descriptions.count(c))
      fail(ErrCode::validation, "disease class '" + c + "' has no description");
  }
  for (const auto& cue : negation_cues)
    if (cue.empty()) fail(ErrCode::validation, "empty negation cue");
}

}  // namespace ub
