#include "unibrain/dataset.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace ub {

namespace {

std::vector<std::string> string_list(const nlohmann::json& j, const char* field,
                                     const std::string& where) {
  std::vector<std::string> out;
  if (!j.contains(field)) return out;
  if (!j[field].is_array())
    fail(ErrCode::parse, where + ": '" + field + "' must be an array of strings");
  for (const auto& s : j[field]) {
    if (!s.is_string()) fail(ErrCode::parse, where + ": '" + field + "' must hold strings");
    out.push_back(s.get<std::string>());
  }
  return out;
}

CorpusCase parse_case(const nlohmann::json& j, const std::filesystem::path& base,
                      const std::string& where) {
  if (!j.is_object()) fail(ErrCode::parse, where + ": expected a JSON object");
  CorpusCase c;
  c.id = j.value("id", "");
  if (c.id.empty()) fail(ErrCode::parse, where + ": case has no id");
  c.findings = string_list(j, "findings", where);
  c.impression = string_list(j, "impression", where);
  if (j.contains("volume_paths")) {
    if (!j["volume_paths"].is_object())
      fail(ErrCode::parse, where + ": 'volume_paths' must be an object");
    for (const auto& [mod, p] : j["volume_paths"].items()) {
      std::filesystem::path vp(p.get<std::string>());
      if (vp.is_relative()) vp = base / vp;
      c.volume_paths[mod] = vp.string();
    }
  }
  if (j.contains("gold_labels")) {
    for (const auto& v : j["gold_labels"]) {
      int lv = v.get<int>();
      if (lv != 0 && lv != 1) fail(ErrCode::parse, where + ": gold labels must be 0/1");
      c.gold_labels.push_back(lv);
    }
  }
  if (j.contains("lesion_boxes")) {
    for (const auto& b : j["lesion_boxes"]) {
      LesionBox box;
      box.disease = b.value("disease", "");
      auto lo = b.value("lo", std::vector<int>{});
      auto hi = b.value("hi", std::vector<int>{});
      if (lo.size() != 3 || hi.size() != 3)
        fail(ErrCode::parse, where + ": lesion box lo/hi must have 3 elements");
      for (int i = 0; i < 3; ++i) {
        box.lo[std::size_t(i)] = lo[std::size_t(i)];
        box.hi[std::size_t(i)] = hi[std::size_t(i)];
      }
      c.lesion_boxes.push_back(std::move(box));
    }
  }
  return c;
}

}  // namespace

std::vector<CorpusCase> load_corpus(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrCode::io, "cannot open corpus '" + path + "'");
  std::filesystem::path base = std::filesystem::path(path).parent_path();

  std::vector<CorpusCase> cases;
  std::string line;
  long line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::string where = path + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrCode::parse, where + ": invalid JSON: " + e.what());
    }
    cases.push_back(parse_case(j, base, where));
  }
  if (cases.empty()) fail(ErrCode::validation, "corpus '" + path + "' holds no cases");
  return cases;
}

CorpusCase load_case_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrCode::io, "cannot open case file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrCode::parse, path + ": invalid JSON: " + std::string(e.what()));
  }
  return parse_case(j, std::filesystem::path(path).parent_path(), path);
}

void save_corpus(const std::string& path, const std::vector<CorpusCase>& cases) {
  std::string tmp = path + ".tmp";
  std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrCode::io, "cannot open '" + tmp + "' for writing");
  for (const auto& c : cases) {
    nlohmann::json j;
    j["id"] = c.id;
    j["findings"] = c.findings;
    j["impression"] = c.impression;
    if (!c.volume_paths.empty()) j["volume_paths"] = c.volume_paths;
    if (!c.gold_labels.empty()) j["gold_labels"] = c.gold_labels;
    if (!c.lesion_boxes.empty()) {
      nlohmann::json boxes = nlohmann::json::array();
      for (const auto& b : c.lesion_boxes)
        boxes.push_back({{"disease", b.disease},
                         {"lo", {b.lo[0], b.lo[1], b.lo[2]}},
                         {"hi", {b.hi[0], b.hi[1], b.hi[2]}}});
      j["lesion_boxes"] = std::move(boxes);
    }
    os << j.dump() << '\n';
  }
  os.close();
  if (!os) fail(ErrCode::io, "failed writing corpus '" + path + "'");
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrCode::io, "cannot move '" + tmp + "' into place: " + ec.message());
}

void write_structured(const std::string& path, const std::vector<CorpusCase>& cases,
                      const std::vector<DecomposedReport>& reports, const Lexicon& lex) {
  if (cases.size() != reports.size())
    fail(ErrCode::validation, "write_structured: case/report count mismatch");
  std::string tmp = path + ".tmp";
  std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrCode::io, "cannot open '" + tmp + "' for writing");
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& rep = reports[i];
    nlohmann::json j;
    j["id"] = cases[i].id;
    nlohmann::json per = nlohmann::json::object();
    for (std::size_t k = 0; k < lex.modalities.size(); ++k) {
      nlohmann::json list = nlohmann::json::array();
      for (const auto& s : rep.per_modality[k]) list.push_back(s.rendered);
      per[lex.modalities[k]] = std::move(list);
    }
    j["per_modality"] = std::move(per);
    nlohmann::json global = nlohmann::json::array();
    for (const auto& s : rep.global) global.push_back(s.rendered);
    j["global"] = std::move(global);
    j["labels"] = rep.labels;
    os << j.dump() << '\n';
  }
  os.close();
  if (!os) fail(ErrCode::io, "failed writing '" + path + "'");
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrCode::io, "cannot move '" + tmp + "' into place: " + ec.message());
}

}  // namespace ub
