#include "unibrain.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "unibrain/ard.hpp"
#include "unibrain/dataset.hpp"
#include "unibrain/lexicon.hpp"
#include "unibrain/selfcheck.hpp"
#include "unibrain/synthdata.hpp"
#include "unibrain/trainer.hpp"

// the opaque handle from the public header
struct ub_lexicon {
  ub::Lexicon lex;
};

namespace {

thread_local std::string t_last_error;

char* dup_string(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (p) std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

template <typename F>
ub_status guard(F&& body) {
  try {
    body();
    t_last_error.clear();
    return UB_OK;
  } catch (const ub::Error& e) {
    t_last_error = e.what();
    return static_cast<ub_status>(static_cast<int>(e.code()));
  } catch (const std::exception& e) {
    t_last_error = e.what();
    return UB_ERR_RUNTIME;
  }
}

void require(bool cond, const char* what) {
  if (!cond) ub::fail(ub::ErrCode::validation, std::string("missing argument: ") + what);
}

}  // namespace

extern "C" {

const char* ub_version(void) { return "0.1.0"; }

const char* ub_last_error(void) { return t_last_error.c_str(); }

void ub_string_free(char* s) { std::free(s); }

ub_status ub_lexicon_open(const char* path, ub_lexicon** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    auto handle = std::make_unique<ub_lexicon>();
    handle->lex = ub::Lexicon::load(path);
    *out = handle.release();
  });
}

void ub_lexicon_close(ub_lexicon* lex) { delete lex; }

ub_status ub_decompose(const ub_lexicon* lex, const char* corpus_path, const char* out_path) {
  return guard([&] {
    require(lex, "lexicon");
    require(corpus_path, "corpus_path");
    require(out_path, "out_path");
    std::vector<ub::CorpusCase> cases = ub::load_corpus(corpus_path);
    std::vector<ub::DecomposedReport> reports;
    for (const auto& c : cases) reports.push_back(ub::decompose_report(c.report(), lex->lex));
    ub::write_structured(out_path, cases, reports, lex->lex);
  });
}

ub_status ub_synth(const ub_lexicon* lex, const char* spec_path, uint64_t seed, long n_cases,
                   const char* out_dir) {
  return guard([&] {
    require(lex, "lexicon");
    require(spec_path, "spec_path");
    require(out_dir, "out_dir");
    ub::SynthSpec spec = ub::SynthSpec::load(spec_path);
    spec.validate(lex->lex);
    long n = n_cases > 0 ? n_cases : spec.default_cases;
    if (n <= 0)
      ub::fail(ub::ErrCode::config,
               "case count not given and the spec file carries no positive 'cases'");
    ub::generate_corpus(spec, lex->lex, seed, int(n), out_dir);
  });
}

ub_status ub_train(const ub_lexicon* lex, const char* config_path, const char* overrides_json,
                   const char* corpus_path, const char* queries_path, const char* checkpoint_out,
                   const char* csv_out, char** resolved_json_out) {
  return guard([&] {
    require(lex, "lexicon");
    require(corpus_path, "corpus_path");
    require(queries_path, "queries_path");
    require(checkpoint_out, "checkpoint_out");
    require(csv_out, "csv_out");

    nlohmann::json j = nlohmann::json::object();
    if (config_path) {
      std::ifstream is(config_path);
      if (!is) ub::fail(ub::ErrCode::io, std::string("cannot open train config '") + config_path + "'");
      try {
        j = nlohmann::json::parse(is);
      } catch (const nlohmann::json::exception& e) {
        ub::fail(ub::ErrCode::parse, std::string(config_path) + ": invalid JSON: " + e.what());
      }
    }
    if (overrides_json && *overrides_json) {
      nlohmann::json patch;
      try {
        patch = nlohmann::json::parse(overrides_json);
      } catch (const nlohmann::json::exception& e) {
        ub::fail(ub::ErrCode::parse, std::string("config overrides: invalid JSON: ") + e.what());
      }
      if (!patch.is_object()) ub::fail(ub::ErrCode::config, "config overrides must be a JSON object");
      j.merge_patch(patch);
    }
    ub::TrainConfig cfg = ub::TrainConfig::from_json(j);
    cfg.validate();

    std::vector<ub::CorpusCase> cases = ub::load_corpus(corpus_path);
    std::vector<ub::DiseaseQuery> queries = ub::load_queries(queries_path);
    ub::train_model(cfg, lex->lex, cases, queries, checkpoint_out, csv_out);
    if (resolved_json_out) *resolved_json_out = dup_string(cfg.to_json().dump(2));
  });
}

ub_status ub_eval(const char* checkpoint_path, const char* corpus_path, const ub_lexicon* lex,
                  char** report_json_out, char** table_out) {
  return guard([&] {
    require(checkpoint_path, "checkpoint_path");
    require(corpus_path, "corpus_path");
    ub::Model m = ub::load_model(checkpoint_path);
    std::vector<ub::CorpusCase> cases = ub::load_corpus(corpus_path);
    ub::EvalReport rep = ub::eval_corpus(m, cases, lex ? &lex->lex : nullptr);
    std::vector<std::string> names;
    for (const auto& q : m.queries) names.push_back(q.name);
    if (report_json_out) *report_json_out = dup_string(ub::eval_report_json(rep, names).dump(2));
    if (table_out) *table_out = dup_string(ub::eval_report_table(rep, names));
  });
}

ub_status ub_infer(const char* checkpoint_path, const char* case_path, const char* queries_path,
                   const char* query_mode, char** json_out) {
  return guard([&] {
    require(checkpoint_path, "checkpoint_path");
    require(case_path, "case_path");
    require(json_out, "json_out");
    ub::Model m = ub::load_model(checkpoint_path);
    if (query_mode) {
      std::string mode = query_mode;
      if (mode != "description" && mode != "name")
        ub::fail(ub::ErrCode::config, "query_mode must be 'description' or 'name'");
      m.toggles.query_mode = mode;
    }
    std::vector<ub::DiseaseQuery> queries =
        queries_path ? ub::load_queries(queries_path) : m.queries;
    ub::CorpusCase c = ub::load_case_file(case_path);
    std::vector<double> probs = ub::infer_case(m, c, queries);
    nlohmann::json names = nlohmann::json::array();
    for (const auto& q : queries) names.push_back(q.name);
    nlohmann::json out{{"id", c.id}, {"queries", names}, {"probs", probs}};
    *json_out = dup_string(out.dump(2));
  });
}

ub_status ub_ground(const char* checkpoint_path, const char* case_path, const char* disease,
                    const char* heatmap_out, char** json_out) {
  return guard([&] {
    require(checkpoint_path, "checkpoint_path");
    require(case_path, "case_path");
    require(disease, "disease");
    require(heatmap_out, "heatmap_out");
    ub::Model m = ub::load_model(checkpoint_path);
    ub::CorpusCase c = ub::load_case_file(case_path);
    ub::GroundResult g = ub::ground_case(m, c, disease);
    ub::save_volume(heatmap_out, g.heatmap);
    if (json_out) {
      std::vector<double> probs = ub::infer_case(m, c, m.queries);
      double prob = 0.0;
      for (std::size_t i = 0; i < m.queries.size(); ++i)
        if (m.queries[i].name == disease) prob = probs[i];
      nlohmann::json out{{"disease", disease},
                         {"argmax", {g.argmax[0], g.argmax[1], g.argmax[2]}},
                         {"patch_weights", g.patch_weights},
                         {"prob", prob}};
      *json_out = dup_string(out.dump(2));
    }
  });
}

ub_status ub_selfcheck(char** report_out, int* ok_out) {
  return guard([&] {
    require(ok_out, "ok_out");
    std::ostringstream os;
    bool ok = ub::run_selfcheck(os);
    *ok_out = ok ? 1 : 0;
    if (report_out) *report_out = dup_string(os.str());
  });
}

}  // extern "C"
