// Command-line front end.  Everything goes through the C API in unibrain.h;
// the core library is never linked directly, so this doubles as a live test
// of the stable surface.
#include <unibrain.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

namespace {

const char* status_name(ub_status s) {
  switch (s) {
    case UB_OK: return "ok";
    case UB_ERR_IO: return "io";
    case UB_ERR_PARSE: return "parse";
    case UB_ERR_VALIDATION: return "validation";
    case UB_ERR_SHAPE: return "shape";
    case UB_ERR_CONFIG: return "config";
    case UB_ERR_CHECKPOINT: return "checkpoint";
    case UB_ERR_RUNTIME: return "runtime";
  }
  return "unknown";
}

// single machine-parseable failure line on stderr, non-zero exit
int bail(ub_status s) {
  std::cerr << "error: " << status_name(s) << ": " << ub_last_error() << '\n';
  return 1;
}

struct OwnedString {
  char* p = nullptr;
  ~OwnedString() { ub_string_free(p); }
  std::string str() const { return p ? p : ""; }
};

struct LexiconHandle {
  ub_lexicon* h = nullptr;
  ~LexiconHandle() { ub_lexicon_close(h); }
};

// whole-file write through a temporary so rerunning or crashing never leaves
// a half-written output behind
bool write_file(const std::string& path, const std::string& text) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) return false;
    os << text;
    if (!os) return false;
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  return !ec;
}

const char* opt(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"brain-MRI report decomposition, alignment training, and query-based diagnosis"};
  app.require_subcommand(1);

  std::string lexicon_path, in_path, out_path, spec_path, config_path, corpus_path;
  std::string queries_path, checkpoint_path, csv_path, case_path, disease, heatmap_path;
  std::string query_mode;
  std::uint64_t seed = 42;
  bool no_modality = false, no_global = false, no_cvp = false;

  auto* decompose = app.add_subcommand("decompose", "structure a report corpus");
  decompose->add_option("--lexicon", lexicon_path, "entity lexicon JSON")->required();
  decompose->add_option("--in", in_path, "report corpus JSONL")->required();
  decompose->add_option("--out", out_path, "structured output JSONL")->required();

  auto* synth = app.add_subcommand("synth", "generate a synthetic multimodal corpus");
  synth->add_option("--lexicon", lexicon_path, "entity lexicon JSON")->required();
  synth->add_option("--spec", spec_path, "synthesis spec JSON (its 'cases' field sets the count)")
      ->required();
  synth->add_option("--seed", seed, "generator seed")->capture_default_str();
  synth->add_option("--out", out_path, "output directory")->required();

  auto* train = app.add_subcommand("train", "train a model on a corpus");
  train->add_option("--lexicon", lexicon_path, "entity lexicon JSON")->required();
  train->add_option("--config", config_path, "train config JSON (defaults when omitted)");
  train->add_option("--corpus", corpus_path, "training corpus JSONL")->required();
  train->add_option("--queries", queries_path, "disease query set JSON")->required();
  train->add_option("--checkpoint", checkpoint_path, "checkpoint output path")->required();
  train->add_option("--csv", csv_path, "per-epoch loss CSV output path")->required();
  auto* seed_opt = train->add_option("--seed", seed, "training seed")->capture_default_str();
  auto* mode_opt = train->add_option("--query-mode", query_mode,
                                     "what the query embedding reads: description|name");
  train->add_flag("--no-modality-align", no_modality, "disable the per-modality alignment losses");
  train->add_flag("--no-global-align", no_global, "disable the global alignment loss");
  train->add_flag("--no-cvp", no_cvp, "replace the query decoder with a linear head");

  auto* eval = app.add_subcommand("eval", "score a checkpoint over a corpus");
  eval->add_option("--checkpoint", checkpoint_path, "trained checkpoint")->required();
  eval->add_option("--corpus", corpus_path, "evaluation corpus JSONL")->required();
  eval->add_option("--lexicon", lexicon_path, "lexicon (to derive labels from report text)");
  eval->add_option("--out", out_path, "also write the JSON report here");

  auto* infer = app.add_subcommand("infer", "disease probabilities for one case");
  infer->add_option("--checkpoint", checkpoint_path, "trained checkpoint")->required();
  infer->add_option("--case", case_path, "single-case JSON file")->required();
  infer->add_option("--queries", queries_path, "query set JSON (defaults to the trained set)");
  infer->add_option("--query-mode", query_mode, "override the embedding source: description|name");
  infer->add_option("--out", out_path, "also write the JSON result here");

  auto* ground = app.add_subcommand("ground", "attention heatmap for one disease query");
  ground->add_option("--checkpoint", checkpoint_path, "trained checkpoint")->required();
  ground->add_option("--case", case_path, "single-case JSON file")->required();
  ground->add_option("--disease", disease, "trained query name")->required();
  ground->add_option("--heatmap", heatmap_path, "heatmap volume output path")->required();
  ground->add_option("--out", out_path, "also write the JSON summary here");

  auto* selfcheck = app.add_subcommand("selfcheck", "run the numeric self-audit");

  CLI11_PARSE(app, argc, argv);

  if (decompose->parsed()) {
    LexiconHandle lex;
    ub_status s = ub_lexicon_open(lexicon_path.c_str(), &lex.h);
    if (s != UB_OK) return bail(s);
    s = ub_decompose(lex.h, in_path.c_str(), out_path.c_str());
    if (s != UB_OK) return bail(s);
    std::cout << "structured corpus written to " << out_path << '\n';
    return 0;
  }

  if (synth->parsed()) {
    LexiconHandle lex;
    ub_status s = ub_lexicon_open(lexicon_path.c_str(), &lex.h);
    if (s != UB_OK) return bail(s);
    s = ub_synth(lex.h, spec_path.c_str(), seed, 0, out_path.c_str());
    if (s != UB_OK) return bail(s);
    std::cout << "seed " << seed << "; corpus written to " << out_path << '\n';
    return 0;
  }

  if (train->parsed()) {
    // an explicit --seed wins; otherwise a config file's own seed stands
    nlohmann::json overrides = nlohmann::json::object();
    if (seed_opt->count() || config_path.empty()) overrides["seed"] = seed;
    if (mode_opt->count()) overrides["toggles"]["query_mode"] = query_mode;
    if (no_modality) overrides["toggles"]["modality_align"] = false;
    if (no_global) overrides["toggles"]["global_align"] = false;
    if (no_cvp) overrides["toggles"]["cvp"] = false;

    LexiconHandle lex;
    ub_status s = ub_lexicon_open(lexicon_path.c_str(), &lex.h);
    if (s != UB_OK) return bail(s);
    OwnedString resolved;
    s = ub_train(lex.h, opt(config_path), overrides.dump().c_str(), corpus_path.c_str(),
                 queries_path.c_str(), checkpoint_path.c_str(), csv_path.c_str(), &resolved.p);
    if (s != UB_OK) return bail(s);
    std::cout << "resolved config:\n" << resolved.str() << '\n'
              << "checkpoint written to " << checkpoint_path << '\n';
    return 0;
  }

  if (eval->parsed()) {
    LexiconHandle lex;
    if (!lexicon_path.empty()) {
      ub_status s = ub_lexicon_open(lexicon_path.c_str(), &lex.h);
      if (s != UB_OK) return bail(s);
    }
    OwnedString json, table;
    ub_status s = ub_eval(checkpoint_path.c_str(), corpus_path.c_str(), lex.h, &json.p, &table.p);
    if (s != UB_OK) return bail(s);
    std::cout << table.str();
    if (!out_path.empty() && !write_file(out_path, json.str() + "\n")) {
      std::cerr << "error: io: cannot write '" << out_path << "'\n";
      return 1;
    }
    return 0;
  }

  if (infer->parsed()) {
    OwnedString json;
    ub_status s = ub_infer(checkpoint_path.c_str(), case_path.c_str(), opt(queries_path),
                           opt(query_mode), &json.p);
    if (s != UB_OK) return bail(s);
    std::cout << json.str() << '\n';
    if (!out_path.empty() && !write_file(out_path, json.str() + "\n")) {
      std::cerr << "error: io: cannot write '" << out_path << "'\n";
      return 1;
    }
    return 0;
  }

  if (ground->parsed()) {
    OwnedString json;
    ub_status s = ub_ground(checkpoint_path.c_str(), case_path.c_str(), disease.c_str(),
                            heatmap_path.c_str(), &json.p);
    if (s != UB_OK) return bail(s);
    std::cout << json.str() << '\n';
    if (!out_path.empty() && !write_file(out_path, json.str() + "\n")) {
      std::cerr << "error: io: cannot write '" << out_path << "'\n";
      return 1;
    }
    return 0;
  }

  if (selfcheck->parsed()) {
    OwnedString report;
    int ok = 0;
    ub_status s = ub_selfcheck(&report.p, &ok);
    if (s != UB_OK) return bail(s);
    std::cout << report.str();
    return ok ? 0 : 1;
  }

  return 0;
}
