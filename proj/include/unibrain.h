/* Brain-MRI report decomposition, image-report alignment, and query-based
 * diagnosis: the stable C interface to the shared library.
 *
 * Conventions
 *   - every function returns ub_status; UB_OK is 0
 *   - on failure, ub_last_error() holds a message for the calling thread
 *   - strings returned through char** are heap-allocated; release them with
 *     ub_string_free
 *   - handles are opaque; close them with their matching _close call
 */
#ifndef UNIBRAIN_H
#define UNIBRAIN_H

#include <stdint.h>

#if defined(_WIN32)
#define UB_API __declspec(dllexport)
#else
#define UB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ub_status {
  UB_OK = 0,
  UB_ERR_IO = 1,         /* file missing or unreadable/unwritable */
  UB_ERR_PARSE = 2,      /* malformed JSON/JSONL or binary payload */
  UB_ERR_VALIDATION = 3, /* well-formed input that breaks a contract */
  UB_ERR_SHAPE = 4,      /* tensor/volume dimension mismatch */
  UB_ERR_CONFIG = 5,     /* bad configuration value */
  UB_ERR_CHECKPOINT = 6, /* unreadable or inconsistent checkpoint */
  UB_ERR_RUNTIME = 7     /* anything else */
} ub_status;

/* Library version, e.g. "0.1.0"; storage owned by the library. */
UB_API const char* ub_version(void);

/* Message for this thread's most recent failing call ("" when none);
 * storage owned by the library and reused by the next failure. */
UB_API const char* ub_last_error(void);

/* Releases any char* the library handed out through a char** parameter. */
UB_API void ub_string_free(char* s);

/* ------------------------------------------------------------------ */

typedef struct ub_lexicon ub_lexicon;

/* Loads the entity lexicon (modalities, vocabulary, negation cues,
 * disease classes) from JSON. */
UB_API ub_status ub_lexicon_open(const char* path, ub_lexicon** out);
UB_API void ub_lexicon_close(ub_lexicon* lex);

/* Rule-based decomposition of a report corpus (JSONL) into structured
 * modality-wise knowledge; writes one JSON object per case to out_path. */
UB_API ub_status ub_decompose(const ub_lexicon* lex, const char* corpus_path,
                              const char* out_path);

/* Generates a synthetic multimodal corpus under out_dir (corpus.jsonl plus
 * volumes/).  n_cases <= 0 takes the spec file's "cases" field. */
UB_API ub_status ub_synth(const ub_lexicon* lex, const char* spec_path, uint64_t seed,
                          long n_cases, const char* out_dir);

/* Trains a model.  config_path may be NULL for the built-in defaults;
 * overrides_json (may be NULL) is a JSON object merged over the file.
 * Writes the checkpoint and a per-epoch loss CSV.  resolved_json_out (may be
 * NULL) receives the fully resolved configuration actually used. */
UB_API ub_status ub_train(const ub_lexicon* lex, const char* config_path,
                          const char* overrides_json, const char* corpus_path,
                          const char* queries_path, const char* checkpoint_out,
                          const char* csv_out, char** resolved_json_out);

/* Evaluates a checkpoint over a corpus.  lex may be NULL when every case
 * carries gold labels; otherwise labels are derived from the report text.
 * report_json_out and table_out (either may be NULL) receive the metrics. */
UB_API ub_status ub_eval(const char* checkpoint_path, const char* corpus_path,
                         const ub_lexicon* lex, char** report_json_out, char** table_out);

/* Disease probabilities for one case (a single-case JSON file).
 * queries_path NULL uses the trained query set -- pass a queries JSON to
 * extend or reorder it; query_mode NULL keeps the checkpoint's mode, or
 * "description"/"name" overrides it.  json_out receives
 * {"id", "queries", "probs"}. */
UB_API ub_status ub_infer(const char* checkpoint_path, const char* case_path,
                          const char* queries_path, const char* query_mode, char** json_out);

/* Attention map of one trained disease query over one case, upsampled to the
 * input volume dims and written to heatmap_out.  json_out (may be NULL)
 * receives {"disease", "argmax", "patch_weights", "prob"}. */
UB_API ub_status ub_ground(const char* checkpoint_path, const char* case_path,
                           const char* disease, const char* heatmap_out, char** json_out);

/* Runs the numeric self-audit.  report_out (may be NULL) receives the
 * per-suite text; *ok_out is 1 when every suite passed. */
UB_API ub_status ub_selfcheck(char** report_out, int* ok_out);

#ifdef __cplusplus
}
#endif

#endif /* UNIBRAIN_H */
