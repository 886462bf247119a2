/*
 * Copyright 2026 The decaf authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License"). You may not use this file except in compliance
 * with the License. A copy of the License is located at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * or in the "license" file accompanying this file. This file is distributed on an "AS IS" BASIS, WITHOUT WARRANTIES
 * OR CONDITIONS OF ANY KIND, either express or implied. See the License for the specific language governing permissions
 * and limitations under the License.
 */

/*
 * C interface to the decaf extreme multi-label classifier. All functions
 * return DECAF_OK (0) on success or a negative status code; the thread-local
 * message from decaf_last_error() describes the most recent failure. Handles
 * are opaque and must be released with the matching _free function. Strings
 * returned through char** out-parameters are heap-allocated and released with
 * decaf_string_free().
 */

#ifndef DECAF_C_H
#define DECAF_C_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef struct decaf_dataset_t decaf_dataset_t;
typedef struct decaf_model_t decaf_model_t; /* one or more ensemble instances */

enum {
    DECAF_OK = 0,
    DECAF_ERR_INVALID_ARG = -1, /* null handle, bad flag value */
    DECAF_ERR_IO = -2,          /* missing file, short read/write */
    DECAF_ERR_PARSE = -3,       /* malformed input or model file */
    DECAF_ERR_DOMAIN = -4,      /* violated precondition, numeric failure */
    DECAF_ERR_INTERNAL = -5
};

const char* decaf_version(void);
const char* decaf_last_error(void);
void decaf_string_free(char* s);

/* ---- datasets ---------------------------------------------------------- */

/*
 * Loads a sparse-format dataset. label_text_path may be NULL (prediction
 * inputs need no label text); titles_path may be NULL. one_based_tokens
 * remaps token ids from one-based files.
 */
int decaf_dataset_load(const char* xc_path, const char* label_text_path, const char* titles_path,
                       int one_based_tokens, decaf_dataset_t** out);
void decaf_dataset_free(decaf_dataset_t* d);
int decaf_dataset_dims(const decaf_dataset_t* d, uint64_t* num_points, uint64_t* num_tokens, uint64_t* num_labels);
/* "key=value" lines: averages and per-label frequency summary. */
int decaf_dataset_stats(const decaf_dataset_t* d, char** out_report);

/* ---- training ---------------------------------------------------------- */

/* Structural validation of a config (unknown keys, bad values, non-power-of-
 * two cluster counts). Dataset-dependent checks still happen at train time. */
int decaf_config_validate(const char* config_kv);

/*
 * config_kv: newline-separated "key=value" pairs (same keys as the config
 * file). workdir may be NULL; when set, per-module checkpoints
 * (module1.ckpt, module2.ckpt, module4.ckpt) and the effective config are
 * written there. resume names a checkpoint stage to continue from ("module1"
 * or "module2") or is NULL for a full run. out_log, when non-NULL, receives
 * per-module wall-clock timings as "key=value" lines.
 */
int decaf_train(const decaf_dataset_t* train_data, const char* config_kv, const char* workdir, const char* resume,
                decaf_model_t** out, char** out_log);

/*
 * Raw-text on-ramp: whitespace-tokenizes one title per line (documents, and
 * optionally label titles sharing the same vocabulary), applies TF-IDF, and
 * writes sparse files <out_prefix>.docs.txt / <out_prefix>.labels.txt plus
 * the vocabulary as <out_prefix>.vocab.txt.
 */
int decaf_vectorize_titles(const char* doc_titles_path, const char* label_titles_path, const char* out_prefix);

int decaf_model_load(const char* path, decaf_model_t** out);
int decaf_model_save(const decaf_model_t* m, const char* path);
void decaf_model_free(decaf_model_t* m);
int decaf_model_info(const decaf_model_t* m, char** out_report);

/* ---- prediction -------------------------------------------------------- */

/*
 * Writes one line per input document: "label:score ..." sorted by score.
 * beam = 0 uses the beam stored in the model. with_counters appends exact
 * per-document operation counts. combine: 0 = mean, 1 = rank-sum.
 */
int decaf_predict_file(const decaf_model_t* m, const decaf_dataset_t* input, int top_k, uint32_t beam,
                       int with_counters, int combine, int threads, const char* out_path);

/* ---- evaluation -------------------------------------------------------- */

/*
 * options_kv keys (newline-separated "key=value", all optional):
 *   propensity_a, propensity_b  - propensity model parameters
 *   literal_dcg=1               - audit-mode DCG normalization
 *   filter_reciprocal=1         - apply trivial/reciprocal filtering
 *   label_titles, test_titles, train_titles - title files for identity match
 *   test_map, train_map         - "doc label" identity map files
 * train_xc_path may be NULL (then propensity-scored metrics use unit
 * propensities and no quantile table is produced).
 */
int decaf_evaluate(const char* pred_path, const char* truth_xc_path, const char* train_xc_path,
                   const char* options_kv, char** out_report);

/* ---- analysis tools ----------------------------------------------------- */

/* One line per cluster of comma-separated label ids. model_path may be NULL
 * for sparse-centroid clustering; otherwise dense centroids under that
 * model's token embeddings are used. */
int decaf_cluster(const decaf_dataset_t* d, uint32_t levels, uint64_t seed, const char* model_path,
                  const char* out_path);

/* Table of "beam recall mean_shortlist_len" lines over the given beams
 * (comma-separated; empty = a doubling sweep). */
int decaf_shortlist_eval(const decaf_model_t* m, const decaf_dataset_t* d, const char* beams_csv, int threads,
                         char** out_table);

/* Approximate-likelihood diagnostics as "key=value" lines. */
int decaf_diagnose(const decaf_model_t* m, const decaf_dataset_t* d, uint32_t beam, int threads,
                   char** out_report);

/* Convex rescoring of an existing prediction file against label text. */
int decaf_rescore_bow(const char* pred_path, const decaf_dataset_t* docs, double alpha, const char* out_path);

#ifdef __cplusplus
}
#endif

#endif /* DECAF_C_H */
