/* SPDX-License-Identifier: Apache-2.0 */
/*
 * C interface to the math-word-problem distillation pipeline: corpus
 * generation and ingestion, teacher/student training, evaluation, beam
 * dumps, and inspection. All state lives behind opaque handles; every
 * function returns a status code and leaves a thread-local diagnostic
 * retrievable with divkd_last_error(). Strings returned through char**
 * out-parameters are heap-allocated and must be released with
 * divkd_string_destroy().
 */
#ifndef DIVKD_H
#define DIVKD_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum divkd_status {
  DIVKD_OK = 0,
  DIVKD_ERR_INVALID_ARGUMENT = 1, /* null handle or out-of-domain value */
  DIVKD_ERR_PARSE = 2,            /* expression text unparseable */
  DIVKD_ERR_FORMAT = 3,           /* malformed file or record */
  DIVKD_ERR_FILE = 4,             /* file unreadable or unwritable */
  DIVKD_ERR_VOCAB = 5,            /* token outside a vocabulary */
  DIVKD_ERR_CHECKPOINT = 6,       /* incompatible or corrupt checkpoint */
  DIVKD_ERR_DIVERGENCE = 7,       /* training loss went non-finite */
  DIVKD_ERR_EMPTY = 8,            /* empty beam or empty corpus */
  DIVKD_ERR_CONFIG = 9,           /* invalid configuration */
  DIVKD_ERR_INTERNAL = 10
} divkd_status;

typedef struct divkd_config divkd_config;
typedef struct divkd_corpus divkd_corpus;
typedef struct divkd_model divkd_model;

/* Latent-decoding modes for evaluation-time beam search. */
#define DIVKD_MODE_NONE 0
#define DIVKD_MODE_PRIOR_MEAN 1
#define DIVKD_MODE_PRIOR_SAMPLE 2

/* Library version, static storage. */
const char* divkd_version(void);

/* Message describing the current thread's most recent failure ("" if none).
 * Valid until the next failing call on the same thread. */
const char* divkd_last_error(void);

void divkd_string_destroy(char* s);

/* ----- configuration ----------------------------------------------------- */

/* Fresh configuration with library defaults. */
divkd_status divkd_config_create(divkd_config** out);
void divkd_config_destroy(divkd_config* cfg);
/* Applies a flat key=value file (# comments allowed). */
divkd_status divkd_config_load_file(divkd_config* cfg, const char* path);
/* Sets one field by key, e.g. "epochs", "lr", "beam_k", "lambda". */
divkd_status divkd_config_set(divkd_config* cfg, const char* key,
                              const char* value);
/* Canonical key=value rendering (one field per line, sorted). */
divkd_status divkd_config_to_string(const divkd_config* cfg, char** out);

/* ----- corpus ------------------------------------------------------------ */

/* Deterministic synthetic corpus of n problems. */
divkd_status divkd_corpus_generate(int n, uint64_t seed, divkd_corpus** out);
/* Ingests line-delimited source records (id, segmented_text, equation, ans);
 * unusable records are dropped and tallied in *report when non-null. */
divkd_status divkd_corpus_ingest(const char* path, divkd_corpus** out,
                                 char** report);
divkd_status divkd_corpus_load(const char* path, divkd_corpus** out);
divkd_status divkd_corpus_save(const divkd_corpus* corpus, const char* path);
/* Shuffle-and-partition; the three ratios must sum to 1. */
divkd_status divkd_corpus_split(const divkd_corpus* corpus, double train_ratio,
                                double dev_ratio, double test_ratio,
                                uint64_t seed, divkd_corpus** train,
                                divkd_corpus** dev, divkd_corpus** test);
divkd_status divkd_corpus_size(const divkd_corpus* corpus, size_t* out);
void divkd_corpus_destroy(divkd_corpus* corpus);

/* ----- training ---------------------------------------------------------- */

/* Called after each epoch with the run-log record as a JSON line. */
typedef void (*divkd_epoch_callback)(const char* json_record, void* user);

/* Pre-trains the base teacher; out_dir receives checkpoints (best/last),
 * runlog.jsonl and a config echo, and a compatible interrupted run found
 * there is resumed. threads <= 0 selects the hardware concurrency. */
divkd_status divkd_train_teacher(const divkd_corpus* train,
                                 const divkd_corpus* dev,
                                 const divkd_config* cfg, const char* out_dir,
                                 int threads, divkd_epoch_callback on_epoch,
                                 void* user);
/* Trains the latent-augmented student against the frozen teacher loaded
 * from teacher_basename (.ckpt/.json pair). */
divkd_status divkd_train_student(const divkd_corpus* train,
                                 const divkd_corpus* dev,
                                 const char* teacher_basename,
                                 const divkd_config* cfg, const char* out_dir,
                                 int threads, divkd_epoch_callback on_epoch,
                                 void* user);

/* ----- models and evaluation --------------------------------------------- */

/* Loads a model from a checkpoint basename (.ckpt/.json pair). */
divkd_status divkd_model_load(const char* basename, divkd_model** out);
void divkd_model_destroy(divkd_model* model);
/* *out = 1 if the model carries a latent pathway, else 0. */
divkd_status divkd_model_has_latent(const divkd_model* model, int* out);

/* Answer/expression accuracy and beam-diversity report over a corpus.
 * samples > 1 (sampled mode only) pools that many sampled beams per problem
 * before ranking. Either output may be NULL when not wanted. */
divkd_status divkd_evaluate(divkd_model* model, const divkd_corpus* corpus,
                            int beam_k, int mode, uint64_t seed, int max_len,
                            int threads, int samples, char** jsonl_out,
                            char** table_out);

/* Line-delimited beam dump (id, rank, prefix, log_score, value, correct);
 * correct_only keeps only answer-verified entries. */
divkd_status divkd_dump_beams(divkd_model* model, const divkd_corpus* corpus,
                              int beam_k, int mode, uint64_t seed, int max_len,
                              int threads, int correct_only, char** jsonl_out);

/* Human-readable view of one problem (by id) and its verified beam. */
divkd_status divkd_inspect(divkd_model* model, const divkd_corpus* corpus,
                           const char* problem_id, int beam_k, int mode,
                           uint64_t seed, int max_len, char** text_out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* DIVKD_H */
