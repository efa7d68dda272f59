#ifndef ICTDST_H
#define ICTDST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call.
 */
typedef enum IctdstStatus {
  ICTDST_STATUS_OK = 0,
  /*
   A required pointer argument was null.
   */
  ICTDST_STATUS_NULL_ARGUMENT = 1,
  /*
   A string argument was not valid UTF-8.
   */
  ICTDST_STATUS_INVALID_UTF8 = 2,
  /*
   Bad argument or configuration.
   */
  ICTDST_STATUS_CONFIG = 3,
  /*
   Malformed or inconsistent data.
   */
  ICTDST_STATUS_DATA = 4,
  /*
   A model server call failed.
   */
  ICTDST_STATUS_REMOTE = 5,
  /*
   The library panicked. This is a bug.
   */
  ICTDST_STATUS_INTERNAL = 6,
} IctdstStatus;

/*
 A loaded corpus with its ontology.
 */
typedef struct IctdstDataset IctdstDataset;

/*
 A retriever over the example bank of a dataset. Owns its bank.
 */
typedef struct IctdstRetriever IctdstRetriever;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL. The pointer is
 owned by the library and stays valid until the next failure on the same
 thread.
 */
const char *ictdst_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *ictdst_version(void);

/*
 Release a string returned by this library. NULL is ignored.

 # Safety
 `s` must come from this library and not have been freed already.
 */
void ictdst_string_free(char *s);

/*
 Canonical form of a slot value. `*out` is set to NULL when the value means
 "not mentioned".

 # Safety
 `raw` must be a NUL-terminated string and `out` a valid pointer.
 */
enum IctdstStatus ictdst_normalize_value(const char *raw, char **out);

/*
 Write the `dim`-dimensional lexical embedding of `text` into `out`.

 # Safety
 `out` must point to `dim` writable doubles.
 */
enum IctdstStatus ictdst_lexical_embed(const char *text, uintptr_t dim, double *out);

/*
 Cosine similarity of two `len`-dimensional vectors.

 # Safety
 `a` and `b` must each point to `len` readable doubles.
 */
enum IctdstStatus ictdst_cosine(const double *a, const double *b, uintptr_t len, double *out);

/*
 Load and validate a corpus against an ontology.

 # Safety
 Paths must be NUL-terminated strings; `out` a valid pointer.
 */
enum IctdstStatus ictdst_dataset_load(const char *corpus_path,
                                      const char *ontology_path,
                                      struct IctdstDataset **out);

/*
 Number of dialogues, or 0 for NULL.

 # Safety
 `dataset` must be NULL or a live handle.
 */
uintptr_t ictdst_dataset_len(const struct IctdstDataset *dataset);

/*
 Number of slots in the dataset's ontology, or 0 for NULL.

 # Safety
 `dataset` must be NULL or a live handle.
 */
uintptr_t ictdst_dataset_slot_count(const struct IctdstDataset *dataset);

/*
 # Safety
 `dataset` must be NULL or a handle not yet freed. Retrievers built from it
 stay valid.
 */
void ictdst_dataset_free(struct IctdstDataset *dataset);

/*
 Build a retriever over every dialogue of `dataset`. `strategy` is "dense",
 "bm25" or "random"; `embed_dim` is used by dense retrieval and `seed` by
 random retrieval.

 # Safety
 `dataset` must be a live handle, `strategy` a NUL-terminated string and
 `out` a valid pointer.
 */
enum IctdstStatus ictdst_retriever_new(const struct IctdstDataset *dataset,
                                       const char *strategy,
                                       uintptr_t embed_dim,
                                       uint64_t seed,
                                       struct IctdstRetriever **out);

/*
 Number of examples in the retriever's bank, or 0 for NULL.

 # Safety
 `retriever` must be NULL or a live handle.
 */
uintptr_t ictdst_retriever_bank_len(const struct IctdstRetriever *retriever);

/*
 # Safety
 `retriever` must be NULL or a handle not yet freed.
 */
void ictdst_retriever_free(struct IctdstRetriever *retriever);

/*
 Retrieve `k` examples for slot `slot` at turn `turn` of dialogue
 `dialogue_id` in `dataset`. `query_mode` is "whole" or "single";
 `exclude_domain` may be NULL. Examples from the queried turn itself are
 never returned. `*out_json` receives `{"items":[{"id":..,"score":..}],"k":..}`.

 # Safety
 Handles must be live, strings NUL-terminated (or NULL where allowed) and
 `out_json` a valid pointer.
 */
enum IctdstStatus ictdst_retrieve(const struct IctdstRetriever *retriever,
                                  const struct IctdstDataset *dataset,
                                  const char *dialogue_id,
                                  uintptr_t turn,
                                  const char *slot,
                                  const char *query_mode,
                                  uintptr_t k,
                                  const char *exclude_domain,
                                  char **out_json);

/*
 Joint goal accuracy of `predictions_json` (a JSON array of
 `{"dialogue_id","turn","state"}`) against the gold states of `dataset`.
 `slot_scope` restricts scoring to one domain and may be NULL. `*out_json`
 receives the evaluation report.

 # Safety
 `dataset` must be live, strings NUL-terminated (or NULL where allowed) and
 `out_json` a valid pointer.
 */
enum IctdstStatus ictdst_jga(const struct IctdstDataset *dataset,
                             const char *predictions_json,
                             const char *slot_scope,
                             char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ICTDST_H */
