#ifndef EVENTSTREAM_H
#define EVENTSTREAM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result of every fallible call.
typedef enum EsStatus {
  ES_STATUS_OK = 0,
  ES_STATUS_NULL_POINTER = 1,
  ES_STATUS_INVALID_ARGUMENT = 2,
  ES_STATUS_INVALID_UTF8 = 3,
  ES_STATUS_IO = 4,
  ES_STATUS_PARSE = 5,
  ES_STATUS_PROVIDER = 6,
  // A stage ran but reported failure (for example too many quarantined anchors).
  ES_STATUS_FAILED = 7,
  // An unexpected internal error; the handle involved should be discarded.
  ES_STATUS_INTERNAL = 8,
} EsStatus;

// Which agreement score `es_agreement` computes.
typedef enum EsAgreement {
  ES_AGREEMENT_NMI = 0,
  ES_AGREEMENT_AMI = 1,
  ES_AGREEMENT_ARI = 2,
} EsAgreement;

// Pipeline configuration handle.
typedef struct EsConfig EsConfig;

// Weighted undirected graph handle with an optional no-merge constraint.
typedef struct EsGraph EsGraph;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last error on this thread, or null. Valid until the next
// failing call on the same thread.
const char *es_last_error(void);

// Release a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void es_string_free(char *s);

// Default configuration.
struct EsConfig *es_config_new(void);

// Parse a TOML configuration; unknown keys and out-of-range values fail.
//
// # Safety
// `toml` must be a NUL-terminated string; `out` must be writable.
enum EsStatus es_config_from_toml(const char *toml, struct EsConfig **out);

// Resolved configuration as TOML.
//
// # Safety
// `config` must be a live handle; `out` must be writable.
enum EsStatus es_config_to_toml(const struct EsConfig *config, char **out);

// # Safety
// `config` must be null or a handle not yet freed.
void es_config_free(struct EsConfig *config);

// Graph with `nodes` nodes and no edges.
struct EsGraph *es_graph_new(size_t nodes);

// Add `w` to the weight of edge `{u, v}`. Self-loops and non-positive
// weights are rejected.
//
// # Safety
// `graph` must be a live handle.
enum EsStatus es_graph_add_edge(struct EsGraph *graph, size_t u, size_t v, double w);

// Forbid nodes `u` and `v` from sharing a community in `es_graph_minimize`.
//
// # Safety
// `graph` must be a live handle.
enum EsStatus es_graph_forbid(struct EsGraph *graph, size_t u, size_t v);

// Structural entropy of the graph under the partition that gives node `i`
// the community label `assignment[i]`. `len` must equal the node count.
//
// # Safety
// `graph` must be live; `assignment` must hold `len` values; `out` writable.
enum EsStatus es_graph_entropy(const struct EsGraph *graph,
                               const size_t *assignment,
                               size_t len,
                               double *out);

// Greedy minimization under the recorded constraints. Writes one community
// index per node into `assignment` (length `len`, the node count) and the
// number of communities into `communities` when it is non-null.
//
// # Safety
// `graph` must be live; `assignment` must hold `len` writable values.
enum EsStatus es_graph_minimize(const struct EsGraph *graph,
                                size_t *assignment,
                                size_t len,
                                size_t *communities);

// # Safety
// `graph` must be null or a handle not yet freed.
void es_graph_free(struct EsGraph *graph);

// Agreement between two labelings of `len` items.
//
// # Safety
// `pred` and `gold` must each hold `len` values; `out` must be writable.
enum EsStatus es_agreement(enum EsAgreement kind,
                           const int64_t *pred,
                           const int64_t *gold,
                           size_t len,
                           double *out);

// Run sampling and detection over a dataset file, writing artifacts under
// `out_dir/detect`. `provider` is `openai` or `mock-oracle:<seed>[:<noise>]`;
// `config` may be null for defaults. On success the JSON detection summary
// is stored in `summary` when it is non-null.
//
// # Safety
// String arguments must be NUL-terminated; handles must be live.
enum EsStatus es_run_detect(const char *dataset,
                            const char *out_dir,
                            const char *provider,
                            const struct EsConfig *config,
                            char **summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EVENTSTREAM_H */
