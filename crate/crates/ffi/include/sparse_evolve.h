/* C interface to the sparse-evolve training engine. */

#ifndef SPARSE_EVOLVE_H
#define SPARSE_EVOLVE_H

/* Generated by cbindgen from crates/ffi; edit the Rust source, then regenerate. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code for every fallible entry point.
typedef enum {
  // Success.
  SE_OK = 0,
  // A required pointer argument was null.
  SE_NULL_ARG = 1,
  // A string argument was not valid UTF-8.
  SE_UTF8 = 2,
  // The configuration was rejected (unknown key, bad value, bad JSON).
  SE_CONFIG = 3,
  // Training produced a non-finite value; the run stays usable and
  // reports partial results.
  SE_DIVERGED = 4,
  // Filesystem failure while saving or loading.
  SE_IO = 5,
  // Argument outside the callee's domain (shape, range, contract).
  SE_INVALID = 6,
  // An internal panic was caught at the boundary.
  SE_PANIC = 7,
} SeStatus;

// Opaque handle to one training run.
typedef struct SeRun SeRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static string. Do not free.
const char *se_version(void);

// Message for the most recent failure on this thread. Borrowed; do not
// free. Empty string when no failure has occurred.
const char *se_last_error(void);

// Creates a run from a JSON configuration document. An empty object
// selects the built-in defaults; unknown keys are rejected.
//
// Safety:
// `config_json` must be a valid NUL-terminated string, `out` a valid
// pointer to writable storage.
SeStatus se_run_new(const char *config_json, SeRun **out);

// Reopens a run from a checkpoint file written by `se_run_save`
// (`<dir>/checkpoint.bin`). The run resumes bit-exactly.
//
// Safety:
// `path` must be a valid NUL-terminated string, `out` writable.
SeStatus se_run_open(const char *path, SeRun **out);

// Advances the run by `n` steps. On divergence the run keeps its partial
// results and further stepping is a no-op.
//
// Safety:
// `run` must be a live handle from `se_run_new`/`se_run_open`.
SeStatus se_run_steps(SeRun *run, uint64_t n);

// Runs the remaining planned steps (config `steps` minus steps done).
//
// Safety:
// `run` must be a live handle.
SeStatus se_run_execute(SeRun *run);

// Steps completed so far.
//
// Safety:
// `run` must be a live handle, `out` writable.
SeStatus se_run_steps_done(const SeRun *run, uint64_t *out);

// Whether training hit a non-finite value.
//
// Safety:
// `run` must be a live handle, `out` writable.
SeStatus se_run_diverged(const SeRun *run, bool *out);

// Serializes the run's results (config, metric rows, exploration events,
// FLOPs ratios, mask hashes) as a JSON document. Free with
// `se_string_free`.
//
// Safety:
// `run` must be a live handle, `out` writable.
SeStatus se_run_summary_json(const SeRun *run, char **out);

// Draws `n` generator samples into `out_xy` as interleaved x,y pairs
// (`2*n` doubles). `averaged` selects the weight-averaged generator;
// otherwise the raw current weights are used. Deterministic in `seed`.
//
// Safety:
// `run` must be a live handle; `out_xy` must point to at least `2*n`
// writable doubles.
SeStatus se_run_sample(const SeRun *run, size_t n, uint64_t seed, bool averaged, double *out_xy);

// Writes a complete run directory (config.json, metrics.csv, events.log,
// summary.json, final masks, checkpoint.bin) under `dir`, creating it if
// needed. The checkpoint reopens with `se_run_open`.
//
// Safety:
// `run` must be a live handle, `dir` a valid NUL-terminated string.
SeStatus se_run_save(const SeRun *run, const char *dir);

// Releases a run handle. Null is a no-op.
//
// Safety:
// `run` must be null or a live handle; the handle is dead afterwards.
void se_run_free(SeRun *run);

// Releases a string returned through a `char**` out-param. Null is a
// no-op.
//
// Safety:
// `s` must be null or exactly as returned by this library, freed once.
void se_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPARSE_EVOLVE_H */
