#ifndef MBT_H
#define MBT_H

#pragma once

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MbtStatus {
  MBT_STATUS_OK = 0,
  MBT_STATUS_NULL_ARGUMENT = 1,
  MBT_STATUS_INVALID_UTF8 = 2,
  MBT_STATUS_INVALID_VALUE = 3,
  MBT_STATUS_CONFIG = 4,
  MBT_STATUS_PARSE = 5,
  MBT_STATUS_NOT_FOUND = 6,
  MBT_STATUS_NUMERICAL = 7,
  MBT_STATUS_UNDEFINED = 8,
  MBT_STATUS_TRUNCATED_LOG = 9,
  MBT_STATUS_IO = 10,
  MBT_STATUS_PANIC = 11,
} MbtStatus;

/**
 * A completed run.
 */
typedef struct MbtRunLog MbtRunLog;

/**
 * A validated scenario.
 */
typedef struct MbtScenario MbtScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until
 * the next call into this library on the same thread.
 */
const char *mbt_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *mbt_version(void);

/**
 * Release a string returned by this library.
 *
 * # Safety
 * `s` must be null or a string returned through an out-parameter of this
 * library that has not been freed.
 */
void mbt_string_free(char *s);

/**
 * Parse a scenario from JSON text.
 *
 * # Safety
 * `json` must be a valid C string; `out` must be a valid pointer.
 */
enum MbtStatus mbt_scenario_from_json(const char *json, struct MbtScenario **out);

/**
 * Load a scenario file.
 *
 * # Safety
 * `path` must be a valid C string; `out` must be a valid pointer.
 */
enum MbtStatus mbt_scenario_load(const char *path, struct MbtScenario **out);

/**
 * Generate a scenario. `pattern` is catch-up, crossing, reciprocal or
 * mixed.
 *
 * # Safety
 * `pattern` must be a valid C string; `out` must be a valid pointer.
 */
enum MbtStatus mbt_scenario_generate(const char *pattern,
                                     size_t n_aircraft,
                                     double difficulty,
                                     uint64_t seed,
                                     struct MbtScenario **out);

/**
 * Canonical JSON of a scenario.
 *
 * # Safety
 * `scenario` must be a live handle; `out` must be a valid pointer.
 */
enum MbtStatus mbt_scenario_to_json(const struct MbtScenario *scenario, char **out);

/**
 * # Safety
 * `scenario` must be a live handle; `out` must be a valid pointer.
 */
enum MbtStatus mbt_scenario_aircraft_count(const struct MbtScenario *scenario, size_t *out);

/**
 * # Safety
 * `scenario` must be null or a handle from this library, freed once.
 */
void mbt_scenario_free(struct MbtScenario *scenario);

/**
 * Run `scenario` under the named agent (null, hawk or falcon) with default
 * settings.
 *
 * # Safety
 * `scenario` must be a live handle, `agent` a valid C string and `out` a
 * valid pointer.
 */
enum MbtStatus mbt_simulate(const struct MbtScenario *scenario,
                            const char *agent,
                            uint64_t seed,
                            struct MbtRunLog **out);

/**
 * Parse a run log from its line-delimited JSON text.
 *
 * # Safety
 * `jsonl` must be a valid C string; `out` must be a valid pointer.
 */
enum MbtStatus mbt_runlog_from_jsonl(const char *jsonl, struct MbtRunLog **out);

/**
 * # Safety
 * `log` must be a live handle; `out` must be a valid pointer.
 */
enum MbtStatus mbt_runlog_to_jsonl(const struct MbtRunLog *log, char **out);

/**
 * # Safety
 * `log` must be a live handle; `out` must be a valid pointer.
 */
enum MbtStatus mbt_runlog_event_count(const struct MbtRunLog *log, size_t *out);

/**
 * Losses of separation in a run of `scenario`, at the default minima.
 *
 * # Safety
 * `log` and `scenario` must be live handles; `out` must be a valid pointer.
 */
enum MbtStatus mbt_runlog_los_count(const struct MbtRunLog *log,
                                    const struct MbtScenario *scenario,
                                    size_t *out);

/**
 * # Safety
 * `log` must be null or a handle from this library, freed once.
 */
void mbt_runlog_free(struct MbtRunLog *log);

/**
 * Grading form JSON for a run of `scenario` under the default rubric.
 *
 * # Safety
 * `log` and `scenario` must be live handles; `out` must be a valid pointer.
 */
enum MbtStatus mbt_grade_run(const struct MbtRunLog *log,
                             const struct MbtScenario *scenario,
                             char **out);

/**
 * Fidelity summary JSON for one reference simulation: trace CSV text and
 * clearance log JSON text, replayed against `scenario`.
 *
 * # Safety
 * `scenario` must be a live handle, the texts valid C strings and `out` a
 * valid pointer.
 */
enum MbtStatus mbt_fidelity_summary(const struct MbtScenario *scenario,
                                    const char *traces_csv,
                                    const char *clearances_json,
                                    char **out);

/**
 * Inter-rater reliability report JSON for score CSV text. Zero
 * `permutations` skips the permutation test.
 *
 * # Safety
 * `scores_csv` must be a valid C string; `out` must be a valid pointer.
 */
enum MbtStatus mbt_irr_report(const char *scores_csv,
                              size_t permutations,
                              uint64_t seed,
                              char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MBT_H */
