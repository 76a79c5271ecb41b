#ifndef SKILLPLAN_H
#define SKILLPLAN_H

/* C interface of the skillplan library. Every fallible call returns an
 * sp_status; on failure sp_last_error() describes it (per thread). Strings
 * handed out by the library are released with sp_string_free. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SP_API __declspec(dllexport)
#else
#define SP_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sp_status {
  SP_OK = 0,
  SP_ERR_INVALID_ARGUMENT = 1,
  SP_ERR_PARSE = 2,
  SP_ERR_IO = 3,
  SP_ERR_MISSING_CHECKPOINT = 4,
  SP_ERR_UNREACHABLE = 5,
  SP_ERR_OUT_OF_REGION = 6,
  SP_ERR_DIMENSION_MISMATCH = 7,
  SP_ERR_PRECONDITION = 8,
  SP_ERR_INVALID_INITIAL_STATE = 9,
  SP_ERR_DIVERGED = 10,
  SP_ERR_EXECUTION_FAILED = 11,
  SP_ERR_UNKNOWN_SCENARIO = 12,
  SP_ERR_INTERNAL = 13
} sp_status;

typedef struct sp_config sp_config;  /* key = value settings */
typedef struct sp_skills sp_skills;  /* trained policies, discriminators, datasets */
typedef struct sp_plan sp_plan;      /* a planned scenario instance */
typedef struct sp_trace sp_trace;    /* an execution trace */
typedef struct sp_report sp_report;  /* benchmark aggregates */

typedef void (*sp_log_fn)(const char* message, void* user);

SP_API const char* sp_version(void);
SP_API const char* sp_status_name(sp_status status);
SP_API const char* sp_last_error(void);
SP_API void sp_string_free(char* text);

/* Routes library warnings to `fn` (NULL silences them). */
SP_API void sp_set_warning_handler(sp_log_fn fn, void* user);

/* ------------------------------------------------------------------ config */

SP_API sp_status sp_config_new(sp_config** out);
SP_API sp_status sp_config_load(const char* path, sp_config** out);
SP_API sp_status sp_config_parse(const char* text, sp_config** out);
SP_API sp_status sp_config_set(sp_config* config, const char* key, const char* value);
/* Current value (or the default) of `key`. */
SP_API sp_status sp_config_get(const sp_config* config, const char* key, char** value);
SP_API sp_status sp_config_defaults(char** text);
SP_API void sp_config_free(sp_config* config);

/* --------------------------------------------------------------- artifacts */

/* `skill` is "retrieve" or "edgepush". Each call writes its artifact under
 * `dir` and returns a JSON summary. */
SP_API sp_status sp_train_skill(const sp_config* config, const char* dir, const char* skill,
                                sp_log_fn log, void* user, char** summary);
SP_API sp_status sp_generate_data(const sp_config* config, const char* dir, const char* skill,
                                  sp_log_fn log, void* user, char** summary);
SP_API sp_status sp_fit_discriminator(const sp_config* config, const char* dir,
                                      const char* skill, sp_log_fn log, void* user,
                                      char** summary);
SP_API sp_status sp_ensure_artifacts(const sp_config* config, const char* dir, sp_log_fn log,
                                     void* user);

/* Fails with SP_ERR_MISSING_CHECKPOINT naming the absent file. */
SP_API sp_status sp_skills_load(const char* dir, sp_skills** out);
SP_API void sp_skills_free(sp_skills* skills);

/* ---------------------------------------------------------------- planning */

/* `method` is one of hb, sb, srl, ours; `skills` may be NULL for hb and sb.
 * The scenario instance is built from (scenario, seed). A failed search is
 * not an error: query sp_plan_solved. */
SP_API sp_status sp_plan_scenario(const sp_config* config, const sp_skills* skills,
                                  const char* method, const char* scenario, uint64_t seed,
                                  sp_plan** out);
/* Re-attaches a plan file to its scenario instance. */
SP_API sp_status sp_plan_load(const char* jsonl, const char* method, const char* scenario,
                              uint64_t seed, const sp_config* config, sp_plan** out);
SP_API int sp_plan_solved(const sp_plan* plan);
SP_API const char* sp_plan_status(const sp_plan* plan);
SP_API const char* sp_plan_message(const sp_plan* plan);
SP_API size_t sp_plan_length(const sp_plan* plan);
/* "Action arg1 arg2 ..." of step i. */
SP_API sp_status sp_plan_step(const sp_plan* plan, size_t index, char** text);
SP_API sp_status sp_plan_to_jsonl(const sp_plan* plan, char** text);
SP_API sp_status sp_plan_stats(const sp_plan* plan, char** json);
/* Diagnostics are newline-separated (empty when valid). */
SP_API sp_status sp_plan_validate(const sp_plan* plan, int* valid, char** diagnostics);
SP_API void sp_plan_free(sp_plan* plan);

/* --------------------------------------------------------------- execution */

/* Policy steps need `skills`; the world is the plan's scenario instance. */
SP_API sp_status sp_execute(const sp_config* config, const sp_skills* skills,
                            const sp_plan* plan, uint64_t seed, sp_trace** out);
SP_API int sp_trace_success(const sp_trace* trace);
SP_API const char* sp_trace_failure(const sp_trace* trace);
SP_API sp_status sp_trace_to_jsonl(const sp_trace* trace, char** text);
SP_API sp_status sp_trace_from_jsonl(const char* text, sp_trace** out);
/* Final world of the trace as JSON. */
SP_API sp_status sp_trace_final_world(const sp_trace* trace, char** json);
/* Re-applies the recorded actions; `identical` is 1 when the replayed
 * final world equals the recorded one bit for bit. */
SP_API sp_status sp_trace_replay(const sp_trace* trace, int* identical, char** final_world);
SP_API void sp_trace_free(sp_trace* trace);

/* --------------------------------------------------------------- benchmark */

SP_API sp_status sp_bench_run(const sp_config* config, const sp_skills* skills, sp_log_fn log,
                              void* user, sp_report** out);
SP_API sp_status sp_report_csv(const sp_report* report, char** text);
SP_API sp_status sp_report_svg(const sp_report* report, char** text);
SP_API sp_status sp_report_from_csv(const char* text, sp_report** out);
/* `formats` is a comma list of csv and svg. */
SP_API sp_status sp_report_emit(const sp_report* report, const char* dir, const char* formats);
/* Value of one aggregate; NaN when absent or unsolved. */
SP_API sp_status sp_report_value(const sp_report* report, const char* method,
                                 const char* scenario, const char* metric, double* value);
SP_API void sp_report_free(sp_report* report);

#ifdef __cplusplus
}
#endif

#endif
