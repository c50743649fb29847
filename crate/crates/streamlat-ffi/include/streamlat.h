#ifndef STREAMLAT_H
#define STREAMLAT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum SlatStatus {
  /**
   * Success.
   */
  SlatStatus_Ok = 0,
  /**
   * A pointer argument was NULL or otherwise invalid.
   */
  SlatStatus_NullArgument = 1,
  /**
   * A string argument was not valid UTF-8 or failed to parse.
   */
  SlatStatus_InvalidArgument = 2,
  /**
   * Scene generation or evaluation failed; see `slat_last_error`.
   */
  SlatStatus_RuntimeError = 3,
  /**
   * A panic was caught at the boundary; see `slat_last_error`.
   */
  SlatStatus_Panic = 4,
} SlatStatus;

/**
 * Opaque scene handle.
 */
typedef struct SlatScene SlatScene;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message for this thread, or NULL when no error is recorded.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *slat_last_error(void);

/**
 * Library version as a static NUL-terminated string; do not free.
 */
const char *slat_version(void);

/**
 * Release a string returned by this library. NULL is a no-op.
 *
 * # Safety
 * `s` must be a pointer previously returned by a slat_* call that documents
 * `slat_string_free` as its deallocator, and must not be used afterwards.
 */
void slat_string_free(char *s);

/**
 * Generate a scene from a JSON `SceneConfig` document and return an opaque
 * handle through `out`. Release with `slat_scene_free`.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SlatStatus slat_scene_generate(const char *config_json, struct SlatScene **out);

/**
 * Parse a scene previously serialized as JSON (e.g. by the CLI `gen`
 * command) into an opaque handle. Release with `slat_scene_free`.
 *
 * # Safety
 * `scene_json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SlatStatus slat_scene_from_json(const char *scene_json, struct SlatScene **out);

/**
 * Serialize a scene handle back to JSON. Release the string with
 * `slat_string_free`.
 *
 * # Safety
 * `scene` must come from `slat_scene_generate`/`slat_scene_from_json` and
 * `out` must be a valid pointer.
 */
enum SlatStatus slat_scene_to_json(const struct SlatScene *scene, char **out);

/**
 * Release a scene handle. NULL is a no-op.
 *
 * # Safety
 * `scene` must come from this library and must not be used afterwards.
 */
void slat_scene_free(struct SlatScene *scene);

/**
 * Run the streaming benchmark on one scene. `run_config_json` is a JSON
 * document: `{"latency": {...}, "strategy": {...}, "noise": null,
 * "frame_rate": 12.0, "eval_rate": 12.0, "seed": 0}`. The full metrics
 * report is returned as a JSON string through `out`; release it with
 * `slat_string_free`.
 *
 * # Safety
 * `scene` must come from this library, `run_config_json` must be a
 * NUL-terminated string, and `out` must be a valid pointer.
 */
enum SlatStatus slat_run(const struct SlatScene *scene, const char *run_config_json, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STREAMLAT_H */
