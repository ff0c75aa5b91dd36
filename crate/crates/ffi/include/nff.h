#ifndef NFF_H
#define NFF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NffStatus {
  NFF_STATUS_OK = 0,
  NFF_STATUS_NULL_POINTER = 1,
  NFF_STATUS_INVALID_ARGUMENT = 2,
  NFF_STATUS_IO = 3,
  NFF_STATUS_FORMAT = 4,
  NFF_STATUS_NUMERIC = 5,
  NFF_STATUS_PANIC = 6,
} NffStatus;

typedef struct NffGenerator NffGenerator;

typedef struct NffRender NffRender;

typedef struct NffScene NffScene;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *nff_version(void);

/*
 Message of the last failure on this thread, or null. Valid until the next
 failing call on the same thread.
 */
const char *nff_last_error(void);

/*
 Builds a procedural scene from a named preset.
 */
enum NffStatus nff_scene_make(const char *preset, uint64_t seed, struct NffScene **out);

/*
 Loads a scene JSON file and the grid it references.
 */
enum NffStatus nff_scene_load(const char *json_path, struct NffScene **out);

enum NffStatus nff_scene_save(const struct NffScene *scene,
                              const char *json_path,
                              const char *grid_path);

/*
 Changes the output resolution; both sizes must be even.
 */
enum NffStatus nff_scene_set_resolution(struct NffScene *scene, size_t width, size_t height);

enum NffStatus nff_scene_resolution(const struct NffScene *scene, size_t *width, size_t *height);

enum NffStatus nff_scene_object_count(const struct NffScene *scene, size_t *count);

/*
 Applies an edit script to a copy of `scene`. The input is left unchanged.
 */
enum NffStatus nff_scene_edit(const struct NffScene *scene,
                              const char *script,
                              uint64_t seed,
                              struct NffScene **out);

void nff_scene_free(struct NffScene *scene);

/*
 Freshly initialized generator parameters sized for `scene`'s labels.
 */
enum NffStatus nff_generator_init(const struct NffScene *scene,
                                  uint64_t seed,
                                  struct NffGenerator **out);

/*
 Loads a parameter checkpoint written by `fit` or [`nff_generator_save`].
 */
enum NffStatus nff_generator_load(const struct NffScene *scene,
                                  const char *path,
                                  struct NffGenerator **out);

enum NffStatus nff_generator_save(const struct NffGenerator *generator, const char *path);

void nff_generator_free(struct NffGenerator *generator);

/*
 Renders `scene` from its own camera. With `jitter` false, samples sit at
 stratum starts and `seed` is ignored.
 */
enum NffStatus nff_render(const struct NffGenerator *generator,
                          const struct NffScene *scene,
                          uint64_t seed,
                          bool jitter,
                          struct NffRender **out);

/*
 Borrowed pointer to the `[3, height, width]` RGB image in `[0, 1]`,
 valid until the render is freed.
 */
enum NffStatus nff_render_rgb(const struct NffRender *render,
                              const double **data,
                              size_t *height,
                              size_t *width);

/*
 Borrowed pointer to the `[channels, height, width]` feature image.
 */
enum NffStatus nff_render_features(const struct NffRender *render,
                                   const double **data,
                                   size_t *channels,
                                   size_t *height,
                                   size_t *width);

enum NffStatus nff_render_write_ppm(const struct NffRender *render, const char *path);

void nff_render_free(struct NffRender *render);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NFF_H */
