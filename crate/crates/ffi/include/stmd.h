#ifndef STMD_H
#define STMD_H

#include <stddef.h>
#include <stdint.h>

typedef enum StmdStatus {
  STMD_STATUS_OK = 0,
  STMD_STATUS_NULL_POINTER = 1,
  STMD_STATUS_INVALID_ARGUMENT = 2,
  STMD_STATUS_IO = 3,
  STMD_STATUS_FORMAT = 4,
  STMD_STATUS_RUNTIME = 5,
  STMD_STATUS_PANIC = 6,
} StmdStatus;

// One motion clip in the hml-lite-v1 layout.
typedef struct StmdMotion StmdMotion;

// A trained model ready to sample.
typedef struct StmdSampler StmdSampler;

// A static scene point cloud.
typedef struct StmdScene StmdScene;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty if none. Valid
// until the next failing call on the same thread.
const char *stmd_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *stmd_version(void);

// Opens a checkpoint. `config_path` may be null for the default
// configuration; otherwise it must match the one used for training.
//
// # Safety
// String arguments must be NUL-terminated; `out` must be writable.
enum StmdStatus stmd_sampler_open(const char *config_path,
                                  const char *checkpoint_path,
                                  struct StmdSampler **out);

// Draws sample `index` for a scene and caption. The same
// `(seed, index)` gives the same motion as `stmd sample`.
//
// # Safety
// Handles must come from this library; `caption` must be NUL-terminated.
enum StmdStatus stmd_sampler_sample(const struct StmdSampler *sampler,
                                    const struct StmdScene *scene,
                                    const char *caption,
                                    uint64_t seed,
                                    uint64_t index,
                                    struct StmdMotion **out);

// Frames produced by every sample of this model.
//
// # Safety
// `sampler` must come from [`stmd_sampler_open`].
size_t stmd_sampler_num_frames(const struct StmdSampler *sampler);

// # Safety
// `sampler` must come from [`stmd_sampler_open`] or be null.
void stmd_sampler_free(struct StmdSampler *sampler);

// Reads an ASCII PLY scene.
//
// # Safety
// `path` must be NUL-terminated; `out` must be writable.
enum StmdStatus stmd_scene_read_ply(const char *path, struct StmdScene **out);

// Builds a scene from `n` xyz triples; colors are grey and normals are
// estimated from the points.
//
// # Safety
// `xyz` must point to `3 * n` doubles.
enum StmdStatus stmd_scene_from_points(const double *xyz, size_t n, struct StmdScene **out);

// # Safety
// `scene` must come from this library.
enum StmdStatus stmd_scene_write_ply(const struct StmdScene *scene, const char *path);

// # Safety
// `scene` must come from this library or be null.
size_t stmd_scene_num_points(const struct StmdScene *scene);

// # Safety
// `scene` must come from this library or be null.
void stmd_scene_free(struct StmdScene *scene);

// Reads a motion-json-v1 file.
//
// # Safety
// `path` must be NUL-terminated; `out` must be writable.
enum StmdStatus stmd_motion_read(const char *path, struct StmdMotion **out);

// # Safety
// `motion` must come from this library; `path` must be NUL-terminated.
enum StmdStatus stmd_motion_write(const struct StmdMotion *motion, const char *path);

// # Safety
// `motion` must come from this library or be null.
size_t stmd_motion_num_frames(const struct StmdMotion *motion);

// # Safety
// `motion` must come from this library or be null.
size_t stmd_motion_num_joints(const struct StmdMotion *motion);

// Writes world joint positions, frame-major then joint then xyz, into
// `buf`, which must hold `frames * joints * 3` doubles (`len` of them).
//
// # Safety
// `buf` must point to `len` writable doubles.
enum StmdStatus stmd_motion_joint_positions(const struct StmdMotion *motion,
                                            double *buf,
                                            size_t len);

// # Safety
// `motion` must come from this library or be null.
void stmd_motion_free(struct StmdMotion *motion);

// Fraction of joint-frame queries whose signed distance to the scene is at
// least `-tau`.
//
// # Safety
// Handles must come from this library; `out` must be writable.
enum StmdStatus stmd_non_collision(const struct StmdMotion *motion,
                                   const struct StmdScene *scene,
                                   double tau,
                                   double *out);

// Fréchet distance between Gaussian fits of two row-major sample sets of
// width `dim`: `a` has `na` rows, `b` has `nb`.
//
// # Safety
// `a` and `b` must point to `na * dim` and `nb * dim` doubles.
enum StmdStatus stmd_frechet_distance(const double *a,
                                      size_t na,
                                      const double *b,
                                      size_t nb,
                                      size_t dim,
                                      double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STMD_H */
