#ifndef MVINPAINTER_MVI_H
#define MVINPAINTER_MVI_H

/* C interface to the multi-view inpainter. Every entry point returns an
 * mvi_status; on failure mvi_last_error() describes what went wrong (the
 * message is thread-local and overwritten by the next failing call).
 * Handles are opaque and must be released with their matching _free. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MVI_API __declspec(dllexport)
#else
#define MVI_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mvi_status {
  MVI_OK = 0,
  MVI_ERR_INVALID_ARGUMENT = 1,
  MVI_ERR_CONFIG = 2,
  MVI_ERR_IO = 3,
  MVI_ERR_NUMERIC = 4,
  MVI_ERR_UNSUPPORTED = 5,
  MVI_ERR_INTERNAL = 6
} mvi_status;

/* Stable name for a status code ("ok", "invalid_argument", ...). */
MVI_API const char* mvi_status_name(mvi_status s);

/* Message of the most recent failure on this thread; empty string if none. */
MVI_API const char* mvi_last_error(void);

/* Applies runtime policy: when the environment variable MVI_DETERMINISTIC
 * is set to 1, numeric backends are forced single-threaded. Safe to call
 * more than once; every other entry point calls it implicitly. */
MVI_API void mvi_runtime_init(void);

/* ---- scenes ------------------------------------------------------------ */

typedef struct mvi_scene mvi_scene;

/* spec_json: {"num_frames", "resolution", "trajectory", "magnitude",
 * "plane_texture_seed", "rng_seed", "object": {...}|null}; absent keys take
 * defaults. */
MVI_API mvi_status mvi_scene_generate(const char* spec_json, mvi_scene** out);
MVI_API mvi_status mvi_scene_load(const char* dir, mvi_scene** out);
MVI_API mvi_status mvi_scene_save(const mvi_scene* s, const char* dir);
MVI_API mvi_status mvi_scene_num_frames(const mvi_scene* s, int* out);
MVI_API mvi_status mvi_scene_resolution(const mvi_scene* s, int* out);
MVI_API void mvi_scene_free(mvi_scene* s);

/* Writes a batch of scene bundles under out_dir. config_json is
 * {"scenes": [<spec>, ...]}; each entry may carry a "name" (default
 * scene_%03d). Entries without an explicit rng_seed derive one from `seed`
 * and their index. */
MVI_API mvi_status mvi_gen_data(const char* config_json, const char* out_dir, uint64_t seed);

/* ---- models ------------------------------------------------------------ */

typedef struct mvi_model mvi_model;

MVI_API mvi_status mvi_model_load(const char* checkpoint_dir, mvi_model** out);
/* Mask regime the checkpoint was trained for: "object_centric" or
 * "forward_facing". */
MVI_API mvi_status mvi_model_mode(const mvi_model* m, char* buf, size_t cap);
MVI_API void mvi_model_free(mvi_model* m);

/* Trains a fresh model over every bundle under data_root and writes the
 * checkpoint plus loss_log.csv into out_dir. config_json holds the pipeline
 * configuration; when has_seed is nonzero `seed` overrides the configured
 * training seed. tail_loss (nullable) receives the mean loss of the last
 * logged steps. */
MVI_API mvi_status mvi_train(const char* config_json, const char* data_root,
                             const char* out_dir, int has_seed, uint64_t seed,
                             double* tail_loss);

/* ---- inference --------------------------------------------------------- */

/* Draws a training-style mask set for the scene and inpaints it; writes
 * frames/%03d.png and masks/%03d.png under out_dir. */
MVI_API mvi_status mvi_sample(const mvi_scene* s, const mvi_model* m, uint64_t seed,
                              const char* out_dir);

/* Object removal over the whole scene; writes frames/%03d.png and
 * masks/%03d.png under out_dir. self_reference != 0 cleans the reference
 * view by self-inpainting instead of using the bundle's background render. */
MVI_API mvi_status mvi_remove(const mvi_scene* s, const mvi_model* m, int dilate_radius,
                              int self_reference, uint64_t seed, const char* out_dir);

/* Object insertion. landmarks_json: {"bottom": [[x,y],[x,y],[x,y],[x,y]],
 * "height_px": h} in reference-view pixels. ref_edit_png (nullable) is the
 * edited reference frame; by default the bundle's clean background render is
 * used. remover (nullable) runs the removal stage first; pass NULL to skip
 * it. Writes frames/%03d.png and masks/%03d.png under out_dir. */
MVI_API mvi_status mvi_insert(const mvi_scene* s, const char* ref_edit_png,
                              const char* landmarks_json, const mvi_model* remover,
                              const mvi_model* inserter, uint64_t seed, const char* out_dir);

/* Transfers the landmark box into views [view_begin, view_end] (inclusive)
 * and writes the masks as PNGs under out_dir. No model involved. */
MVI_API mvi_status mvi_adapt_mask(const mvi_scene* s, const char* landmarks_json,
                                  int view_begin, int view_end, const char* out_dir);

/* Removal on every keyframe_stride-th frame, then window-wise interpolation
 * of the remaining frames; writes frames/%03d.png under out_dir.
 * keyframe_stride <= 0 selects the default of 4. */
MVI_API mvi_status mvi_interp(const mvi_scene* s, const mvi_model* m, int keyframe_stride,
                              int dilate_radius, uint64_t seed, const char* out_dir);

/* Scores generated frames (gen_dir/%03d.png, one per view) against the
 * scene. masks_dir (nullable) holds per-view PNG masks; by default the
 * scene's object masks are used. use_background_gt > 0 scores against the
 * clean background render, 0 against the scene frames, and < 0 skips
 * ground truth and emits a partial report. Writes report.json and
 * panels/%03d.png under out_dir. */
MVI_API mvi_status mvi_eval(const mvi_scene* s, const char* gen_dir, const char* masks_dir,
                            int use_background_gt, const char* out_dir);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* MVINPAINTER_MVI_H */
