#ifndef MDCYCLEGAN_H
#define MDCYCLEGAN_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Translation direction.
 */
typedef enum MdcgDirection {
  MDCG_DIRECTION_X_TO_Y = 0,
  MDCG_DIRECTION_Y_TO_X = 1,
} MdcgDirection;

/**
 * Result code of every fallible call.
 */
typedef enum MdcgStatus {
  MDCG_STATUS_OK = 0,
  MDCG_STATUS_NULL_POINTER = 1,
  MDCG_STATUS_INVALID_ARGUMENT = 2,
  MDCG_STATUS_SHAPE = 3,
  MDCG_STATUS_CONFIG = 4,
  MDCG_STATUS_IO = 5,
  MDCG_STATUS_FORMAT = 6,
  MDCG_STATUS_UNSUPPORTED_AUDIO = 7,
  MDCG_STATUS_NON_FINITE = 8,
  MDCG_STATUS_DIVERGED = 9,
  MDCG_STATUS_METRIC_UNDEFINED = 10,
  MDCG_STATUS_PANIC = 11,
} MdcgStatus;

/**
 * A checkpoint loaded for inference.
 */
typedef struct MdcgModel MdcgModel;

/**
 * A magnitude spectrogram.
 */
typedef struct MdcgSpectrogram MdcgSpectrogram;

/**
 * An in-memory training run.
 */
typedef struct MdcgTrainer MdcgTrainer;

/**
 * Scalar entries of one training step's loss report.
 */
typedef struct MdcgLossReport {
  double d_loss_x;
  double d_loss_y;
  double g_adv_xy;
  double g_adv_yx;
  double cycle;
  double identity;
  double total_g;
} MdcgLossReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *mdcg_version(void);

/**
 * Message of the last failing call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *mdcg_last_error_message(void);

/**
 * Writes the band widths of `num_bands` contiguous bands over
 * `total_bins` into `widths` (capacity `capacity`).
 *
 * # Safety
 * `widths` must point to `capacity` writable elements.
 */
enum MdcgStatus mdcg_band_widths(size_t total_bins,
                                 size_t num_bands,
                                 size_t *widths,
                                 size_t capacity);

/**
 * Reads a 16 kHz mono 16-bit WAV and computes its magnitude spectrogram.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum MdcgStatus mdcg_spectrogram_from_wav(const char *path,
                                          double window_s,
                                          double hop_s,
                                          struct MdcgSpectrogram **out);

/**
 * Wraps a caller-owned `frames × bins` magnitude buffer (copied).
 *
 * # Safety
 * `mag` must point to `frames * bins` readable floats and `out` be writable.
 */
enum MdcgStatus mdcg_spectrogram_new(const float *mag,
                                     size_t frames,
                                     size_t bins,
                                     double window_s,
                                     double hop_s,
                                     struct MdcgSpectrogram **out);

/**
 * # Safety
 * `s`, `frames` and `bins` must be valid pointers.
 */
enum MdcgStatus mdcg_spectrogram_dims(const struct MdcgSpectrogram *s,
                                      size_t *frames,
                                      size_t *bins);

/**
 * Copies the magnitudes into `out` (capacity `len` floats).
 *
 * # Safety
 * `out` must point to `len` writable floats.
 */
enum MdcgStatus mdcg_spectrogram_copy(const struct MdcgSpectrogram *s, float *out, size_t len);

/**
 * Griffin-Lim resynthesis written to a WAV file.
 *
 * # Safety
 * `s` must be a live handle and `path` a NUL-terminated string.
 */
enum MdcgStatus mdcg_spectrogram_reconstruct(const struct MdcgSpectrogram *s,
                                             size_t iterations,
                                             uint64_t seed,
                                             const char *path);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards. NULL is
 * ignored.
 */
void mdcg_spectrogram_free(struct MdcgSpectrogram *s);

/**
 * Loads a checkpoint for translation.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum MdcgStatus mdcg_model_load(const char *path, struct MdcgModel **out);

/**
 * Training step the checkpoint was taken at.
 *
 * # Safety
 * `m` must be a live handle and `step` writable.
 */
enum MdcgStatus mdcg_model_step(const struct MdcgModel *m, uint64_t *step);

/**
 * Maps an unnormalized magnitude spectrogram to the other domain. The
 * result is a new handle.
 *
 * # Safety
 * `m` and `s` must be live handles and `out` writable.
 */
enum MdcgStatus mdcg_model_adapt(const struct MdcgModel *m,
                                 enum MdcgDirection direction,
                                 const struct MdcgSpectrogram *s,
                                 struct MdcgSpectrogram **out);

/**
 * # Safety
 * See [`mdcg_spectrogram_free`].
 */
void mdcg_model_free(struct MdcgModel *m);

/**
 * Starts a training run from a JSON config whose `data.manifest` lists
 * the corpus.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string and `out` writable.
 */
enum MdcgStatus mdcg_trainer_new(const char *config_path, struct MdcgTrainer **out);

/**
 * Resumes a run from a checkpoint, reading the corpus named by the config.
 *
 * # Safety
 * Both paths must be NUL-terminated strings and `out` writable.
 */
enum MdcgStatus mdcg_trainer_resume(const char *config_path,
                                    const char *checkpoint_path,
                                    struct MdcgTrainer **out);

/**
 * Runs discriminator pretraining (once) and one training step. `report`
 * may be NULL.
 *
 * # Safety
 * `t` must be a live handle; `report`, if not NULL, writable.
 */
enum MdcgStatus mdcg_trainer_step(struct MdcgTrainer *t, struct MdcgLossReport *report);

/**
 * # Safety
 * `t` must be a live handle and `step` writable.
 */
enum MdcgStatus mdcg_trainer_current_step(const struct MdcgTrainer *t, uint64_t *step);

/**
 * Writes a checkpoint atomically.
 *
 * # Safety
 * `t` must be a live handle and `path` a NUL-terminated string.
 */
enum MdcgStatus mdcg_trainer_save(const struct MdcgTrainer *t, const char *path);

/**
 * # Safety
 * See [`mdcg_spectrogram_free`].
 */
void mdcg_trainer_free(struct MdcgTrainer *t);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MDCYCLEGAN_H */
