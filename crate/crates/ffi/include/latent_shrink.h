/* Generated by cbindgen from crates/ffi. Do not edit. */

#ifndef LATENT_SHRINK_H
#define LATENT_SHRINK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LsStatus {
  LS_STATUS_OK = 0,
  LS_STATUS_NULL_POINTER = 1,
  LS_STATUS_INVALID_ARGUMENT = 2,
  LS_STATUS_SHAPE = 3,
  LS_STATUS_LATENT_FLOOR = 4,
  LS_STATUS_NUMERIC = 5,
  LS_STATUS_IO = 6,
  LS_STATUS_FORMAT = 7,
  LS_STATUS_CONFIG = 8,
  LS_STATUS_PANIC = 9,
} LsStatus;

typedef enum LsActionKind {
  LS_ACTION_KIND_CONTINUE = 0,
  LS_ACTION_KIND_PRUNE = 1,
  LS_ACTION_KIND_FREEZE = 2,
} LsActionKind;

/**
 * Opaque compression controller.
 */
typedef struct LsController LsController;

/**
 * Opaque VAE parameter set.
 */
typedef struct LsModel LsModel;

/**
 * One epoch of validation metrics.
 */
typedef struct LsMetrics {
  size_t epoch;
  size_t latent_dim;
  double silhouette;
  double fid_recon;
  double fid_gen;
  double recon_loss;
  double kl;
  double elbo;
} LsMetrics;

/**
 * A controller decision; `count` is the number of latent neurons to remove
 * when `kind` is prune, 0 otherwise.
 */
typedef struct LsAction {
  enum LsActionKind kind;
  size_t count;
} LsAction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *ls_last_error_message(void);

/**
 * Creates a freshly initialized model.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum LsStatus ls_model_new(size_t d,
                           size_t hidden,
                           size_t latent_dim,
                           uint64_t seed,
                           struct LsModel **out);

/**
 * # Safety
 * `model` must be NULL or a handle from this library not yet freed.
 */
void ls_model_free(struct LsModel *model);

/**
 * Latent size of `model`, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t ls_model_latent_dim(const struct LsModel *model);

/**
 * Input width of `model`, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t ls_model_data_dim(const struct LsModel *model);

/**
 * Posterior means and log-variances of `rows` inputs of width
 * `ls_model_data_dim`. Each output holds `rows × ls_model_latent_dim`
 * values.
 *
 * # Safety
 * Buffers must hold the stated number of doubles.
 */
enum LsStatus ls_model_encode(const struct LsModel *model,
                              const double *x,
                              size_t rows,
                              double *mu_out,
                              double *logvar_out);

/**
 * Pixel probabilities for `rows` latent vectors; `out` holds
 * `rows × ls_model_data_dim` values.
 *
 * # Safety
 * Buffers must hold the stated number of doubles.
 */
enum LsStatus ls_model_decode(const struct LsModel *model,
                              const double *z,
                              size_t rows,
                              double *out);

/**
 * Removes the latent coordinates listed in `indices` in place.
 *
 * # Safety
 * `indices` must hold `count` values.
 */
enum LsStatus ls_model_prune(struct LsModel *model, const size_t *indices, size_t count);

/**
 * # Safety
 * `file` must be a NUL-terminated UTF-8 path.
 */
enum LsStatus ls_model_save(const struct LsModel *model, const char *file);

/**
 * # Safety
 * `file` must be a NUL-terminated UTF-8 path and `out` writable.
 */
enum LsStatus ls_model_load(const char *file, struct LsModel **out);

/**
 * # Safety
 * `out` must be writable.
 */
enum LsStatus ls_controller_new(size_t patience,
                                size_t decrease,
                                size_t window,
                                size_t slowdown_window,
                                size_t init_latent_dim,
                                struct LsController **out);

/**
 * # Safety
 * `controller` must be NULL or a live handle.
 */
void ls_controller_free(struct LsController *controller);

/**
 * Current latent size tracked by the controller, or 0 for NULL.
 *
 * # Safety
 * `controller` must be NULL or a live handle.
 */
size_t ls_controller_latent_dim(const struct LsController *controller);

/**
 * # Safety
 * Pointers must be valid.
 */
enum LsStatus ls_controller_record(struct LsController *controller,
                                   const struct LsMetrics *metrics);

/**
 * Decision for the most recently recorded epoch. After a prune decision
 * the caller removes `count` coordinates from its model and reports them
 * with [`ls_controller_record_prune`].
 *
 * # Safety
 * Pointers must be valid.
 */
enum LsStatus ls_controller_decide(struct LsController *controller,
                                   size_t epoch,
                                   struct LsAction *out);

/**
 * # Safety
 * `indices` must hold `count` values.
 */
enum LsStatus ls_controller_record_prune(struct LsController *controller,
                                         size_t epoch,
                                         const size_t *indices,
                                         size_t count);

/**
 * Mean silhouette of `rows × cols` points under integer labels.
 *
 * # Safety
 * Buffers must hold the stated number of values.
 */
enum LsStatus ls_silhouette_score(const double *points,
                                  size_t rows,
                                  size_t cols,
                                  const size_t *labels,
                                  double *out);

/**
 * Fréchet distance between Gaussians fitted to two feature sets of equal
 * width `cols`.
 *
 * # Safety
 * Buffers must hold the stated number of values.
 */
enum LsStatus ls_frechet_distance(const double *a,
                                  size_t rows_a,
                                  const double *b,
                                  size_t rows_b,
                                  size_t cols,
                                  double *out);

/**
 * Runs the experiment described by a TOML config file, writing its outputs
 * to the configured directory.
 *
 * # Safety
 * `config_file` must be a NUL-terminated UTF-8 path.
 */
enum LsStatus ls_run_config_file(const char *config_file);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LATENT_SHRINK_H */
