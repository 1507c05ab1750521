#ifndef GRADLAB_H
#define GRADLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum gl_status {
  GL_STATUS_OK = 0,
  GL_STATUS_NULL_POINTER = 1,
  GL_STATUS_INVALID_ARGUMENT = 2,
  GL_STATUS_SHAPE = 3,
  GL_STATUS_NON_FINITE = 4,
  GL_STATUS_IO = 5,
  GL_STATUS_FORMAT = 6,
  GL_STATUS_PANIC = 7,
} gl_status;

/*
 Per-example gradients of one minibatch.
 */
typedef struct gl_gradients gl_gradients;

/*
 Network parameters.
 */
typedef struct gl_params gl_params;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null after a
 successful call. Valid until the next call on the same thread.
 */
const char *gl_last_error_message(void);

/*
 Best achievable accuracy on labels where a fraction `noise` was
 replaced by uniform draws over `num_classes` classes.

 # Safety
 `out_accuracy` must be valid for writes.
 */
enum gl_status gl_proper_accuracy(double noise, size_t num_classes, double *out_accuracy);

/*
 Sum of `values` after clipping to the c-th and (100-c)-th order
 statistics.

 # Safety
 `values` must point to `len` readable doubles; `out_sum` must be valid
 for writes.
 */
enum gl_status gl_winsorize(const double *values, size_t len, double c, double *out_sum);

/*
 Xavier-initialised network with layer widths `widths[0..num_widths]`,
 input first.

 # Safety
 `widths` must point to `num_widths` readable values; `out_params` must be
 valid for writes.
 */
enum gl_status gl_params_xavier(const size_t *widths,
                                size_t num_widths,
                                uint64_t seed,
                                struct gl_params **out_params);

/*
 # Safety
 `params` must be null or a handle from this library not yet freed.
 */
void gl_params_free(struct gl_params *params);

/*
 # Safety
 `params` must be a live handle.
 */
size_t gl_params_num_layers(const struct gl_params *params);

/*
 # Safety
 `params` must be a live handle; the out pointers must be valid for writes.
 */
enum gl_status gl_params_layer_shape(const struct gl_params *params,
                                     size_t layer,
                                     size_t *out_fan_in,
                                     size_t *out_fan_out);

/*
 Copies layer `layer` into caller buffers: `fan_out * fan_in` row-major
 weights and `fan_out` biases.

 # Safety
 `params` must be a live handle; `weights` and `bias` must have room for
 the stated lengths.
 */
enum gl_status gl_params_copy_layer(const struct gl_params *params,
                                    size_t layer,
                                    double *weights,
                                    size_t weights_len,
                                    double *bias,
                                    size_t bias_len);

/*
 # Safety
 `params` must be a live handle; `path` a NUL-terminated string.
 */
enum gl_status gl_checkpoint_save(const struct gl_params *params, const char *path_c);

/*
 # Safety
 `path` must be a NUL-terminated string; `out_params` valid for writes.
 */
enum gl_status gl_checkpoint_load(const char *path_c, struct gl_params **out_params);

/*
 Per-example losses of `num_examples` row-major feature vectors.

 # Safety
 `features` must hold `num_examples * input width` doubles, `labels` and
 `out_losses` `num_examples` values each.
 */
enum gl_status gl_forward_losses(const struct gl_params *params,
                                 const double *features,
                                 const uint32_t *labels,
                                 size_t num_examples,
                                 double *out_losses);

/*
 Per-example gradients of a minibatch.

 # Safety
 As for [`gl_forward_losses`]; `out_grads` must be valid for writes.
 */
enum gl_status gl_gradients_compute(const struct gl_params *params,
                                    const double *features,
                                    const uint32_t *labels,
                                    size_t num_examples,
                                    struct gl_gradients **out_grads);

/*
 # Safety
 `grads` must be null or a handle from this library not yet freed.
 */
void gl_gradients_free(struct gl_gradients *grads);

/*
 Number of trainable coordinates, which is the length of every flattened
 gradient (layer by layer, weights then bias).

 # Safety
 `grads` must be a live handle.
 */
size_t gl_gradients_num_coordinates(const struct gl_gradients *grads);

/*
 Flattened sum of the per-example gradients.

 # Safety
 `grads` must be a live handle; `out_values` must hold `len` doubles.
 */
enum gl_status gl_gradients_batch_sum(const struct gl_gradients *grads,
                                      double *out_values,
                                      size_t len);

/*
 Flattened gradient of example `example`.

 # Safety
 `grads` must be a live handle; `out_values` must hold `len` doubles.
 */
enum gl_status gl_gradients_per_example(const struct gl_gradients *grads,
                                        size_t example,
                                        double *out_values,
                                        size_t len);

/*
 `w <- w - (learning_rate / m) * sum of gradients`.

 # Safety
 `params` and `grads` must be live handles.
 */
enum gl_status gl_sgd_step(struct gl_params *params,
                           const struct gl_gradients *grads,
                           double learning_rate);

/*
 Update with each coordinate's minibatch sum replaced by its winsorized
 sum at level `c`.

 # Safety
 `params` and `grads` must be live handles.
 */
enum gl_status gl_winsorized_sgd_step(struct gl_params *params,
                                      const struct gl_gradients *grads,
                                      double c,
                                      double learning_rate);

/*
 Shares `<g,g_p>/<g,g>` and `<g,g_c>/<g,g>` of a gradient split into two
 parts. `*out_defined` is 0 when `<g,g>` is too small to divide by.

 # Safety
 The three vectors must hold `len` doubles; out pointers must be valid
 for writes.
 */
enum gl_status gl_fraction_stats(const double *g,
                                 const double *gp,
                                 const double *gc,
                                 size_t len,
                                 double *out_f_p,
                                 double *out_f_c,
                                 int32_t *out_defined);

/*
 Runs the experiment described by a `key = value` config file and writes
 its logs into `out_dir`.

 # Safety
 Both arguments must be NUL-terminated strings.
 */
enum gl_status gl_run_experiment(const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRADLAB_H */
