#ifndef WSOFTMAX_H
#define WSOFTMAX_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum WsStatus {
  WS_STATUS_OK = 0,
  WS_STATUS_NULL_POINTER = 1,
  WS_STATUS_INVALID_ARGUMENT = 2,
  WS_STATUS_DIMENSION_MISMATCH = 3,
  WS_STATUS_ZERO_NORM = 4,
  WS_STATUS_ANTIPODAL_COLLAPSE = 5,
  WS_STATUS_LABEL_OUT_OF_RANGE = 6,
  WS_STATUS_IO = 7,
  WS_STATUS_PARSE = 8,
  WS_STATUS_BUFFER_TOO_SMALL = 9,
  WS_STATUS_PANIC = 10,
  WS_STATUS_INTERNAL = 11,
} WsStatus;

// A trained network loaded from a JSON checkpoint.
typedef struct WsModel WsModel;

// Simplex classifier weights for C classes ((C−1)×C).
typedef struct WsSimplex WsSimplex;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread ("" if none). The pointer
// stays valid until the next failing call on the same thread.
const char *ws_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *ws_version(void);

// Smallest feature width that holds C equiangular unit weights (C − 1).
enum WsStatus ws_min_feature_dim(size_t classes, size_t *out);

// Bytes of f32 parameters in a bias-free M×C classifier.
uint64_t ws_fc_param_memory(size_t feature_dim, size_t classes);

enum WsStatus ws_simplex_new(size_t classes, struct WsSimplex **out);

enum WsStatus ws_simplex_shape(const struct WsSimplex *s, size_t *rows, size_t *cols);

// Copies the (C−1)×C weights row-major into `out` (`len` ≥ (C−1)·C).
enum WsStatus ws_simplex_copy_weights(const struct WsSimplex *s, double *out, size_t len);

void ws_simplex_free(struct WsSimplex *s);

// Max-subtracted softmax of `n` logits into `out` (`n` values).
enum WsStatus ws_softmax_probs(const double *logits, size_t n, double *out);

// W-Softmax loss of one instance. `weights` is the raw M×C classifier
// (columns are normalized internally). `grad_x` (M values) and
// `grad_weights` (M·C values) may be null when not wanted.
enum WsStatus ws_wsoftmax_loss(const double *weights,
                               size_t feature_dim,
                               size_t classes,
                               const double *x,
                               size_t label,
                               double alpha,
                               double *loss,
                               double *grad_x,
                               double *grad_weights);

// Loads a JSON checkpoint written by the `train` command.
enum WsStatus ws_model_load(const char *path, struct WsModel **out);

// Input width, feature width M and class count C of a loaded model.
enum WsStatus ws_model_dims(const struct WsModel *m,
                            size_t *input_dim,
                            size_t *feature_dim,
                            size_t *classes);

// Predicted class of one input of `len` values.
enum WsStatus ws_model_predict(const struct WsModel *m,
                               const double *x,
                               size_t len,
                               size_t *class_out);

// Feature vector (M values) of one input.
enum WsStatus ws_model_features(const struct WsModel *m,
                                const double *x,
                                size_t len,
                                double *out,
                                size_t out_len);

void ws_model_free(struct WsModel *m);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WSOFTMAX_H */
