#ifndef TPA_FFI_H
#define TPA_FFI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum TpaStatus {
  TPA_STATUS_OK = 0,
  TPA_STATUS_NULL_POINTER = 1,
  TPA_STATUS_INVALID_ARGUMENT = 2,
  TPA_STATUS_DIMENSION = 3,
  TPA_STATUS_FORMAT = 4,
  TPA_STATUS_IO = 5,
  TPA_STATUS_CONFIG = 6,
  TPA_STATUS_CONSISTENCY = 7,
  TPA_STATUS_UTF8 = 8,
  TPA_STATUS_PANIC = 9,
} TpaStatus;

/**
 * Opaque attack configuration handle.
 */
typedef struct TpaAttackConfig TpaAttackConfig;

/**
 * Opaque model handle.
 */
typedef struct TpaModel TpaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string. The
 * pointer stays valid until the next call into this library on the thread.
 */
const char *tpa_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tpa_version(void);

/**
 * Loads a TPAM checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum TpaStatus tpa_model_load(const char *path, struct TpaModel **out);

/**
 * Parses TPAM checkpoint bytes.
 *
 * # Safety
 * `data` must point to `len` readable bytes and `out` must be writable.
 */
enum TpaStatus tpa_model_from_bytes(const uint8_t *data, uintptr_t len, struct TpaModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void tpa_model_free(struct TpaModel *model);

/**
 * Input dimension, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uintptr_t tpa_model_input_dim(const struct TpaModel *model);

/**
 * Number of classes, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uintptr_t tpa_model_n_classes(const struct TpaModel *model);

/**
 * Writes the logits of `x` into `logits` (`logits_len` must equal the
 * number of classes).
 *
 * # Safety
 * Buffers must hold the stated number of doubles.
 */
enum TpaStatus tpa_model_forward(const struct TpaModel *model,
                                 const double *x,
                                 uintptr_t x_len,
                                 double *logits,
                                 uintptr_t logits_len);

/**
 * Cross-entropy loss of class `y` at `x` and its input gradient.
 *
 * # Safety
 * `loss` must be writable; `grad` must hold `grad_len` doubles.
 */
enum TpaStatus tpa_model_loss_and_grad(const struct TpaModel *model,
                                       const double *x,
                                       uintptr_t x_len,
                                       uintptr_t y,
                                       double *loss,
                                       double *grad,
                                       uintptr_t grad_len);

/**
 * New attack config holding the published defaults for `kind`
 * (`bim`, `mi`, `ni`, `vt`, `rap` or `tpa`).
 *
 * # Safety
 * `kind` must be a NUL-terminated string and `out` writable.
 */
enum TpaStatus tpa_attack_config_new(const char *kind, struct TpaAttackConfig **out);

/**
 * Sets one key using config-file syntax, e.g. `("tpa.lambda", "1")` or
 * `("epsilon", "8")`; distances are in pixel units.
 *
 * # Safety
 * `config` must be a live handle; `key` and `value` NUL-terminated strings.
 */
enum TpaStatus tpa_attack_config_set(struct TpaAttackConfig *config,
                                     const char *key,
                                     const char *value);

/**
 * Releases an attack config. Null is ignored.
 *
 * # Safety
 * `config` must come from this library and not be used afterwards.
 */
void tpa_attack_config_free(struct TpaAttackConfig *config);

/**
 * Attacks one example. `example` keys the random streams, so equal
 * arguments give bit-identical outputs. `delta` and `adv` must each hold
 * `x_len` doubles; `success` receives whether the proxy is fooled.
 *
 * # Safety
 * Handles must be live and buffers sized as stated.
 */
enum TpaStatus tpa_attack_run(const struct TpaModel *model,
                              const struct TpaAttackConfig *config,
                              const double *x,
                              uintptr_t x_len,
                              uintptr_t y,
                              uint64_t example,
                              double *delta,
                              double *adv,
                              bool *success);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TPA_FFI_H */
