#ifndef FLOATSD8_H
#define FLOATSD8_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum Fsd8Status {
  FSD8_STATUS_OK = 0,
  FSD8_STATUS_NULL_POINTER = 1,
  FSD8_STATUS_INVALID_ARGUMENT = 2,
  FSD8_STATUS_INVALID_STATE = 3,
  FSD8_STATUS_CAPACITY = 4,
  FSD8_STATUS_FORMAT = 5,
  FSD8_STATUS_DIVERGENCE = 6,
  FSD8_STATUS_IO = 7,
  FSD8_STATUS_PANIC = 8,
} Fsd8Status;

/**
 * A trained model loaded from a checkpoint.
 */
typedef struct Fsd8Model Fsd8Model;

/**
 * Five-stage MAC pipeline.
 */
typedef struct Fsd8Pipeline Fsd8Pipeline;

/**
 * Sigmoid lookup table.
 */
typedef struct Fsd8SigmoidLut Fsd8SigmoidLut;

/**
 * Quantized sigmoid output: `term`, or `1 - term` when `has_one`.
 */
typedef struct Fsd8SigmoidOutput {
  bool has_one;
  /**
   * FloatSD8 code of the term.
   */
  uint8_t term;
  double value;
} Fsd8SigmoidOutput;

/**
 * Four FP8 inputs, four FloatSD8 weights and the FP16 carry-in, as raw
 * codes.
 */
typedef struct Fsd8MacBundle {
  uint8_t inputs[4];
  uint8_t weights[4];
  uint16_t carry_in;
} Fsd8MacBundle;

/**
 * Cycle counter and occupancy of a pipeline.
 */
typedef struct Fsd8PipelineCounters {
  uint64_t cycle;
  uint64_t issued;
  uint64_t retired;
  uint64_t in_flight;
} Fsd8PipelineCounters;

/**
 * Model dimensions.
 */
typedef struct Fsd8ModelShape {
  /**
   * Vocabulary size for token models, feature width otherwise.
   */
  size_t input;
  size_t hidden;
  size_t layers;
  size_t output;
} Fsd8ModelShape;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (truncated and
 * NUL-terminated when `len` is too small) and returns the full message
 * length without the terminator. `buf` may be null to query the length.
 */
size_t fsd8_last_error_message(char *buf, size_t len);

/**
 * Static name of a status code.
 */
const char *fsd8_status_name(enum Fsd8Status status);

/**
 * Nearest FloatSD8 code for `x` with exponent bias `bias`.
 */
enum Fsd8Status fsd8_quantize(double x, int32_t bias, uint8_t *code);

enum Fsd8Status fsd8_decode(uint8_t code, int32_t bias, double *value);

/**
 * FP8 (1-5-2) code of `x`, nearest with ties to even, saturating.
 */
enum Fsd8Status fsd8_fp8_quantize(double x, uint8_t *code);

enum Fsd8Status fsd8_fp8_decode(uint8_t code, double *value);

/**
 * FP16 code of `x`, nearest with ties to even, saturating.
 */
enum Fsd8Status fsd8_fp16_quantize(double x, uint16_t *code);

enum Fsd8Status fsd8_fp16_decode(uint16_t code, double *value);

enum Fsd8Status fsd8_sigmoid_lut_new(int32_t bias, struct Fsd8SigmoidLut **lut);

/**
 * Distinct outputs over non-positive inputs.
 */
enum Fsd8Status fsd8_sigmoid_lut_entry_count(const struct Fsd8SigmoidLut *lut, size_t *count);

enum Fsd8Status fsd8_sigmoid_lut_lookup(const struct Fsd8SigmoidLut *lut,
                                        uint8_t input,
                                        struct Fsd8SigmoidOutput *result);

/**
 * Releases a table; null is ignored.
 */
void fsd8_sigmoid_lut_free(struct Fsd8SigmoidLut *lut);

/**
 * One MAC evaluation. `window_bits` of 0 selects the exact window.
 */
enum Fsd8Status fsd8_mac_compute(const struct Fsd8MacBundle *bundle,
                                 uint32_t window_bits,
                                 uint16_t *result);

enum Fsd8Status fsd8_pipeline_new(uint32_t window_bits, struct Fsd8Pipeline **pipeline);

/**
 * Advances one cycle. `bundle` may be null for an idle cycle. On return
 * `retired` says whether `result` holds a value leaving the pipeline.
 */
enum Fsd8Status fsd8_pipeline_step(struct Fsd8Pipeline *pipeline,
                                   const struct Fsd8MacBundle *bundle,
                                   bool *retired,
                                   uint16_t *result);

enum Fsd8Status fsd8_pipeline_counters(const struct Fsd8Pipeline *pipeline,
                                       struct Fsd8PipelineCounters *counters);

void fsd8_pipeline_free(struct Fsd8Pipeline *pipeline);

/**
 * Loads a checkpoint. `preset` names the precision policy: "fp32",
 * "floatsd8", "floatsd8-fp16master" or "floatsd8-modified".
 */
enum Fsd8Status fsd8_model_load(const char *path, const char *preset, struct Fsd8Model **model);

enum Fsd8Status fsd8_model_shape(const struct Fsd8Model *model, struct Fsd8ModelShape *shape);

/**
 * Scores the model on the default validation split of `task` ("copy",
 * "adding", "char-lm" or "tiny-tagging") generated with `seed`.
 */
enum Fsd8Status fsd8_model_evaluate(const struct Fsd8Model *model,
                                    const char *task,
                                    uint64_t seed,
                                    double *loss,
                                    double *metric);

void fsd8_model_free(struct Fsd8Model *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLOATSD8_H */
