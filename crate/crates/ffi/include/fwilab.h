#ifndef FWILAB_H
#define FWILAB_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

#define FWI_FAMILY_FLAT 0

#define FWI_FAMILY_CURVED 1

// Status codes. Values 1 to 19 mirror the library's error codes.
typedef enum FwiStatus {
  FWI_STATUS_OK = 0,
  FWI_STATUS_SHAPE_MISMATCH = 1,
  FWI_STATUS_SINGULAR_MATRIX = 2,
  FWI_STATUS_INVALID_STD = 3,
  FWI_STATUS_SPEC_OUT_OF_RANGE = 4,
  FWI_STATUS_ZERO_STD = 5,
  FWI_STATUS_EMPTY_CORPUS = 6,
  FWI_STATUS_CFL_VIOLATION = 7,
  FWI_STATUS_GEOMETRY_OUT_OF_BOUNDS = 8,
  FWI_STATUS_ZERO_SIGNAL = 9,
  FWI_STATUS_INCOMPATIBLE_DIMS = 10,
  FWI_STATUS_STALE_CACHE = 11,
  FWI_STATUS_NON_CONVERGENCE = 12,
  FWI_STATUS_NON_POSITIVE_TRUTH = 13,
  FWI_STATUS_NON_POSITIVE_PRED = 14,
  FWI_STATUS_DATASET_TOO_SMALL = 15,
  FWI_STATUS_INVALID_ARGUMENT = 16,
  FWI_STATUS_FORMAT = 17,
  FWI_STATUS_IO = 18,
  FWI_STATUS_SERIALIZATION = 19,
  FWI_STATUS_NULL_POINTER = 100,
  FWI_STATUS_INVALID_UTF8 = 101,
  FWI_STATUS_PANIC = 102,
} FwiStatus;

// Trained network with its standardizer and optional CRF settings.
typedef struct FwiCheckpoint FwiCheckpoint;

// Shot gather, `sources x receivers x samples`.
typedef struct FwiGather FwiGather;

// Velocity model, `nz x nx` cells in m/s.
typedef struct FwiModel FwiModel;

// Scalar metrics of a prediction against ground truth.
typedef struct FwiMetrics {
  double mae;
  double rel;
  double log10;
  // Percentage of cells within the ratio thresholds 1.01, 1.02, 1.05, 1.10.
  double acc_101;
  double acc_102;
  double acc_105;
  double acc_110;
} FwiMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` (NUL
// terminated, truncated to `len`). Returns the full message length
// including the terminator, or 0 when no error has been recorded.
size_t fwi_last_error(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *fwi_version(void);

// Draws a random model of `family` (`FWI_FAMILY_*`) on an `nz x nx` grid
// with spacing `dx`.
enum FwiStatus fwi_model_generate(uint32_t family,
                                  size_t nz,
                                  size_t nx,
                                  double dx,
                                  size_t fault_count,
                                  uint64_t seed,
                                  struct FwiModel **out);

// Wraps `nz * nx` row-major velocities (depth-major).
enum FwiStatus fwi_model_from_values(const double *values,
                                     size_t nz,
                                     size_t nx,
                                     double dx,
                                     struct FwiModel **out);

enum FwiStatus fwi_model_dims(const struct FwiModel *model, size_t *nz, size_t *nx);

// Copies the velocities into `buf`, which must hold exactly `nz * nx` values.
enum FwiStatus fwi_model_values(const struct FwiModel *model, double *buf, size_t len);

void fwi_model_free(struct FwiModel *model);

// Simulates a surface acquisition with evenly spaced sources and receivers.
// The time step follows the stability limit of the model's fastest velocity.
enum FwiStatus fwi_simulate(const struct FwiModel *model,
                            size_t sources,
                            size_t receivers,
                            size_t nt,
                            struct FwiGather **out);

// Wraps `sources * receivers * nt` samples, source-major then receiver.
enum FwiStatus fwi_gather_from_values(const double *values,
                                      size_t sources,
                                      size_t receivers,
                                      size_t nt,
                                      double dt,
                                      struct FwiGather **out);

enum FwiStatus fwi_gather_dims(const struct FwiGather *gather,
                               size_t *sources,
                               size_t *receivers,
                               size_t *nt);

enum FwiStatus fwi_gather_values(const struct FwiGather *gather, double *buf, size_t len);

void fwi_gather_free(struct FwiGather *gather);

// Loads a checkpoint written by `fwilab train` or `fwilab fit-crf`.
enum FwiStatus fwi_checkpoint_load(const char *path, struct FwiCheckpoint **out);

enum FwiStatus fwi_checkpoint_has_crf(const struct FwiCheckpoint *ckpt, bool *has_crf);

void fwi_checkpoint_free(struct FwiCheckpoint *ckpt);

// Predicts a velocity model with cell size `dx` from `gather`. With
// `use_crf` the checkpoint's CRF refinement is applied; it is an error if
// the checkpoint has none.
enum FwiStatus fwi_invert(struct FwiCheckpoint *ckpt,
                          const struct FwiGather *gather,
                          double dx,
                          bool use_crf,
                          struct FwiModel **out);

enum FwiStatus fwi_evaluate(const struct FwiModel *pred,
                            const struct FwiModel *truth,
                            struct FwiMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FWILAB_H */
