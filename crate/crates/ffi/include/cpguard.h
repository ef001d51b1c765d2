#ifndef CPGUARD_H
#define CPGUARD_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CpgStatus {
  CPG_STATUS_OK = 0,
  CPG_STATUS_NULL_POINTER = 1,
  CPG_STATUS_INVALID_ARGUMENT = 2,
  CPG_STATUS_BUFFER_TOO_SMALL = 3,
  CPG_STATUS_SHAPE = 4,
  CPG_STATUS_DOMAIN = 5,
  CPG_STATUS_CONFIG = 6,
  CPG_STATUS_FORMAT = 7,
  CPG_STATUS_VERSION = 8,
  CPG_STATUS_IO = 9,
  CPG_STATUS_PANIC = 10,
  CPG_STATUS_OTHER = 11,
} CpgStatus;

typedef struct CpgDataset CpgDataset;

typedef struct CpgDetector CpgDetector;

typedef struct CpgGuard CpgGuard;

// Axis-aligned box in world coordinates with a confidence in [0, 1].
typedef struct CpgBox {
  float cx;
  float cy;
  float w;
  float h;
  float confidence;
} CpgBox;

// Metadata of one benchmark record. `attack` is 0 for benign records.
typedef struct CpgRecordInfo {
  uint32_t scene_id;
  uint32_t ego_id;
  uint32_t collaborator_id;
  uint8_t label;
  uint8_t attack;
  float budget;
} CpgRecordInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *cpg_version(void);

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next call into the library from the same thread.
const char *cpg_last_error_message(void);

// Loads a detector checkpoint.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum CpgStatus cpg_detector_load(const char *path, struct CpgDetector **out);

// # Safety
// `det` must come from [`cpg_detector_load`] and not be used afterwards.
void cpg_detector_free(struct CpgDetector *det);

// Writes the (C, H, W) feature-map shape into `out_shape[0..3]`.
//
// # Safety
// `det` must be a live handle and `out_shape` must hold three values.
enum CpgStatus cpg_detector_feature_shape(const struct CpgDetector *det, size_t *out_shape);

// Fuses the ego map with `count` aligned collaborator maps by mean, decodes
// and writes detections above the model's score threshold. When more than
// `capacity` boxes are found the first `capacity` are written,
// `*out_count` holds the full count and `BUFFER_TOO_SMALL` is returned.
//
// # Safety
// Map pointers must hold `len` and `count * len` floats; `out_boxes` must
// hold `capacity` boxes.
enum CpgStatus cpg_detect(const struct CpgDetector *det,
                          const float *ego,
                          float pose_x,
                          float pose_y,
                          const float *collaborators,
                          size_t count,
                          size_t len,
                          struct CpgBox *out_boxes,
                          size_t capacity,
                          size_t *out_count);

// Loads a guard checkpoint.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum CpgStatus cpg_guard_load(const char *path, struct CpgGuard **out);

// # Safety
// `guard` must come from [`cpg_guard_load`] and not be used afterwards.
void cpg_guard_free(struct CpgGuard *guard);

// Writes the (C, H, W) guard input shape into `out_shape[0..3]`.
//
// # Safety
// `guard` must be a live handle and `out_shape` must hold three values.
enum CpgStatus cpg_guard_input_shape(const struct CpgGuard *guard, size_t *out_shape);

// Classifies each of `count` collaborators against the ego map. Writes the
// malicious probability and a 0/1 flag per collaborator; either output may
// be null.
//
// # Safety
// Map pointers must hold `len` and `count * len` floats; non-null outputs
// must hold `count` values.
enum CpgStatus cpg_guard_detect(const struct CpgGuard *guard,
                                const float *ego,
                                const float *collaborators,
                                size_t count,
                                size_t len,
                                float threshold,
                                float *out_probabilities,
                                uint8_t *out_flags);

// Drops collaborators the guard flags, then fuses and decodes as
// [`cpg_detect`]. `out_flags` (nullable) receives one 0/1 flag per
// collaborator.
//
// # Safety
// As for [`cpg_detect`]; non-null `out_flags` must hold `count` bytes.
enum CpgStatus cpg_defend(const struct CpgDetector *det,
                          const struct CpgGuard *guard,
                          const float *ego,
                          float pose_x,
                          float pose_y,
                          const float *collaborators,
                          size_t count,
                          size_t len,
                          float threshold,
                          uint8_t *out_flags,
                          struct CpgBox *out_boxes,
                          size_t capacity,
                          size_t *out_count);

// Opens a benchmark directory (manifest plus shards).
//
// # Safety
// `dir` must be a NUL-terminated string and `out` a writable pointer.
enum CpgStatus cpg_dataset_open(const char *dir, struct CpgDataset **out);

// # Safety
// `ds` must come from [`cpg_dataset_open`] and not be used afterwards.
void cpg_dataset_free(struct CpgDataset *ds);

// Writes the record count and the (C, H, W) feature shape. Records are
// stored train, then validation, then test; `out_splits` (nullable)
// receives the three split sizes.
//
// # Safety
// `out_shape` must hold three values and non-null `out_splits` three more.
enum CpgStatus cpg_dataset_info(const struct CpgDataset *ds,
                                size_t *out_count,
                                size_t *out_shape,
                                size_t *out_splits);

// Metadata and, for non-null buffers of `len` floats, the ego and
// collaborator maps of record `index`.
//
// # Safety
// `out_info` must be writable; non-null map buffers must hold `len` floats.
enum CpgStatus cpg_dataset_record(const struct CpgDataset *ds,
                                  size_t index,
                                  struct CpgRecordInfo *out_info,
                                  float *out_ego,
                                  float *out_collaborator,
                                  size_t len);

// Average precision pooled over frames at an IoU threshold. Predictions
// and ground truth carry a frame index each; ground-truth confidences are
// ignored.
//
// # Safety
// Each array must hold as many entries as its count.
enum CpgStatus cpg_average_precision(const struct CpgBox *predictions,
                                     const uint32_t *prediction_frames,
                                     size_t prediction_count,
                                     const struct CpgBox *ground_truth,
                                     const uint32_t *ground_truth_frames,
                                     size_t ground_truth_count,
                                     float iou_threshold,
                                     double *out_ap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CPGUARD_H */
