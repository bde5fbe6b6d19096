#ifndef FARPN_H
#define FARPN_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FarpnStatus {
  FARPN_STATUS_OK = 0,
  FARPN_STATUS_NULL_POINTER = 1,
  FARPN_STATUS_INVALID_ARGUMENT = 2,
  FARPN_STATUS_IO = 3,
  FARPN_STATUS_FORMAT = 4,
  FARPN_STATUS_OUT_OF_RANGE = 5,
  FARPN_STATUS_PANIC = 6,
} FarpnStatus;

typedef enum FarpnBranch {
  FARPN_BRANCH_SCORE = 0,
  FARPN_BRANCH_REGRESS = 1,
} FarpnBranch;

/**
 * Opaque anchor set.
 */
typedef struct FarpnAnchorSet FarpnAnchorSet;

/**
 * Opaque feature map.
 */
typedef struct FarpnFeatureMap FarpnFeatureMap;

/**
 * Opaque ranked proposal list.
 */
typedef struct FarpnProposals FarpnProposals;

typedef struct FarpnBox {
  double x1;
  double y1;
  double x2;
  double y2;
} FarpnBox;

typedef struct FarpnProposal {
  struct FarpnBox bbox;
  double score;
  uint32_t iteration;
} FarpnProposal;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *farpn_last_error_message(void);

double farpn_iou(struct FarpnBox a, struct FarpnBox b);

/**
 * Anchor lattice pitch for scale `s`: `max(c, s / d)`.
 */
double farpn_scale_stride(double s, double c, double d);

/**
 * Places anchors for every (scale, ratio) pair on an image.
 *
 * # Safety
 * `scales` and `ratios` must point to `n_scales` and `n_ratios` doubles;
 * `out` must be writable.
 */
enum FarpnStatus farpn_anchors_place(const double *scales,
                                     size_t n_scales,
                                     const double *ratios,
                                     size_t n_ratios,
                                     double min_stride,
                                     double stride_divisor,
                                     double image_width,
                                     double image_height,
                                     struct FarpnAnchorSet **out);

/**
 * # Safety
 * `set` must be NULL or a live handle.
 */
size_t farpn_anchors_len(const struct FarpnAnchorSet *set);

/**
 * # Safety
 * `set` must be a live handle and `out` writable.
 */
enum FarpnStatus farpn_anchors_get(const struct FarpnAnchorSet *set,
                                   size_t index,
                                   struct FarpnBox *out);

/**
 * # Safety
 * `set` must be NULL or a handle not yet freed.
 */
void farpn_anchors_free(struct FarpnAnchorSet *set);

/**
 * Creates a `height x width x channels` map, channel fastest. `data` may be
 * NULL for an all-zero map; otherwise it must hold every value.
 *
 * # Safety
 * `data` must be NULL or point to `height * width * channels` doubles; `out`
 * must be writable.
 */
enum FarpnStatus farpn_feature_map_new(size_t height,
                                       size_t width,
                                       size_t channels,
                                       double stride,
                                       const double *data,
                                       struct FarpnFeatureMap **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum FarpnStatus farpn_feature_map_read(const char *path, struct FarpnFeatureMap **out);

/**
 * # Safety
 * `map` must be a live handle and `path` a NUL-terminated string.
 */
enum FarpnStatus farpn_feature_map_write(const struct FarpnFeatureMap *map, const char *path);

/**
 * # Safety
 * `map` must be a live handle; each output pointer may be NULL.
 */
enum FarpnStatus farpn_feature_map_dims(const struct FarpnFeatureMap *map,
                                        size_t *height,
                                        size_t *width,
                                        size_t *channels);

/**
 * # Safety
 * `map` must be NULL or a handle not yet freed.
 */
void farpn_feature_map_free(struct FarpnFeatureMap *map);

/**
 * Pools one branch for one RoI. `out` receives `classes` values for the
 * score branch or 4 (`dx, dy, dw, dh`) for the regression branch.
 *
 * # Safety
 * `map` must be a live handle and `out` must hold `out_len` doubles.
 */
enum FarpnStatus farpn_psroi_pool(const struct FarpnFeatureMap *map,
                                  struct FarpnBox roi,
                                  size_t k,
                                  size_t classes,
                                  enum FarpnBranch branch,
                                  double *out,
                                  size_t out_len);

/**
 * Scores `anchors`, runs `iterations` refinement rounds on the best
 * `top_k`, and returns the best `output_n` proposals.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum FarpnStatus farpn_propose(const struct FarpnFeatureMap *score_map,
                               const struct FarpnFeatureMap *regress_map,
                               const struct FarpnAnchorSet *anchors,
                               double image_width,
                               double image_height,
                               size_t k,
                               size_t iterations,
                               size_t top_k,
                               size_t output_n,
                               struct FarpnProposals **out);

/**
 * Gaussian Soft-NMS over `n` proposals.
 *
 * # Safety
 * `proposals` must point to `n` values and `out` be writable.
 */
enum FarpnStatus farpn_soft_nms(const struct FarpnProposal *proposals,
                                size_t n,
                                double sigma,
                                double score_floor,
                                struct FarpnProposals **out);

/**
 * # Safety
 * `list` must be NULL or a live handle.
 */
size_t farpn_proposals_len(const struct FarpnProposals *list);

/**
 * # Safety
 * `list` must be a live handle and `out` writable.
 */
enum FarpnStatus farpn_proposals_get(const struct FarpnProposals *list,
                                     size_t index,
                                     struct FarpnProposal *out);

/**
 * # Safety
 * `list` must be NULL or a handle not yet freed.
 */
void farpn_proposals_free(struct FarpnProposals *list);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FARPN_H */
