#ifndef TETFLAT_H
#define TETFLAT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum TetflatStatus {
  TETFLAT_STATUS_OK = 0,
  TETFLAT_STATUS_NULL_POINTER = 1,
  TETFLAT_STATUS_INVALID_ARGUMENT = 2,
  TETFLAT_STATUS_IO = 3,
  TETFLAT_STATUS_INVALID_DATA = 4,
  /**
   * The optimizer stopped before convergence; the result is still valid.
   */
  TETFLAT_STATUS_NOT_CONVERGED = 5,
  TETFLAT_STATUS_NUMERICAL = 6,
  TETFLAT_STATUS_BUFFER_TOO_SMALL = 7,
  TETFLAT_STATUS_PANIC = 99,
} TetflatStatus;

typedef enum TetflatTemplateKind {
  TETFLAT_TEMPLATE_KIND_PLANES = 0,
  TETFLAT_TEMPLATE_KIND_SINGLE_PLANE = 1,
  TETFLAT_TEMPLATE_KIND_ELLIPSOID = 2,
} TetflatTemplateKind;

typedef struct TetflatFlattening TetflatFlattening;

typedef struct TetflatMesh TetflatMesh;

typedef struct TetflatVolume TetflatVolume;

typedef struct TetflatParams {
  enum TetflatTemplateKind template_kind;
  double lambda;
  double beta;
  double rho;
  double eps;
  uint64_t max_iters;
  double gamma;
  double margin_mm;
  uint64_t seed;
} TetflatParams;

/**
 * Fitted template. `params` is `{h, 0, 0}` for the plane templates and
 * `{rx, ry, rz}` for the ellipsoid.
 */
typedef struct TetflatTemplate {
  enum TetflatTemplateKind kind;
  double params[3];
} TetflatTemplate;

/**
 * Scalar summary of a distortion report.
 */
typedef struct TetflatSummary {
  double dirichlet_excess_percent;
  /**
   * NaN when no template was given.
   */
  double template_rms;
  double mean_abs_log2_det_j;
  double mean_abs_log2_areal;
  double mean_abs_log2_metric;
} TetflatSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next `tetflat_*` call on the same thread.
 */
const char *tetflat_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tetflat_version(void);

struct TetflatParams tetflat_params_default(void);

/**
 * Builds a mesh from `num_vertices` xyz triples and `num_tets` groups of
 * four zero-based vertex indices. Negatively oriented tets are reoriented.
 */
enum TetflatStatus tetflat_mesh_new(const double *vertices,
                                    size_t num_vertices,
                                    const uint64_t *tets,
                                    size_t num_tets,
                                    struct TetflatMesh **out);

/**
 * Loads `.node`/`.ele` (either file or the stem) or legacy `.vtk`.
 */
enum TetflatStatus tetflat_mesh_load(const char *path, struct TetflatMesh **out);

/**
 * Synthetic bent slab; `resolution` holds cell counts along length, width
 * and thickness.
 */
enum TetflatStatus tetflat_mesh_bent_slab(double length,
                                          double width,
                                          double thickness,
                                          double bend_angle,
                                          const uint32_t *resolution,
                                          struct TetflatMesh **out);

enum TetflatStatus tetflat_mesh_write_tetgen(const struct TetflatMesh *mesh, const char *stem);

/**
 * Vertex count, or 0 for a null handle.
 */
size_t tetflat_mesh_num_vertices(const struct TetflatMesh *mesh);

/**
 * Tet count, or 0 for a null handle.
 */
size_t tetflat_mesh_num_tets(const struct TetflatMesh *mesh);

/**
 * Copies vertex coordinates (xyz interleaved) into `out`, which must hold
 * at least `3 * num_vertices` values.
 */
enum TetflatStatus tetflat_mesh_vertices(const struct TetflatMesh *mesh, double *out, size_t len);

void tetflat_mesh_free(struct TetflatMesh *mesh);

/**
 * Flattens `mesh`. `params` may be null for defaults. When the iteration
 * budget runs out `*out` is still set and `TETFLAT_STATUS_NOT_CONVERGED` is
 * returned.
 */
enum TetflatStatus tetflat_flatten(const struct TetflatMesh *mesh,
                                   const struct TetflatParams *params,
                                   struct TetflatFlattening **out);

enum TetflatStatus tetflat_flattening_template(const struct TetflatFlattening *f,
                                               struct TetflatTemplate *out);

/**
 * Iterations taken, or 0 for a null handle.
 */
uint64_t tetflat_flattening_iterations(const struct TetflatFlattening *f);

bool tetflat_flattening_converged(const struct TetflatFlattening *f);

/**
 * Copies mapped vertex positions (xyz interleaved, template frame).
 */
enum TetflatStatus tetflat_flattening_positions(const struct TetflatFlattening *f,
                                                double *out,
                                                size_t len);

/**
 * New mesh handle with the source connectivity and mapped positions.
 */
enum TetflatStatus tetflat_flattening_mapped_mesh(const struct TetflatFlattening *f,
                                                  struct TetflatMesh **out);

void tetflat_flattening_free(struct TetflatFlattening *f);

/**
 * Distortion summary of the flattening, with template RMS in voxels of
 * `voxel_mm` (pass 0 for the default 3 mm).
 */
enum TetflatStatus tetflat_flattening_summary(const struct TetflatFlattening *f,
                                              double voxel_mm,
                                              struct TetflatSummary *out);

/**
 * Full distortion report of `x` against `z` as a JSON string, to be
 * released with [`tetflat_string_free`].
 */
enum TetflatStatus tetflat_report_json(const struct TetflatMesh *z,
                                       const struct TetflatMesh *x,
                                       char **out);

void tetflat_string_free(char *s);

enum TetflatStatus tetflat_volume_load(const char *path, struct TetflatVolume **out);

/**
 * Volume from x-fastest samples.
 */
enum TetflatStatus tetflat_volume_new(const size_t *dims,
                                      const double *spacing,
                                      const double *origin,
                                      const double *data,
                                      struct TetflatVolume **out);

enum TetflatStatus tetflat_volume_write(const struct TetflatVolume *v, const char *path);

/**
 * Writes the three grid dimensions into `out`.
 */
enum TetflatStatus tetflat_volume_dims(const struct TetflatVolume *v, size_t *out);

/**
 * Copies samples (x fastest; NaN outside the mesh after resampling).
 */
enum TetflatStatus tetflat_volume_data(const struct TetflatVolume *v, double *out, size_t len);

void tetflat_volume_free(struct TetflatVolume *v);

/**
 * Pulls `volume` (original frame of `z`) back onto a grid covering `x`
 * with the given spacing (null for the input spacing).
 */
enum TetflatStatus tetflat_resample(const struct TetflatVolume *volume,
                                    const struct TetflatMesh *z,
                                    const struct TetflatMesh *x,
                                    const double *spacing,
                                    struct TetflatVolume **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TETFLAT_H */
