#ifndef GPMAX_GPMAX_H
#define GPMAX_GPMAX_H

/* C interface to the gpmax library. All handles are opaque; every function
 * returns a gpm_status and, on failure, leaves a message for gpm_last_error().
 * Buffers and strings handed out by the library are released with gpm_free. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define GPM_API __declspec(dllexport)
#else
#define GPM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum gpm_status {
  GPM_OK = 0,
  GPM_INVALID_ARGUMENT = 1,
  GPM_DOMAIN = 2,
  GPM_NUMERICAL = 3,
  GPM_UNSUPPORTED = 4,
  GPM_IO = 5,
  GPM_CONFIG = 6,
  GPM_INTERNAL = 99
} gpm_status;

typedef struct gpm_kernel gpm_kernel;
typedef struct gpm_field gpm_field;
typedef struct gpm_palm gpm_palm;

typedef struct gpm_box {
  double x0, x1, y0, y1;
} gpm_box;

typedef enum gpm_sampler {
  GPM_SAMPLER_BF_SERIES = 0,
  GPM_SAMPLER_RPW_BESSEL = 1,
  GPM_SAMPLER_CIRCULANT_GRID = 2,
  GPM_SAMPLER_BLOCK_INDEPENDENT = 3,
  GPM_SAMPLER_ANALYTIC = 4,
  GPM_SAMPLER_DERIVED = 5
} gpm_sampler;

typedef struct gpm_field_info {
  gpm_sampler sampler;
  uint64_t seed;
  gpm_box domain;
  int truncation; /* series degree/order; 0 for grid fields */
  double truncation_error_bound;
  int has_evaluator; /* nonzero: jets at arbitrary points */
  double grid_h;     /* grid-only fields: lattice spacing, else 0 */
} gpm_field_info;

/* Jet layout: value, d/dx, d/dy, d2/dx2, d2/dy2, d2/dxdy. */
enum { GPM_JET_SIZE = 6 };

typedef struct gpm_critical_point {
  double x, y, height;
  double eig1, eig2; /* Hessian eigenvalues, ascending */
  int index;         /* Morse index */
} gpm_critical_point;

typedef struct gpm_intensity {
  double u;
  int d;
  double density; /* leading-order maxima above u per unit volume */
  double mu;      /* spatial scaling mu(u) */
  double tau;     /* cluster radius tau(u) */
} gpm_intensity;

typedef struct gpm_palm_info {
  double xi;           /* f_tilde(0) */
  double hess[3];      /* Z: xx, yy, xy */
  double ess;          /* importance batch effective sample size */
} gpm_palm_info;

GPM_API const char* gpm_version(void);
/* Message of the last failure on this thread; empty if none. */
GPM_API const char* gpm_last_error(void);
GPM_API void gpm_free(void* ptr);

/* ---- kernels ---- */
GPM_API gpm_status gpm_kernel_create(const char* id, int dim, const double* params, size_t n_params,
                                     gpm_kernel** out);
GPM_API void gpm_kernel_destroy(gpm_kernel* kernel);
GPM_API gpm_status gpm_kernel_eval(const gpm_kernel* kernel, double x, double y, int ax, int ay,
                                   double* out);
/* Row-major jet covariance; *n receives the side length. */
GPM_API gpm_status gpm_kernel_moment_matrix(const gpm_kernel* kernel, double** out, size_t* n);

/* ---- sampling ---- */
GPM_API gpm_status gpm_sample_bf(uint64_t seed, gpm_box domain, double tolerance, gpm_field** out);
GPM_API gpm_status gpm_sample_rpw(uint64_t seed, double radius, double tolerance, gpm_field** out);
/* Circulant grid on the origin-anchored lattice of spacing h inside the box.
 * pad < 0 selects the minimal embedding. */
GPM_API gpm_status gpm_sample_grid(const gpm_kernel* kernel, gpm_box domain, double h, double pad,
                                   uint64_t seed, gpm_field** out);
GPM_API gpm_status gpm_sample_block(const gpm_kernel* kernel, double block_side, double gap,
                                    gpm_box domain, uint64_t seed, gpm_field** out);
GPM_API void gpm_field_destroy(gpm_field* field);
GPM_API gpm_status gpm_field_info_get(const gpm_field* field, gpm_field_info* out);
GPM_API gpm_status gpm_field_jet(const gpm_field* field, double x, double y, double jet[GPM_JET_SIZE]);
/* Values on the lattice x0 + i h, y0 + j h (i < nx, j < ny), stored with x
 * fastest: out[j * nx + i]. Grid-only fields need their own lattice. */
GPM_API gpm_status gpm_field_grid(const gpm_field* field, double x0, double y0, double h, int nx,
                                  int ny, double* out);
/* The lattice a grid-only field carries. */
GPM_API gpm_status gpm_field_native_grid(const gpm_field* field, double* x0, double* y0, double* h,
                                         int* nx, int* ny);

/* ---- critical points ---- */
/* window may be NULL (whole domain). */
GPM_API gpm_status gpm_find_maxima(const gpm_field* field, double u, double grid_factor,
                                   const gpm_box* window, gpm_critical_point** out, size_t* n);

/* ---- intensities ---- */
GPM_API gpm_status gpm_intensity_get(const gpm_kernel* kernel, double u, gpm_intensity* out);
GPM_API gpm_status gpm_expected_max_level(const gpm_kernel* kernel, double window_side, double* out);

/* ---- Palm coupling (Bargmann-Fock and monochromatic fields) ---- */
GPM_API gpm_status gpm_palm_couple(const gpm_field* field, double u, uint64_t seed, gpm_palm** out);
GPM_API void gpm_palm_destroy(gpm_palm* palm);
GPM_API gpm_status gpm_palm_info_get(const gpm_palm* palm, gpm_palm_info* out);
/* New handle to the coupled field f_tilde. */
GPM_API gpm_status gpm_palm_tilde(const gpm_palm* palm, gpm_field** out);

/* ---- experiments ---- */
/* JSON {"ok", "errors": [{field, message}], "warnings": [...]}. GPM_IO if unreadable. */
GPM_API gpm_status gpm_validate_config(const char* path, char** report_json);
/* Runs an experiment config; output_dir may be NULL. GPM_CONFIG on invalid
 * config (message lists the fields). *failed_cells counts cells that errored. */
GPM_API gpm_status gpm_run_experiment(const char* path, const char* output_dir, int* failed_cells);
/* One (u, R) cell: report JSON and per-replicate counts CSV. */
GPM_API gpm_status gpm_diagnose_cell(const gpm_kernel* kernel, double u, double window_side,
                                     long replicates, uint64_t seed, double grid_factor,
                                     int threads, long palm_pairs, char** report_json,
                                     char** counts_csv);

#ifdef __cplusplus
}
#endif

#endif
