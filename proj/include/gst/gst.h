/* Gaussian spatial transport toolkit - C API.
 *
 * All functions return gst_status; on failure gst_last_error() holds a
 * thread-local message. Objects are opaque handles released with their
 * _free function. Output parameters are only written on GST_OK.
 */
#ifndef GST_GST_H
#define GST_GST_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define GST_API __declspec(dllexport)
#else
#define GST_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum gst_status {
    GST_OK = 0,
    GST_ERR_IO = 2,         /* file missing/unreadable/malformed */
    GST_ERR_CONFIG = 3,     /* invalid configuration value */
    GST_ERR_DATA = 4,       /* data consistency violation */
    GST_ERR_MISSING = 5,    /* missing dependency (e.g. kernel) */
    GST_ERR_INTERNAL = 10
} gst_status;

GST_API const char* gst_version(void);
GST_API const char* gst_last_error(void);

/* --- images -------------------------------------------------------------- */

typedef struct gst_image gst_image;

GST_API gst_status gst_image_load(const char* path, gst_image** out);
GST_API gst_status gst_image_save(const gst_image* img, const char* path);
GST_API gst_status gst_image_create(int height, int width, int channels,
                                    const double* values, gst_image** out);
GST_API int gst_image_height(const gst_image* img);
GST_API int gst_image_width(const gst_image* img);
GST_API int gst_image_channels(const gst_image* img);
GST_API const double* gst_image_data(const gst_image* img);
GST_API void gst_image_free(gst_image* img);

/* --- annotations ----------------------------------------------------------
 * Points are (row, col) pairs in pixel units; see data/ for a sample file. */

typedef struct gst_annotations gst_annotations;

GST_API gst_status gst_annotations_load(const char* path, int height, int width,
                                        gst_annotations** out);
GST_API gst_status gst_annotations_create(int height, int width, const double* row_col,
                                          size_t n_points, gst_annotations** out);
GST_API gst_status gst_annotations_save(const gst_annotations* ann, const char* path);
GST_API size_t gst_annotations_count(const gst_annotations* ann);
GST_API const double* gst_annotations_points(const gst_annotations* ann);
GST_API int gst_annotations_height(const gst_annotations* ann);
GST_API int gst_annotations_width(const gst_annotations* ann);
GST_API void gst_annotations_free(gst_annotations* ann);

/* --- density maps ---------------------------------------------------------- */

typedef struct gst_density gst_density;

GST_API gst_status gst_density_create(int height, int width, const double* values,
                                      gst_density** out);
GST_API int gst_density_height(const gst_density* d);
GST_API int gst_density_width(const gst_density* d);
GST_API const double* gst_density_data(const gst_density* d);
GST_API double gst_density_sum(const gst_density* d);
GST_API gst_status gst_density_heatmap(const gst_density* d, gst_image** out);
GST_API gst_status gst_pseudo_gt(const gst_annotations* ann, double sigma,
                                 gst_density** out);
GST_API void gst_density_free(gst_density* d);

/* --- splatting ------------------------------------------------------------- */

typedef struct gst_scene gst_scene;

typedef struct gst_fit_config {
    int iterations;
    double learning_rate;
    double delta;   /* max aspect ratio, >= 1 */
    double beta;    /* shape loss weight */
    double adam_beta1, adam_beta2, adam_eps;
    int n_background; /* -1 -> max(64, N) */
    double init_scale;
    uint64_t seed;
    int threads;
    int exact; /* nonzero disables the 6-sigma render truncation */
} gst_fit_config;

GST_API void gst_fit_config_init(gst_fit_config* cfg);

typedef void (*gst_fit_iter_cb)(int iteration, double loss, void* user);

GST_API gst_status gst_scene_fit(const gst_image* img, const gst_annotations* ann,
                                 const gst_fit_config* cfg, gst_fit_iter_cb cb,
                                 void* user, gst_scene** out);
GST_API gst_status gst_scene_save(const gst_scene* scene, const char* path);
GST_API gst_status gst_scene_load(const char* path, gst_scene** out);
GST_API gst_status gst_scene_render(const gst_scene* scene, int channels, int exact,
                                    int threads, gst_image** out);
GST_API size_t gst_scene_size(const gst_scene* scene);
GST_API size_t gst_scene_foreground_count(const gst_scene* scene);
GST_API gst_status gst_scene_annotations(const gst_scene* scene, gst_annotations** out);
GST_API void gst_scene_free(gst_scene* scene);

/* --- transport kernels ------------------------------------------------------ */

typedef struct gst_kernel gst_kernel;

typedef struct gst_kernel_params {
    double cutoff_d;           /* background cut-off distance d */
    double truncation_radius;  /* <= 0 disables sparsification */
    int include_background;    /* 0 builds the annotation-only kernel */
} gst_kernel_params;

GST_API void gst_kernel_params_init(gst_kernel_params* params);

GST_API gst_status gst_kernel_build(const gst_scene* scene, const gst_annotations* ann,
                                    const gst_kernel_params* params, int threads,
                                    gst_kernel** out);
GST_API gst_status gst_kernel_build_heuristic(const gst_annotations* ann, double sigma,
                                              const gst_kernel_params* params,
                                              int threads, gst_kernel** out);
GST_API gst_status gst_kernel_save(const gst_kernel* k, const char* path);
GST_API gst_status gst_kernel_load(const char* path, gst_kernel** out);
GST_API uint64_t gst_kernel_rows(const gst_kernel* k);
GST_API uint64_t gst_kernel_targets(const gst_kernel* k);
GST_API uint64_t gst_kernel_nnz(const gst_kernel* k);
GST_API double gst_kernel_cutoff_d(const gst_kernel* k);
/* out must hold gst_kernel_targets(k) doubles. */
GST_API gst_status gst_kernel_push_forward(const gst_kernel* k, const gst_density* d,
                                           int threads, double* out);
GST_API gst_status gst_kernel_correspondence_image(const gst_kernel* k, int height,
                                                   int width, gst_image** out);
GST_API void gst_kernel_free(gst_kernel* k);

/* --- losses ------------------------------------------------------------------ */

/* value and per-pixel gradient of ||K' d - target||_1 with the standard
 * 0/1 annotation target; grad may be NULL. */
GST_API gst_status gst_loss_eval(const gst_kernel* k, const gst_density* d, int threads,
                                 double* value, double* grad);

/* --- synthetic data ----------------------------------------------------------- */

typedef struct gst_scene_spec {
    int height, width;
    int blob_count_min, blob_count_max;
    double blob_radius_min, blob_radius_max;
    double noise_level;
    uint64_t seed;
} gst_scene_spec;

GST_API void gst_scene_spec_init(gst_scene_spec* spec);
GST_API gst_status gst_generate_scene(const gst_scene_spec* spec, gst_image** out_img,
                                      gst_annotations** out_ann);

/* --- training ------------------------------------------------------------------ */

typedef struct gst_model gst_model;
typedef struct gst_dataset gst_dataset;
typedef struct gst_trainrun gst_trainrun;

typedef enum gst_loss_kind {
    GST_LOSS_GST = 0,
    GST_LOSS_L2 = 1,
    GST_LOSS_DMCOUNT = 2
} gst_loss_kind;

typedef struct gst_train_config {
    gst_loss_kind loss;
    int epochs;
    double learning_rate;
    double adam_beta1, adam_beta2, adam_eps;
    double sigma;        /* pseudo-gt width for the L2 baseline */
    double dm_epsilon;   /* Sinkhorn entropic regularization */
    int dm_iters;        /* Sinkhorn sweep budget per step */
    double dm_tol;
    uint64_t seed;
    int threads;
    int deterministic;
} gst_train_config;

typedef struct gst_step_record {
    int step;
    double loss;
    double count_err;
    double transport_ms;
    double total_ms;
    int inner_iterations;
} gst_step_record;

GST_API void gst_train_config_init(gst_train_config* cfg);

/* Manifest JSON: {"items":[{"image":..,"annotations":..,"kernel":..}, ...]};
 * "kernel" is optional and required only when training with GST_LOSS_GST. */
GST_API gst_status gst_dataset_load(const char* manifest_path, int need_kernels,
                                    gst_dataset** out);
GST_API size_t gst_dataset_size(const gst_dataset* ds);
GST_API size_t gst_dataset_annotation_count(const gst_dataset* ds, size_t item);
GST_API gst_status gst_dataset_image(const gst_dataset* ds, size_t item, gst_image** out);
GST_API gst_status gst_dataset_annotations(const gst_dataset* ds, size_t item,
                                           gst_annotations** out);
GST_API void gst_dataset_free(gst_dataset* ds);

GST_API gst_status gst_train(const gst_dataset* ds, const gst_train_config* cfg,
                             gst_model** out_model, gst_trainrun** out_run);
GST_API size_t gst_trainrun_steps(const gst_trainrun* run);
GST_API gst_status gst_trainrun_record(const gst_trainrun* run, size_t i,
                                       gst_step_record* out);
GST_API double gst_trainrun_mean_transport_ms(const gst_trainrun* run);
GST_API void gst_trainrun_free(gst_trainrun* run);

GST_API gst_status gst_model_create(uint64_t seed, gst_model** out);
GST_API gst_status gst_model_save(const gst_model* m, const char* path);
GST_API gst_status gst_model_load(const char* path, gst_model** out);
GST_API gst_status gst_model_forward(const gst_model* m, const gst_image* img,
                                     int threads, gst_density** out);
GST_API void gst_model_free(gst_model* m);

GST_API gst_status gst_evaluate(const gst_model* m, const gst_dataset* ds, int threads,
                                double* mae, double* rmse);

/* --- benchmarking ----------------------------------------------------------------- */

typedef struct gst_bench_config {
    const int* heights;      /* n_sizes entries */
    const int* widths;       /* n_sizes entries */
    size_t n_sizes;
    const int* point_counts; /* n_point_counts entries */
    size_t n_point_counts;
    int sinkhorn_k;
    double epsilon;
    int repeats;
    double sigma;
    double cutoff_d;
    uint64_t seed;
    int threads;
} gst_bench_config;

typedef struct gst_bench_row {
    int height, width, n_points;
    char method[32];
    double mean_ms, std_ms, kernel_build_ms;
} gst_bench_row;

/* rows must hold n_sizes * n_point_counts * 2 entries. */
GST_API gst_status gst_bench_run(const gst_bench_config* cfg, gst_bench_row* rows,
                                 size_t* n_rows);

/* --- audit oracles ------------------------------------------------------------------ */

/* Push-forward/count-discrepancy identity over exact nw-corner plans. */
GST_API gst_status gst_oracle_mass_identity(int trials, uint64_t seed,
                                            double* max_residual);
/* Kernel marginal audit on a persisted scene (annotation-only kernel,
 * uniform target marginal, generative pixel marginal). */
GST_API gst_status gst_oracle_marginals_scene(const char* scene_path, double cutoff_d,
                                              double* row_residual, double* col_residual);
/* Same audit over random interior scenes; reports the worst residuals. */
GST_API gst_status gst_oracle_marginals_random(int trials, uint64_t seed,
                                               double* max_row_residual,
                                               double* max_col_residual);
/* Log-domain Sinkhorn vs the exact 1D sorted-CDF transport cost. */
GST_API gst_status gst_oracle_ot1d(int trials, uint64_t seed, double* max_abs_err);
/* Sparse builder vs dense brute-force kernel, truncation disabled. */
GST_API gst_status gst_oracle_dense_equiv(int trials, uint64_t seed,
                                          double* max_entry_err);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* GST_GST_H */
