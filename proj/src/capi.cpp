#include "gst/gst.h"

#include <cstring>
#include <limits>
#include <string>

#include "gst/bench.hpp"
#include "gst/image.hpp"
#include "gst/kernel.hpp"
#include "gst/losses.hpp"
#include "gst/oracles.hpp"
#include "gst/splat.hpp"
#include "gst/trainer.hpp"
#include "gst/viz.hpp"

namespace {

thread_local std::string g_last_error;

template <typename Fn>
gst_status wrap(Fn&& fn) {
    try {
        fn();
        return GST_OK;
    } catch (const gst::IoError& e) {
        g_last_error = e.what();
        return GST_ERR_IO;
    } catch (const gst::ConfigError& e) {
        g_last_error = e.what();
        return GST_ERR_CONFIG;
    } catch (const gst::DataError& e) {
        g_last_error = e.what();
        return GST_ERR_DATA;
    } catch (const gst::MissingError& e) {
        g_last_error = e.what();
        return GST_ERR_MISSING;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return GST_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return GST_ERR_INTERNAL;
    }
}

gst_status invalid_arg(const char* msg) {
    g_last_error = msg;
    return GST_ERR_CONFIG;
}

} // namespace

struct gst_image {
    gst::Image v;
};
struct gst_annotations {
    gst::AnnotationSet v;
};
struct gst_density {
    gst::DensityMap v;
};
struct gst_scene {
    gst::GaussianScene v;
};
struct gst_kernel {
    gst::TransportKernel v;
};
struct gst_model {
    gst::ToyRegressor v;
};
struct gst_dataset {
    std::vector<gst::TrainItem> v;
};
struct gst_trainrun {
    gst::TrainRun v;
};

namespace {

gst::FitConfig fit_config_to_core(const gst_fit_config& c) {
    gst::FitConfig f;
    f.iterations = c.iterations;
    f.learning_rate = c.learning_rate;
    f.delta = c.delta;
    f.beta = c.beta;
    f.adam_beta1 = c.adam_beta1;
    f.adam_beta2 = c.adam_beta2;
    f.adam_eps = c.adam_eps;
    f.n_background = c.n_background;
    f.init_scale = c.init_scale;
    f.seed = c.seed;
    f.threads = c.threads;
    f.exact = c.exact != 0;
    return f;
}

gst::CorrespondenceParams kernel_params_to_core(const gst_kernel_params& p) {
    gst::CorrespondenceParams c;
    c.cutoff_d = p.cutoff_d;
    c.truncation_radius =
        p.truncation_radius <= 0.0 ? std::numeric_limits<double>::infinity()
                                   : p.truncation_radius;
    c.include_background = p.include_background != 0;
    return c;
}

} // namespace

extern "C" {

const char* gst_version(void) { return "1.0.0"; }

const char* gst_last_error(void) { return g_last_error.c_str(); }

/* --- images -------------------------------------------------------------- */

gst_status gst_image_load(const char* path, gst_image** out) {
    if (!path || !out) return invalid_arg("null argument");
    return wrap([&] { *out = new gst_image{gst::load_image(path)}; });
}

gst_status gst_image_save(const gst_image* img, const char* path) {
    if (!img || !path) return invalid_arg("null argument");
    return wrap([&] { gst::save_image(img->v, path); });
}

gst_status gst_image_create(int height, int width, int channels, const double* values,
                            gst_image** out) {
    if (!values || !out) return invalid_arg("null argument");
    return wrap([&] {
        gst::Image img(height, width, channels);
        img.values.assign(values, values + img.values.size());
        img.validate();
        *out = new gst_image{std::move(img)};
    });
}

int gst_image_height(const gst_image* img) { return img->v.height; }
int gst_image_width(const gst_image* img) { return img->v.width; }
int gst_image_channels(const gst_image* img) { return img->v.channels; }
const double* gst_image_data(const gst_image* img) { return img->v.values.data(); }
void gst_image_free(gst_image* img) { delete img; }

/* --- annotations ----------------------------------------------------------- */

gst_status gst_annotations_load(const char* path, int height, int width,
                                gst_annotations** out) {
    if (!path || !out) return invalid_arg("null argument");
    return wrap([&] {
        *out = new gst_annotations{gst::load_annotations(path, height, width)};
    });
}

gst_status gst_annotations_create(int height, int width, const double* row_col,
                                  size_t n_points, gst_annotations** out) {
    if (!out || (n_points > 0 && !row_col)) return invalid_arg("null argument");
    return wrap([&] {
        gst::AnnotationSet ann;
        ann.image_height = height;
        ann.image_width = width;
        for (size_t i = 0; i < n_points; ++i)
            ann.points.push_back({row_col[2 * i], row_col[2 * i + 1]});
        ann.validate();
        *out = new gst_annotations{std::move(ann)};
    });
}

gst_status gst_annotations_save(const gst_annotations* ann, const char* path) {
    if (!ann || !path) return invalid_arg("null argument");
    return wrap([&] { gst::save_annotations(ann->v, path); });
}

size_t gst_annotations_count(const gst_annotations* ann) { return ann->v.count(); }
const double* gst_annotations_points(const gst_annotations* ann) {
    return ann->v.points.empty() ? nullptr : ann->v.points.front().data();
}
int gst_annotations_height(const gst_annotations* ann) { return ann->v.image_height; }
int gst_annotations_width(const gst_annotations* ann) { return ann->v.image_width; }
void gst_annotations_free(gst_annotations* ann) { delete ann; }

/* --- density maps ------------------------------------------------------------ */

gst_status gst_density_create(int height, int width, const double* values,
                              gst_density** out) {
    if (!values || !out) return invalid_arg("null argument");
    return wrap([&] {
        gst::DensityMap d(height, width);
        d.values.assign(values, values + d.values.size());
        d.validate();
        *out = new gst_density{std::move(d)};
    });
}

int gst_density_height(const gst_density* d) { return d->v.height; }
int gst_density_width(const gst_density* d) { return d->v.width; }
const double* gst_density_data(const gst_density* d) { return d->v.values.data(); }
double gst_density_sum(const gst_density* d) { return gst::count(d->v); }

gst_status gst_density_heatmap(const gst_density* d, gst_image** out) {
    if (!d || !out) return invalid_arg("null argument");
    return wrap([&] { *out = new gst_image{gst::render_heatmap(d->v)}; });
}

gst_status gst_pseudo_gt(const gst_annotations* ann, double sigma, gst_density** out) {
    if (!ann || !out) return invalid_arg("null argument");
    return wrap([&] {
        *out = new gst_density{gst::make_pseudo_gt(ann->v, sigma, ann->v.image_height,
                                                   ann->v.image_width)};
    });
}

void gst_density_free(gst_density* d) { delete d; }

/* --- splatting ----------------------------------------------------------------- */

void gst_fit_config_init(gst_fit_config* cfg) {
    const gst::FitConfig d;
    cfg->iterations = d.iterations;
    cfg->learning_rate = d.learning_rate;
    cfg->delta = d.delta;
    cfg->beta = d.beta;
    cfg->adam_beta1 = d.adam_beta1;
    cfg->adam_beta2 = d.adam_beta2;
    cfg->adam_eps = d.adam_eps;
    cfg->n_background = d.n_background;
    cfg->init_scale = d.init_scale;
    cfg->seed = d.seed;
    cfg->threads = d.threads;
    cfg->exact = d.exact ? 1 : 0;
}

gst_status gst_scene_fit(const gst_image* img, const gst_annotations* ann,
                         const gst_fit_config* cfg, gst_fit_iter_cb cb, void* user,
                         gst_scene** out) {
    if (!img || !ann || !cfg || !out) return invalid_arg("null argument");
    return wrap([&] {
        std::vector<double> curve;
        gst::GaussianScene scene =
            gst::fit(img->v, ann->v, fit_config_to_core(*cfg), cb ? &curve : nullptr);
        if (cb)
            for (size_t i = 0; i < curve.size(); ++i)
                cb(static_cast<int>(i + 1), curve[i], user);
        *out = new gst_scene{std::move(scene)};
    });
}

gst_status gst_scene_save(const gst_scene* scene, const char* path) {
    if (!scene || !path) return invalid_arg("null argument");
    return wrap([&] { gst::save_scene(scene->v, path); });
}

gst_status gst_scene_load(const char* path, gst_scene** out) {
    if (!path || !out) return invalid_arg("null argument");
    return wrap([&] { *out = new gst_scene{gst::load_scene(path)}; });
}

gst_status gst_scene_render(const gst_scene* scene, int channels, int exact, int threads,
                            gst_image** out) {
    if (!scene || !out) return invalid_arg("null argument");
    return wrap([&] {
        *out = new gst_image{gst::render(scene->v, channels, exact != 0, threads)};
    });
}

size_t gst_scene_size(const gst_scene* scene) { return scene->v.gaussians.size(); }
size_t gst_scene_foreground_count(const gst_scene* scene) {
    return scene->v.foreground_count();
}

gst_status gst_scene_annotations(const gst_scene* scene, gst_annotations** out) {
    if (!scene || !out) return invalid_arg("null argument");
    return wrap([&] {
        *out = new gst_annotations{gst::annotations_from_scene(scene->v)};
    });
}

void gst_scene_free(gst_scene* scene) { delete scene; }

/* --- kernels ----------------------------------------------------------------------- */

void gst_kernel_params_init(gst_kernel_params* params) {
    const gst::CorrespondenceParams d;
    params->cutoff_d = d.cutoff_d;
    params->truncation_radius = d.truncation_radius;
    params->include_background = d.include_background ? 1 : 0;
}

gst_status gst_kernel_build(const gst_scene* scene, const gst_annotations* ann,
                            const gst_kernel_params* params, int threads,
                            gst_kernel** out) {
    if (!scene || !ann || !params || !out) return invalid_arg("null argument");
    return wrap([&] {
        *out = new gst_kernel{gst::build_kernel(scene->v, ann->v,
                                                kernel_params_to_core(*params), threads)};
    });
}

gst_status gst_kernel_build_heuristic(const gst_annotations* ann, double sigma,
                                      const gst_kernel_params* params, int threads,
                                      gst_kernel** out) {
    if (!ann || !params || !out) return invalid_arg("null argument");
    return wrap([&] {
        *out = new gst_kernel{gst::build_heuristic_kernel(
            ann->v, sigma, ann->v.image_height, ann->v.image_width,
            kernel_params_to_core(*params), threads)};
    });
}

gst_status gst_kernel_save(const gst_kernel* k, const char* path) {
    if (!k || !path) return invalid_arg("null argument");
    return wrap([&] { gst::save_kernel(k->v, path); });
}

gst_status gst_kernel_load(const char* path, gst_kernel** out) {
    if (!path || !out) return invalid_arg("null argument");
    return wrap([&] { *out = new gst_kernel{gst::load_kernel(path)}; });
}

uint64_t gst_kernel_rows(const gst_kernel* k) { return k->v.n_pixels; }
uint64_t gst_kernel_targets(const gst_kernel* k) { return k->v.n_targets; }
uint64_t gst_kernel_nnz(const gst_kernel* k) { return k->v.nnz(); }
double gst_kernel_cutoff_d(const gst_kernel* k) { return k->v.cutoff_d; }

gst_status gst_kernel_push_forward(const gst_kernel* k, const gst_density* d, int threads,
                                   double* out) {
    if (!k || !d || !out) return invalid_arg("null argument");
    return wrap([&] {
        const auto pushed = gst::push_forward(k->v, d->v, threads);
        std::memcpy(out, pushed.data(), pushed.size() * sizeof(double));
    });
}

gst_status gst_kernel_correspondence_image(const gst_kernel* k, int height, int width,
                                           gst_image** out) {
    if (!k || !out) return invalid_arg("null argument");
    return wrap([&] {
        *out = new gst_image{gst::render_correspondence(k->v, height, width)};
    });
}

void gst_kernel_free(gst_kernel* k) { delete k; }

/* --- losses --------------------------------------------------------------------------- */

gst_status gst_loss_eval(const gst_kernel* k, const gst_density* d, int threads,
                         double* value, double* grad) {
    if (!k || !d || !value) return invalid_arg("null argument");
    return wrap([&] {
        const auto target = gst::annotation_target(k->v.n_targets - 1);
        const gst::LossResult lr = gst::gst_loss(k->v, d->v, target, threads);
        *value = lr.value;
        if (grad) std::memcpy(grad, lr.grad.data(), lr.grad.size() * sizeof(double));
    });
}

/* --- synthetic data -------------------------------------------------------------------- */

void gst_scene_spec_init(gst_scene_spec* spec) {
    const gst::SceneSpec d;
    spec->height = d.height;
    spec->width = d.width;
    spec->blob_count_min = d.blob_count_min;
    spec->blob_count_max = d.blob_count_max;
    spec->blob_radius_min = d.blob_radius_min;
    spec->blob_radius_max = d.blob_radius_max;
    spec->noise_level = d.noise_level;
    spec->seed = d.seed;
}

gst_status gst_generate_scene(const gst_scene_spec* spec, gst_image** out_img,
                              gst_annotations** out_ann) {
    if (!spec || !out_img || !out_ann) return invalid_arg("null argument");
    return wrap([&] {
        gst::SceneSpec s;
        s.height = spec->height;
        s.width = spec->width;
        s.blob_count_min = spec->blob_count_min;
        s.blob_count_max = spec->blob_count_max;
        s.blob_radius_min = spec->blob_radius_min;
        s.blob_radius_max = spec->blob_radius_max;
        s.noise_level = spec->noise_level;
        s.seed = spec->seed;
        auto [img, ann] = gst::generate_scene(s);
        *out_img = new gst_image{std::move(img)};
        *out_ann = new gst_annotations{std::move(ann)};
    });
}

/* --- training ----------------------------------------------------------------------------- */

void gst_train_config_init(gst_train_config* cfg) {
    const gst::TrainConfig d;
    cfg->loss = GST_LOSS_GST;
    cfg->epochs = d.epochs;
    cfg->learning_rate = d.learning_rate;
    cfg->adam_beta1 = d.adam_beta1;
    cfg->adam_beta2 = d.adam_beta2;
    cfg->adam_eps = d.adam_eps;
    cfg->sigma = d.sigma;
    cfg->dm_epsilon = d.dmcount.epsilon;
    cfg->dm_iters = d.dmcount.max_iters;
    cfg->dm_tol = d.dmcount.tol;
    cfg->seed = d.seed;
    cfg->threads = d.threads;
    cfg->deterministic = d.deterministic ? 1 : 0;
}

gst_status gst_dataset_load(const char* manifest_path, int need_kernels,
                            gst_dataset** out) {
    if (!manifest_path || !out) return invalid_arg("null argument");
    return wrap([&] {
        *out = new gst_dataset{gst::load_dataset(manifest_path, need_kernels != 0)};
    });
}

size_t gst_dataset_size(const gst_dataset* ds) { return ds->v.size(); }

size_t gst_dataset_annotation_count(const gst_dataset* ds, size_t item) {
    return ds->v[item].annotations.count();
}

gst_status gst_dataset_image(const gst_dataset* ds, size_t item, gst_image** out) {
    if (!ds || !out || item >= ds->v.size()) return invalid_arg("bad dataset index");
    return wrap([&] { *out = new gst_image{ds->v[item].image}; });
}

gst_status gst_dataset_annotations(const gst_dataset* ds, size_t item,
                                   gst_annotations** out) {
    if (!ds || !out || item >= ds->v.size()) return invalid_arg("bad dataset index");
    return wrap([&] { *out = new gst_annotations{ds->v[item].annotations}; });
}

void gst_dataset_free(gst_dataset* ds) { delete ds; }

gst_status gst_train(const gst_dataset* ds, const gst_train_config* cfg,
                     gst_model** out_model, gst_trainrun** out_run) {
    if (!ds || !cfg || !out_model) return invalid_arg("null argument");
    return wrap([&] {
        gst::TrainConfig c;
        switch (cfg->loss) {
            case GST_LOSS_GST: c.loss = gst::LossKind::Gst; break;
            case GST_LOSS_L2: c.loss = gst::LossKind::L2; break;
            case GST_LOSS_DMCOUNT: c.loss = gst::LossKind::DmCount; break;
            default: throw gst::ConfigError("unknown loss kind");
        }
        c.epochs = cfg->epochs;
        c.learning_rate = cfg->learning_rate;
        c.adam_beta1 = cfg->adam_beta1;
        c.adam_beta2 = cfg->adam_beta2;
        c.adam_eps = cfg->adam_eps;
        c.sigma = cfg->sigma;
        c.dmcount.epsilon = cfg->dm_epsilon;
        c.dmcount.max_iters = cfg->dm_iters;
        c.dmcount.tol = cfg->dm_tol;
        c.seed = cfg->seed;
        c.threads = cfg->threads;
        c.deterministic = cfg->deterministic != 0;
        gst::TrainRun run = gst::train(ds->v, c);
        *out_model = new gst_model{run.model};
        if (out_run) *out_run = new gst_trainrun{std::move(run)};
    });
}

size_t gst_trainrun_steps(const gst_trainrun* run) { return run->v.records.size(); }

gst_status gst_trainrun_record(const gst_trainrun* run, size_t i, gst_step_record* out) {
    if (!run || !out || i >= run->v.records.size())
        return invalid_arg("bad record index");
    const gst::StepRecord& r = run->v.records[i];
    out->step = r.step;
    out->loss = r.loss;
    out->count_err = r.count_err;
    out->transport_ms = r.transport_ms;
    out->total_ms = r.total_ms;
    out->inner_iterations = r.inner_iterations;
    return GST_OK;
}

double gst_trainrun_mean_transport_ms(const gst_trainrun* run) {
    return run->v.mean_transport_ms;
}

void gst_trainrun_free(gst_trainrun* run) { delete run; }

gst_status gst_model_create(uint64_t seed, gst_model** out) {
    if (!out) return invalid_arg("null argument");
    return wrap([&] { *out = new gst_model{gst::ToyRegressor::init(seed)}; });
}

gst_status gst_model_save(const gst_model* m, const char* path) {
    if (!m || !path) return invalid_arg("null argument");
    return wrap([&] { gst::save_model(m->v, path); });
}

gst_status gst_model_load(const char* path, gst_model** out) {
    if (!path || !out) return invalid_arg("null argument");
    return wrap([&] { *out = new gst_model{gst::load_model(path)}; });
}

gst_status gst_model_forward(const gst_model* m, const gst_image* img, int threads,
                             gst_density** out) {
    if (!m || !img || !out) return invalid_arg("null argument");
    return wrap([&] { *out = new gst_density{gst::forward(m->v, img->v, threads)}; });
}

void gst_model_free(gst_model* m) { delete m; }

gst_status gst_evaluate(const gst_model* m, const gst_dataset* ds, int threads,
                        double* mae, double* rmse) {
    if (!m || !ds || !mae || !rmse) return invalid_arg("null argument");
    return wrap([&] {
        const gst::EvalResult r = gst::evaluate(m->v, ds->v, threads);
        *mae = r.mae;
        *rmse = r.rmse;
    });
}

/* --- benchmarking ---------------------------------------------------------------------------- */

gst_status gst_bench_run(const gst_bench_config* cfg, gst_bench_row* rows,
                         size_t* n_rows) {
    if (!cfg || !rows || !n_rows) return invalid_arg("null argument");
    return wrap([&] {
        gst::BenchConfig c;
        for (size_t i = 0; i < cfg->n_sizes; ++i)
            c.sizes.emplace_back(cfg->heights[i], cfg->widths[i]);
        c.point_counts.assign(cfg->point_counts, cfg->point_counts + cfg->n_point_counts);
        c.sinkhorn_k = cfg->sinkhorn_k;
        c.epsilon = cfg->epsilon;
        c.repeats = cfg->repeats;
        c.sigma = cfg->sigma;
        c.cutoff_d = cfg->cutoff_d;
        c.seed = cfg->seed;
        c.threads = cfg->threads;
        const auto result = gst::run_bench(c);
        for (size_t i = 0; i < result.size(); ++i) {
            gst_bench_row& r = rows[i];
            r.height = result[i].height;
            r.width = result[i].width;
            r.n_points = result[i].n_points;
            std::snprintf(r.method, sizeof(r.method), "%s", result[i].method.c_str());
            r.mean_ms = result[i].mean_ms;
            r.std_ms = result[i].std_ms;
            r.kernel_build_ms = result[i].kernel_build_ms;
        }
        *n_rows = result.size();
    });
}

/* --- audit oracles ------------------------------------------------------------------------------ */

gst_status gst_oracle_mass_identity(int trials, uint64_t seed, double* max_residual) {
    if (!max_residual) return invalid_arg("null argument");
    return wrap([&] { *max_residual = gst::mass_identity_audit(trials, seed); });
}

gst_status gst_oracle_marginals_scene(const char* scene_path, double cutoff_d,
                                      double* row_residual, double* col_residual) {
    if (!scene_path || !row_residual || !col_residual)
        return invalid_arg("null argument");
    return wrap([&] {
        const gst::GaussianScene scene = gst::load_scene(scene_path);
        const gst::AnnotationSet ann = gst::annotations_from_scene(scene);
        const gst::MarginalAuditResult r = gst::marginal_audit(scene, ann, cutoff_d);
        *row_residual = r.row_residual;
        *col_residual = r.col_residual;
    });
}

gst_status gst_oracle_marginals_random(int trials, uint64_t seed,
                                       double* max_row_residual,
                                       double* max_col_residual) {
    if (!max_row_residual || !max_col_residual) return invalid_arg("null argument");
    return wrap([&] {
        const gst::MarginalAuditResult r = gst::marginal_audit_random(trials, seed);
        *max_row_residual = std::max(r.row_residual, r.max_row_sum_err);
        *max_col_residual = r.col_residual;
    });
}

gst_status gst_oracle_ot1d(int trials, uint64_t seed, double* max_abs_err) {
    if (!max_abs_err) return invalid_arg("null argument");
    return wrap([&] { *max_abs_err = gst::ot1d_audit(trials, seed); });
}

gst_status gst_oracle_dense_equiv(int trials, uint64_t seed, double* max_entry_err) {
    if (!max_entry_err) return invalid_arg("null argument");
    return wrap([&] { *max_entry_err = gst::dense_equivalence_audit(trials, seed); });
}

} // extern "C"
