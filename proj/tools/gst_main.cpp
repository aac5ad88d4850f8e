// gst - command line front end over the shared-library C API.
//
// Exit codes: 0 success, 2 I/O error, 3 invalid configuration,
// 4 data-consistency error, 5 missing dependency.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gst/gst.h"

namespace {

int status_to_exit(gst_status s) {
    switch (s) {
        case GST_OK: return 0;
        case GST_ERR_IO: return 2;
        case GST_ERR_CONFIG: return 3;
        case GST_ERR_DATA: return 4;
        case GST_ERR_MISSING: return 5;
        default: return 1;
    }
}

[[noreturn]] void fail(gst_status s) {
    std::cerr << "error: " << gst_last_error() << "\n";
    std::exit(status_to_exit(s));
}

void check(gst_status s) {
    if (s != GST_OK) fail(s);
}

[[noreturn]] void fail_config(const std::string& msg) {
    std::cerr << "error: " << msg << "\n";
    std::exit(3);
}

[[noreturn]] void fail_io(const std::string& msg) {
    std::cerr << "error: " << msg << "\n";
    std::exit(2);
}

// Shortest round-trip decimal; keeps CSV output byte-stable.
std::string fmt(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) fail_io("cannot write file: " + path);
    out << text;
    if (!out) fail_io("cannot write file: " + path);
}

// Config file support: flags > config JSON > defaults. Registered options
// that were not given on the command line are re-assigned from the file.
struct ConfigBinder {
    CLI::App* app;
    std::vector<std::function<void(const nlohmann::json&)>> appliers;

    template <typename T>
    CLI::Option* add(const std::string& name, T& var, const std::string& help) {
        CLI::Option* opt = app->add_option(name, var, help);
        const std::string key = name.substr(2); // strip leading --
        appliers.push_back([opt, key, &var](const nlohmann::json& j) {
            if (opt->count() == 0 && j.contains(key)) var = j.at(key).get<T>();
        });
        return opt;
    }

    CLI::Option* add_flag(const std::string& name, bool& var, const std::string& help) {
        CLI::Option* opt = app->add_flag(name, var, help);
        const std::string key = name.substr(2);
        appliers.push_back([opt, key, &var](const nlohmann::json& j) {
            if (opt->count() == 0 && j.contains(key)) var = j.at(key).get<bool>();
        });
        return opt;
    }

    void apply(const std::string& config_path) {
        if (config_path.empty()) return;
        std::ifstream in(config_path);
        if (!in) fail_io("missing file: " + config_path);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const std::exception& e) {
            fail_config(std::string("config parse error: ") + e.what());
        }
        for (auto& f : appliers) f(j);
    }
};

struct Deleter {
    void operator()(gst_image* p) const { gst_image_free(p); }
    void operator()(gst_annotations* p) const { gst_annotations_free(p); }
    void operator()(gst_density* p) const { gst_density_free(p); }
    void operator()(gst_scene* p) const { gst_scene_free(p); }
    void operator()(gst_kernel* p) const { gst_kernel_free(p); }
    void operator()(gst_model* p) const { gst_model_free(p); }
    void operator()(gst_dataset* p) const { gst_dataset_free(p); }
    void operator()(gst_trainrun* p) const { gst_trainrun_free(p); }
};
template <typename T>
using Handle = std::unique_ptr<T, Deleter>;

// --- fit ---------------------------------------------------------------------

struct FitArgs {
    std::string image, annotations, out_scene, out_render, out_loss_csv, config;
    gst_fit_config cfg{};
    bool deterministic = false;
};

int cmd_fit(FitArgs& a) {
    if (a.deterministic) a.cfg.threads = 1;

    gst_image* img_raw = nullptr;
    check(gst_image_load(a.image.c_str(), &img_raw));
    Handle<gst_image> img(img_raw);
    gst_annotations* ann_raw = nullptr;
    check(gst_annotations_load(a.annotations.c_str(), gst_image_height(img.get()),
                               gst_image_width(img.get()), &ann_raw));
    Handle<gst_annotations> ann(ann_raw);

    std::string curve = "iteration,loss\n";
    auto cb = [](int it, double loss, void* user) {
        auto* s = static_cast<std::string*>(user);
        *s += std::to_string(it);
        *s += ",";
        *s += fmt(loss);
        *s += "\n";
    };
    gst_scene* scene_raw = nullptr;
    check(gst_scene_fit(img.get(), ann.get(), &a.cfg,
                        a.out_loss_csv.empty() ? nullptr : +cb,
                        a.out_loss_csv.empty() ? nullptr : &curve, &scene_raw));
    Handle<gst_scene> scene(scene_raw);

    check(gst_scene_save(scene.get(), a.out_scene.c_str()));
    if (!a.out_render.empty()) {
        gst_image* rendered_raw = nullptr;
        check(gst_scene_render(scene.get(), gst_image_channels(img.get()), a.cfg.exact,
                               a.cfg.threads, &rendered_raw));
        Handle<gst_image> rendered(rendered_raw);
        check(gst_image_save(rendered.get(), a.out_render.c_str()));
    }
    if (!a.out_loss_csv.empty()) write_text(a.out_loss_csv, curve);

    std::cout << "scene: " << a.out_scene << " ("
              << gst_scene_foreground_count(scene.get()) << " foreground / "
              << gst_scene_size(scene.get()) << " total gaussians)\n";
    return 0;
}

// --- build-kernel ---------------------------------------------------------------

struct KernelArgs {
    std::string scene, annotations, out, out_viz, config;
    gst_kernel_params params{};
    bool heuristic = false;
    double sigma = 8.0;
    int height = 0, width = 0;
    int threads = 1;
    bool deterministic = false;
};

int cmd_build_kernel(KernelArgs& a) {
    if (a.deterministic) a.threads = 1;

    Handle<gst_scene> scene;
    Handle<gst_annotations> ann;
    int height = a.height, width = a.width;

    if (!a.scene.empty()) {
        gst_scene* s = nullptr;
        check(gst_scene_load(a.scene.c_str(), &s));
        scene.reset(s);
    } else if (!a.heuristic) {
        fail_config("build-kernel needs --scene (or --heuristic)");
    }

    if (!a.annotations.empty()) {
        if (height <= 0 || width <= 0) {
            if (!scene) fail_config("--height/--width required with --heuristic");
        }
        gst_annotations* an = nullptr;
        if (scene) {
            gst_annotations* from_scene = nullptr;
            check(gst_scene_annotations(scene.get(), &from_scene));
            Handle<gst_annotations> tmp(from_scene);
            height = gst_annotations_height(tmp.get());
            width = gst_annotations_width(tmp.get());
        }
        check(gst_annotations_load(a.annotations.c_str(), height, width, &an));
        ann.reset(an);
    } else if (scene) {
        gst_annotations* an = nullptr;
        check(gst_scene_annotations(scene.get(), &an));
        ann.reset(an);
        height = gst_annotations_height(ann.get());
        width = gst_annotations_width(ann.get());
    } else {
        fail_config("build-kernel needs --annotations with --heuristic");
    }

    gst_kernel* k_raw = nullptr;
    if (a.heuristic) {
        check(gst_kernel_build_heuristic(ann.get(), a.sigma, &a.params, a.threads, &k_raw));
    } else {
        check(gst_kernel_build(scene.get(), ann.get(), &a.params, a.threads, &k_raw));
    }
    Handle<gst_kernel> kernel(k_raw);
    check(gst_kernel_save(kernel.get(), a.out.c_str()));

    if (!a.out_viz.empty()) {
        gst_image* viz_raw = nullptr;
        check(gst_kernel_correspondence_image(kernel.get(), height, width, &viz_raw));
        Handle<gst_image> viz(viz_raw);
        check(gst_image_save(viz.get(), a.out_viz.c_str()));
    }

    std::cout << "kernel: " << a.out << " (" << gst_kernel_rows(kernel.get()) << " x "
              << gst_kernel_targets(kernel.get()) << ", nnz " << gst_kernel_nnz(kernel.get())
              << ")\n";
    return 0;
}

// --- train / eval ------------------------------------------------------------------

struct TrainArgs {
    std::string manifest, loss = "gst", out_csv, out_metrics, out_model, heatmap_dir,
                config;
    gst_train_config cfg{};
    bool deterministic = false;
};

void write_metrics(const std::string& path, double mae, double rmse,
                   double mean_transport_ms) {
    nlohmann::json j;
    j["mae"] = mae;
    j["rmse"] = rmse;
    j["mean_transport_ms"] = mean_transport_ms;
    write_text(path, j.dump(2) + "\n");
}

void write_heatmaps(const gst_dataset* ds, const gst_model* model, int threads,
                    const std::string& dir) {
    std::filesystem::create_directories(dir);
    for (size_t i = 0; i < gst_dataset_size(ds); ++i) {
        gst_image* img_raw = nullptr;
        check(gst_dataset_image(ds, i, &img_raw));
        Handle<gst_image> img(img_raw);
        gst_density* d_raw = nullptr;
        check(gst_model_forward(model, img.get(), threads, &d_raw));
        Handle<gst_density> d(d_raw);
        gst_image* heat_raw = nullptr;
        check(gst_density_heatmap(d.get(), &heat_raw));
        Handle<gst_image> heat(heat_raw);
        char name[32];
        std::snprintf(name, sizeof(name), "density_%04zu.png", i);
        check(gst_image_save(heat.get(), (dir + "/" + name).c_str()));
    }
}

gst_loss_kind parse_loss(const std::string& s) {
    if (s == "gst") return GST_LOSS_GST;
    if (s == "l2") return GST_LOSS_L2;
    if (s == "dmcount") return GST_LOSS_DMCOUNT;
    fail_config("unknown loss kind: " + s);
}

int cmd_train(TrainArgs& a) {
    a.cfg.loss = parse_loss(a.loss);
    a.cfg.deterministic = a.deterministic ? 1 : 0;
    if (a.deterministic) a.cfg.threads = 1;

    gst_dataset* ds_raw = nullptr;
    check(gst_dataset_load(a.manifest.c_str(), a.cfg.loss == GST_LOSS_GST ? 1 : 0,
                           &ds_raw));
    Handle<gst_dataset> ds(ds_raw);

    gst_model* model_raw = nullptr;
    gst_trainrun* run_raw = nullptr;
    check(gst_train(ds.get(), &a.cfg, &model_raw, &run_raw));
    Handle<gst_model> model(model_raw);
    Handle<gst_trainrun> run(run_raw);

    const bool zero_times = a.deterministic;
    if (!a.out_csv.empty()) {
        std::string csv = "step,loss,count_err,transport_ms,total_ms\n";
        for (size_t i = 0; i < gst_trainrun_steps(run.get()); ++i) {
            gst_step_record r{};
            check(gst_trainrun_record(run.get(), i, &r));
            csv += std::to_string(r.step);
            csv += ",";
            csv += fmt(r.loss);
            csv += ",";
            csv += fmt(r.count_err);
            csv += ",";
            csv += fmt(zero_times ? 0.0 : r.transport_ms);
            csv += ",";
            csv += fmt(zero_times ? 0.0 : r.total_ms);
            csv += "\n";
        }
        write_text(a.out_csv, csv);
    }

    double mae = 0.0, rmse = 0.0;
    check(gst_evaluate(model.get(), ds.get(), a.cfg.threads, &mae, &rmse));
    if (!a.out_metrics.empty())
        write_metrics(a.out_metrics, mae, rmse,
                      zero_times ? 0.0 : gst_trainrun_mean_transport_ms(run.get()));
    if (!a.out_model.empty()) check(gst_model_save(model.get(), a.out_model.c_str()));
    if (!a.heatmap_dir.empty())
        write_heatmaps(ds.get(), model.get(), a.cfg.threads, a.heatmap_dir);

    std::cout << "train: " << gst_trainrun_steps(run.get()) << " steps, final mae "
              << fmt(mae) << "\n";
    return 0;
}

struct EvalArgs {
    std::string manifest, model, out_metrics, heatmap_dir, config;
    bool pseudo_gt = false;
    double sigma = 8.0;
    int threads = 1;
    bool deterministic = false;
};

int cmd_eval(EvalArgs& a) {
    if (a.deterministic) a.threads = 1;
    gst_dataset* ds_raw = nullptr;
    check(gst_dataset_load(a.manifest.c_str(), 0, &ds_raw));
    Handle<gst_dataset> ds(ds_raw);
    const size_t n = gst_dataset_size(ds.get());
    if (n == 0) fail_config("empty dataset");

    double mae = 0.0, rmse = 0.0;
    if (a.pseudo_gt) {
        // Reference model: the pseudo ground truth of the true annotations.
        double abs_sum = 0.0, sq_sum = 0.0;
        for (size_t i = 0; i < n; ++i) {
            gst_annotations* ann_raw = nullptr;
            check(gst_dataset_annotations(ds.get(), i, &ann_raw));
            Handle<gst_annotations> ann(ann_raw);
            gst_density* d_raw = nullptr;
            check(gst_pseudo_gt(ann.get(), a.sigma, &d_raw));
            Handle<gst_density> d(d_raw);
            const double err = gst_density_sum(d.get()) -
                               static_cast<double>(gst_annotations_count(ann.get()));
            abs_sum += std::fabs(err);
            sq_sum += err * err;
            if (!a.heatmap_dir.empty()) {
                std::filesystem::create_directories(a.heatmap_dir);
                gst_image* heat_raw = nullptr;
                check(gst_density_heatmap(d.get(), &heat_raw));
                Handle<gst_image> heat(heat_raw);
                char name[32];
                std::snprintf(name, sizeof(name), "density_%04zu.png", i);
                check(gst_image_save(heat.get(), (a.heatmap_dir + "/" + name).c_str()));
            }
        }
        mae = abs_sum / static_cast<double>(n);
        rmse = std::sqrt(sq_sum / static_cast<double>(n));
    } else {
        if (a.model.empty()) fail_config("eval needs --model or --pseudo-gt");
        gst_model* model_raw = nullptr;
        check(gst_model_load(a.model.c_str(), &model_raw));
        Handle<gst_model> model(model_raw);
        check(gst_evaluate(model.get(), ds.get(), a.threads, &mae, &rmse));
        if (!a.heatmap_dir.empty())
            write_heatmaps(ds.get(), model.get(), a.threads, a.heatmap_dir);
    }

    if (!a.out_metrics.empty()) write_metrics(a.out_metrics, mae, rmse, 0.0);
    std::cout << "eval: mae " << fmt(mae) << " rmse " << fmt(rmse) << "\n";
    return 0;
}

// --- bench -----------------------------------------------------------------------

struct BenchArgs {
    std::string sizes = "128x128", points = "50", out, config;
    int k = 100;
    double epsilon = 0.01;
    int repeats = 10;
    double sigma = 8.0;
    double cutoff_d = 3.0;
    uint64_t seed = 0;
    int threads = 1;
    bool deterministic = false;
};

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, sep))
        if (!tok.empty()) out.push_back(tok);
    return out;
}

int cmd_bench(BenchArgs& a) {
    if (a.deterministic) a.threads = 1;
    std::vector<int> heights, widths, points;
    for (const auto& tok : split(a.sizes, ',')) {
        const auto hw = split(tok, 'x');
        if (hw.size() != 2) fail_config("sizes must look like 64x64,128x128");
        heights.push_back(std::stoi(hw[0]));
        widths.push_back(std::stoi(hw[1]));
    }
    for (const auto& tok : split(a.points, ',')) points.push_back(std::stoi(tok));

    gst_bench_config cfg{};
    cfg.heights = heights.data();
    cfg.widths = widths.data();
    cfg.n_sizes = heights.size();
    cfg.point_counts = points.data();
    cfg.n_point_counts = points.size();
    cfg.sinkhorn_k = a.k;
    cfg.epsilon = a.epsilon;
    cfg.repeats = a.repeats;
    cfg.sigma = a.sigma;
    cfg.cutoff_d = a.cutoff_d;
    cfg.seed = a.seed;
    cfg.threads = a.threads;

    std::vector<gst_bench_row> rows(heights.size() * points.size() * 2);
    size_t n_rows = 0;
    check(gst_bench_run(&cfg, rows.data(), &n_rows));

    std::string csv = "height,width,n_points,method,mean_ms,std_ms,kernel_build_ms\n";
    for (size_t i = 0; i < n_rows; ++i) {
        const auto& r = rows[i];
        csv += std::to_string(r.height) + "," + std::to_string(r.width) + "," +
               std::to_string(r.n_points) + "," + r.method + "," +
               fmt(a.deterministic ? 0.0 : r.mean_ms) + "," +
               fmt(a.deterministic ? 0.0 : r.std_ms) + "," +
               fmt(a.deterministic ? 0.0 : r.kernel_build_ms) + "\n";
    }
    if (!a.out.empty())
        write_text(a.out, csv);
    else
        std::cout << csv;
    return 0;
}

// --- oracle -----------------------------------------------------------------------

struct OracleArgs {
    std::string name;
    int trials = 0; // 0 -> per-oracle default
    uint64_t seed = 7;
    std::string scene;
    double cutoff_d = 3.0;
};

int cmd_oracle(OracleArgs& a) {
    bool pass = false;
    if (a.name == "appendix-a" || a.name == "mass-identity") {
        const int trials = a.trials > 0 ? a.trials : 1000;
        double res = 0.0;
        check(gst_oracle_mass_identity(trials, a.seed, &res));
        pass = res < 1e-12;
        std::cout << a.name << ": trials " << trials << ", max residual " << fmt(res)
                  << " -> " << (pass ? "PASS" : "FAIL") << "\n";
    } else if (a.name == "theorem1" || a.name == "marginals") {
        double row = 0.0, col = 0.0;
        if (!a.scene.empty()) {
            check(gst_oracle_marginals_scene(a.scene.c_str(), a.cutoff_d, &row, &col));
        } else {
            const int trials = a.trials > 0 ? a.trials : 20;
            check(gst_oracle_marginals_random(trials, a.seed, &row, &col));
        }
        pass = row <= 1e-12 && col < 1e-6;
        std::cout << a.name << ": rowResidual " << fmt(row) << ", colResidual "
                  << fmt(col) << " -> " << (pass ? "PASS" : "FAIL") << "\n";
    } else if (a.name == "ot-1d") {
        const int trials = a.trials > 0 ? a.trials : 50;
        double err = 0.0;
        check(gst_oracle_ot1d(trials, a.seed, &err));
        pass = err < 1e-3;
        std::cout << a.name << ": trials " << trials << ", max |entropic - exact| "
                  << fmt(err) << " -> " << (pass ? "PASS" : "FAIL") << "\n";
    } else if (a.name == "dense-equiv") {
        const int trials = a.trials > 0 ? a.trials : 20;
        double err = 0.0;
        check(gst_oracle_dense_equiv(trials, a.seed, &err));
        pass = err < 1e-12;
        std::cout << a.name << ": trials " << trials << ", max entry error " << fmt(err)
                  << " -> " << (pass ? "PASS" : "FAIL") << "\n";
    } else {
        fail_config("unknown oracle: " + a.name);
    }
    return pass ? 0 : 1;
}

// --- gen-corpus -----------------------------------------------------------------------

struct GenArgs {
    std::string out_dir;
    int count = 10;
    gst_scene_spec spec{};
    uint64_t seed = 0;
    std::string config;
};

int cmd_gen_corpus(GenArgs& a) {
    std::filesystem::create_directories(a.out_dir);
    nlohmann::json manifest;
    manifest["items"] = nlohmann::json::array();
    for (int i = 0; i < a.count; ++i) {
        gst_scene_spec spec = a.spec;
        spec.seed = a.seed + static_cast<uint64_t>(i);
        gst_image* img_raw = nullptr;
        gst_annotations* ann_raw = nullptr;
        check(gst_generate_scene(&spec, &img_raw, &ann_raw));
        Handle<gst_image> img(img_raw);
        Handle<gst_annotations> ann(ann_raw);

        char img_name[32], ann_name[32];
        std::snprintf(img_name, sizeof(img_name), "image_%04d.png", i);
        std::snprintf(ann_name, sizeof(ann_name), "points_%04d.json", i);
        check(gst_image_save(img.get(), (a.out_dir + "/" + img_name).c_str()));
        check(gst_annotations_save(ann.get(), (a.out_dir + "/" + ann_name).c_str()));

        nlohmann::json item;
        item["image"] = a.out_dir + "/" + img_name;
        item["annotations"] = a.out_dir + "/" + ann_name;
        manifest["items"].push_back(std::move(item));
    }
    write_text(a.out_dir + "/manifest.json", manifest.dump(2) + "\n");
    std::cout << "corpus: " << a.count << " images under " << a.out_dir << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gaussian spatial transport toolkit"};
    app.require_subcommand(1);

    // fit
    FitArgs fit_args;
    gst_fit_config_init(&fit_args.cfg);
    CLI::App* fit = app.add_subcommand("fit", "Fit a Gaussian-splat scene to an image");
    ConfigBinder fit_bind{fit, {}};
    fit->add_option("--image", fit_args.image, "input image (ppm/pgm/png)")->required();
    fit->add_option("--annotations", fit_args.annotations, "annotation JSON")->required();
    fit->add_option("--out-scene", fit_args.out_scene, "output scene JSON")->required();
    fit->add_option("--out-render", fit_args.out_render, "rendered reconstruction");
    fit->add_option("--out-loss-csv", fit_args.out_loss_csv, "per-iteration loss CSV");
    fit_bind.add("--iterations", fit_args.cfg.iterations, "optimization iterations");
    fit_bind.add("--lr", fit_args.cfg.learning_rate, "Adam learning rate");
    fit_bind.add("--delta", fit_args.cfg.delta, "max aspect ratio (>= 1)");
    fit_bind.add("--beta", fit_args.cfg.beta, "shape loss weight");
    fit_bind.add("--n-background", fit_args.cfg.n_background,
                 "background gaussians (-1: max(64, N))");
    fit_bind.add("--init-scale", fit_args.cfg.init_scale, "initial scale in pixels");
    fit_bind.add("--seed", fit_args.cfg.seed, "rng seed");
    fit_bind.add("--threads", fit_args.cfg.threads, "worker threads");
    fit->add_flag("--exact", fit_args.cfg.exact, "disable 6-sigma truncation");
    fit->add_flag("--deterministic", fit_args.deterministic, "single thread, fixed seed");
    fit->add_option("--config", fit_args.config, "JSON config file");

    // build-kernel
    KernelArgs kernel_args;
    gst_kernel_params_init(&kernel_args.params);
    CLI::App* bk = app.add_subcommand("build-kernel", "Build a transport kernel");
    ConfigBinder bk_bind{bk, {}};
    bk->add_option("--scene", kernel_args.scene, "scene JSON from fit");
    bk->add_option("--annotations", kernel_args.annotations,
                   "annotation JSON (defaults to scene anchors)");
    bk->add_option("--out", kernel_args.out, "output GSTK file")->required();
    bk->add_option("--out-viz", kernel_args.out_viz, "correspondence PNG");
    bk_bind.add("--cutoff-d", kernel_args.params.cutoff_d, "background cut-off distance");
    bk_bind.add("--truncation-radius", kernel_args.params.truncation_radius,
                "sparsification radius (<= 0 disables)");
    bk->add_flag("--no-background",
                 [&kernel_args](int64_t) { kernel_args.params.include_background = 0; },
                 "annotation-only kernel (zero background column)");
    bk->add_flag("--heuristic", kernel_args.heuristic, "isotropic kernel from annotations");
    bk_bind.add("--sigma", kernel_args.sigma, "heuristic kernel sigma");
    bk_bind.add("--height", kernel_args.height, "image height (heuristic mode)");
    bk_bind.add("--width", kernel_args.width, "image width (heuristic mode)");
    bk_bind.add("--threads", kernel_args.threads, "worker threads");
    bk->add_flag("--deterministic", kernel_args.deterministic, "single thread");
    bk->add_option("--config", kernel_args.config, "JSON config file");

    // train
    TrainArgs train_args;
    gst_train_config_init(&train_args.cfg);
    CLI::App* tr = app.add_subcommand("train", "Train the density regressor");
    ConfigBinder tr_bind{tr, {}};
    tr->add_option("--manifest", train_args.manifest, "dataset manifest JSON")->required();
    tr->add_option("--loss", train_args.loss, "gst | l2 | dmcount");
    tr->add_option("--out-csv", train_args.out_csv, "per-step training log CSV");
    tr->add_option("--out-metrics", train_args.out_metrics, "metrics JSON");
    tr->add_option("--out-model", train_args.out_model, "model JSON");
    tr->add_option("--heatmap-dir", train_args.heatmap_dir, "write density heatmaps here");
    tr_bind.add("--epochs", train_args.cfg.epochs, "training epochs");
    tr_bind.add("--lr", train_args.cfg.learning_rate, "Adam learning rate");
    tr_bind.add("--sigma", train_args.cfg.sigma, "pseudo-gt sigma (l2 loss)");
    tr_bind.add("--dm-epsilon", train_args.cfg.dm_epsilon, "Sinkhorn regularization");
    tr_bind.add("--dm-iters", train_args.cfg.dm_iters, "Sinkhorn sweeps per step");
    tr_bind.add("--seed", train_args.cfg.seed, "rng seed");
    tr_bind.add("--threads", train_args.cfg.threads, "worker threads");
    tr->add_flag("--deterministic", train_args.deterministic,
                 "sequential execution, zeroed timing columns");
    tr->add_option("--config", train_args.config, "JSON config file");

    // eval
    EvalArgs eval_args;
    CLI::App* ev = app.add_subcommand("eval", "Evaluate counting metrics");
    ev->add_option("--manifest", eval_args.manifest, "dataset manifest JSON")->required();
    ev->add_option("--model", eval_args.model, "model JSON from train");
    ev->add_flag("--pseudo-gt", eval_args.pseudo_gt,
                 "evaluate the pseudo-ground-truth reference instead of a model");
    ev->add_option("--sigma", eval_args.sigma, "pseudo-gt sigma");
    ev->add_option("--out-metrics", eval_args.out_metrics, "metrics JSON");
    ev->add_option("--heatmap-dir", eval_args.heatmap_dir, "write density heatmaps here");
    ev->add_option("--threads", eval_args.threads, "worker threads");
    ev->add_flag("--deterministic", eval_args.deterministic, "single thread");

    // bench
    BenchArgs bench_args;
    CLI::App* be = app.add_subcommand("bench", "Transport-loss timing comparison");
    ConfigBinder be_bind{be, {}};
    be_bind.add("--sizes", bench_args.sizes, "comma list of HxW sizes");
    be_bind.add("--points", bench_args.points, "comma list of annotation counts");
    be_bind.add("--k", bench_args.k, "Sinkhorn sweeps");
    be_bind.add("--epsilon", bench_args.epsilon, "Sinkhorn regularization");
    be_bind.add("--repeats", bench_args.repeats, "timing repeats");
    be_bind.add("--sigma", bench_args.sigma, "heuristic kernel sigma");
    be_bind.add("--cutoff-d", bench_args.cutoff_d, "background cut-off distance");
    be_bind.add("--seed", bench_args.seed, "rng seed");
    be_bind.add("--threads", bench_args.threads, "worker threads");
    be->add_option("--out", bench_args.out, "output CSV (stdout if omitted)");
    be->add_flag("--deterministic", bench_args.deterministic,
                 "single thread, zeroed timing columns");
    be->add_option("--config", bench_args.config, "JSON config file");

    // oracle
    OracleArgs oracle_args;
    CLI::App* orc = app.add_subcommand("oracle", "Run an audit oracle");
    orc->add_option("name", oracle_args.name,
                    "appendix-a | theorem1 | ot-1d | dense-equiv")
        ->required();
    orc->add_option("--trials", oracle_args.trials, "number of random trials");
    orc->add_option("--seed", oracle_args.seed, "rng seed");
    orc->add_option("--scene", oracle_args.scene, "scene JSON (marginal audit)");
    orc->add_option("--cutoff-d", oracle_args.cutoff_d, "background cut-off distance");

    // gen-corpus
    GenArgs gen_args;
    gst_scene_spec_init(&gen_args.spec);
    CLI::App* gen = app.add_subcommand("gen-corpus", "Generate a synthetic dataset");
    ConfigBinder gen_bind{gen, {}};
    gen->add_option("--out-dir", gen_args.out_dir, "output directory")->required();
    gen_bind.add("--count", gen_args.count, "number of images");
    gen_bind.add("--height", gen_args.spec.height, "image height");
    gen_bind.add("--width", gen_args.spec.width, "image width");
    gen_bind.add("--blob-min", gen_args.spec.blob_count_min, "min blobs per image");
    gen_bind.add("--blob-max", gen_args.spec.blob_count_max, "max blobs per image");
    gen_bind.add("--radius-min", gen_args.spec.blob_radius_min, "min blob radius");
    gen_bind.add("--radius-max", gen_args.spec.blob_radius_max, "max blob radius");
    gen_bind.add("--noise", gen_args.spec.noise_level, "pixel noise level");
    gen_bind.add("--seed", gen_args.seed, "base rng seed");
    gen->add_option("--config", gen_args.config, "JSON config file");

    CLI11_PARSE(app, argc, argv);

    try {
        if (fit->parsed()) {
            fit_bind.apply(fit_args.config);
            return cmd_fit(fit_args);
        }
        if (bk->parsed()) {
            bk_bind.apply(kernel_args.config);
            return cmd_build_kernel(kernel_args);
        }
        if (tr->parsed()) {
            tr_bind.apply(train_args.config);
            return cmd_train(train_args);
        }
        if (ev->parsed()) return cmd_eval(eval_args);
        if (be->parsed()) {
            be_bind.apply(bench_args.config);
            return cmd_bench(bench_args);
        }
        if (orc->parsed()) return cmd_oracle(oracle_args);
        if (gen->parsed()) {
            gen_bind.apply(gen_args.config);
            return cmd_gen_corpus(gen_args);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
