#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gst/gst.h"

namespace {

std::filesystem::path tmp_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "gst_capi_tests";
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("version and error reporting") {
    CHECK(std::string(gst_version()) == "1.0.0");
    gst_image* img = nullptr;
    CHECK(gst_image_load("/definitely/not/here.ppm", &img) == GST_ERR_IO);
    CHECK(std::strlen(gst_last_error()) > 0);
}

TEST_CASE("image create/save/load through the C surface") {
    const auto dir = tmp_dir();
    std::vector<double> values(6 * 5 * 3, 0.25);
    gst_image* img = nullptr;
    REQUIRE(gst_image_create(6, 5, 3, values.data(), &img) == GST_OK);
    CHECK(gst_image_height(img) == 6);
    CHECK(gst_image_width(img) == 5);
    CHECK(gst_image_channels(img) == 3);

    const std::string path = (dir / "img.png").string();
    REQUIRE(gst_image_save(img, path.c_str()) == GST_OK);
    gst_image* back = nullptr;
    REQUIRE(gst_image_load(path.c_str(), &back) == GST_OK);
    const double* data = gst_image_data(back);
    for (int i = 0; i < 6 * 5 * 3; ++i) CHECK(std::fabs(data[i] - 0.25) <= 1.0 / 255.0);
    gst_image_free(img);
    gst_image_free(back);

    gst_image* bad = nullptr;
    std::vector<double> nan_values(4, std::nan(""));
    CHECK(gst_image_create(2, 2, 1, nan_values.data(), &bad) == GST_ERR_DATA);
}

TEST_CASE("full pipeline: generate, fit, kernel, loss, push-forward") {
    const auto dir = tmp_dir();

    gst_scene_spec spec;
    gst_scene_spec_init(&spec);
    spec.height = 32;
    spec.width = 32;
    spec.blob_count_min = 2;
    spec.blob_count_max = 3;
    spec.seed = 77;
    gst_image* img = nullptr;
    gst_annotations* ann = nullptr;
    REQUIRE(gst_generate_scene(&spec, &img, &ann) == GST_OK);
    const size_t n = gst_annotations_count(ann);
    CHECK(n >= 2);
    CHECK(n <= 3);

    gst_fit_config cfg;
    gst_fit_config_init(&cfg);
    CHECK(cfg.iterations == 4000);
    CHECK(cfg.learning_rate == 0.01);
    CHECK(cfg.delta == 1.5);
    CHECK(cfg.beta == 0.2);
    cfg.iterations = 40;
    cfg.n_background = 8;
    cfg.seed = 1;

    gst_scene* scene = nullptr;
    REQUIRE(gst_scene_fit(img, ann, &cfg, nullptr, nullptr, &scene) == GST_OK);
    CHECK(gst_scene_foreground_count(scene) == n);

    // Invalid config surfaces as GST_ERR_CONFIG with a message.
    gst_fit_config bad = cfg;
    bad.delta = 0.5;
    gst_scene* no_scene = nullptr;
    CHECK(gst_scene_fit(img, ann, &bad, nullptr, nullptr, &no_scene) == GST_ERR_CONFIG);
    CHECK(std::string(gst_last_error()).find("delta") != std::string::npos);

    gst_kernel_params params;
    gst_kernel_params_init(&params);
    CHECK(params.cutoff_d == 3.0);
    gst_kernel* kernel = nullptr;
    REQUIRE(gst_kernel_build(scene, ann, &params, 2, &kernel) == GST_OK);
    CHECK(gst_kernel_rows(kernel) == 32 * 32);
    CHECK(gst_kernel_targets(kernel) == n + 1);

    const std::string kpath = (dir / "k.gstk").string();
    REQUIRE(gst_kernel_save(kernel, kpath.c_str()) == GST_OK);
    gst_kernel* kback = nullptr;
    REQUIRE(gst_kernel_load(kpath.c_str(), &kback) == GST_OK);
    CHECK(gst_kernel_nnz(kback) == gst_kernel_nnz(kernel));
    CHECK(gst_kernel_cutoff_d(kback) == 3.0);

    // Density from the model, pushed forward and scored.
    gst_model* model = nullptr;
    REQUIRE(gst_model_create(9, &model) == GST_OK);
    gst_density* density = nullptr;
    REQUIRE(gst_model_forward(model, img, 1, &density) == GST_OK);
    std::vector<double> pushed(n + 1);
    REQUIRE(gst_kernel_push_forward(kernel, density, 1, pushed.data()) == GST_OK);
    double pushed_mass = 0.0;
    for (double v : pushed) pushed_mass += v;
    CHECK(std::fabs(pushed_mass - gst_density_sum(density)) <= 1e-9);

    double value = 0.0;
    std::vector<double> grad(32 * 32);
    REQUIRE(gst_loss_eval(kernel, density, 1, &value, grad.data()) == GST_OK);
    CHECK(value >= 0.0);

    gst_image* heat = nullptr;
    REQUIRE(gst_density_heatmap(density, &heat) == GST_OK);
    gst_image* viz = nullptr;
    REQUIRE(gst_kernel_correspondence_image(kernel, 32, 32, &viz) == GST_OK);

    gst_image_free(heat);
    gst_image_free(viz);
    gst_density_free(density);
    gst_model_free(model);
    gst_kernel_free(kernel);
    gst_kernel_free(kback);
    gst_scene_free(scene);
    gst_annotations_free(ann);
    gst_image_free(img);
}

TEST_CASE("dataset, training and evaluation through the C surface") {
    const auto dir = tmp_dir();

    // Two-item corpus with heuristic kernels.
    std::string manifest_text = "{\"items\":[";
    for (int i = 0; i < 2; ++i) {
        gst_scene_spec spec;
        gst_scene_spec_init(&spec);
        spec.height = 24;
        spec.width = 24;
        spec.blob_count_min = 2;
        spec.blob_count_max = 2;
        spec.seed = 100 + static_cast<uint64_t>(i);
        gst_image* img = nullptr;
        gst_annotations* ann = nullptr;
        REQUIRE(gst_generate_scene(&spec, &img, &ann) == GST_OK);

        const std::string img_path = (dir / ("ds_img" + std::to_string(i) + ".png")).string();
        const std::string ann_path = (dir / ("ds_ann" + std::to_string(i) + ".json")).string();
        const std::string k_path = (dir / ("ds_k" + std::to_string(i) + ".gstk")).string();
        REQUIRE(gst_image_save(img, img_path.c_str()) == GST_OK);
        REQUIRE(gst_annotations_save(ann, ann_path.c_str()) == GST_OK);

        gst_kernel_params params;
        gst_kernel_params_init(&params);
        gst_kernel* kernel = nullptr;
        REQUIRE(gst_kernel_build_heuristic(ann, 8.0, &params, 1, &kernel) == GST_OK);
        REQUIRE(gst_kernel_save(kernel, k_path.c_str()) == GST_OK);
        gst_kernel_free(kernel);

        if (i) manifest_text += ",";
        manifest_text += "{\"image\":\"" + img_path + "\",\"annotations\":\"" + ann_path +
                         "\",\"kernel\":\"" + k_path + "\"}";
        gst_annotations_free(ann);
        gst_image_free(img);
    }
    manifest_text += "]}";
    const std::string manifest = (dir / "manifest.json").string();
    {
        std::ofstream out(manifest);
        out << manifest_text;
    }

    gst_dataset* ds = nullptr;
    REQUIRE(gst_dataset_load(manifest.c_str(), 1, &ds) == GST_OK);
    CHECK(gst_dataset_size(ds) == 2);
    CHECK(gst_dataset_annotation_count(ds, 0) == 2);

    gst_train_config cfg;
    gst_train_config_init(&cfg);
    cfg.loss = GST_LOSS_GST;
    cfg.epochs = 2;
    cfg.seed = 4;
    cfg.deterministic = 1;
    gst_model* model = nullptr;
    gst_trainrun* run = nullptr;
    REQUIRE(gst_train(ds, &cfg, &model, &run) == GST_OK);
    CHECK(gst_trainrun_steps(run) == 4);
    gst_step_record rec{};
    REQUIRE(gst_trainrun_record(run, 0, &rec) == GST_OK);
    CHECK(rec.step == 1);
    CHECK(rec.inner_iterations == 0);

    double mae = 0.0, rmse = 0.0;
    REQUIRE(gst_evaluate(model, ds, 1, &mae, &rmse) == GST_OK);
    CHECK(mae <= rmse + 1e-12);

    const std::string model_path = (dir / "model.json").string();
    REQUIRE(gst_model_save(model, model_path.c_str()) == GST_OK);
    gst_model* mback = nullptr;
    REQUIRE(gst_model_load(model_path.c_str(), &mback) == GST_OK);
    double mae2 = 0.0, rmse2 = 0.0;
    REQUIRE(gst_evaluate(mback, ds, 1, &mae2, &rmse2) == GST_OK);
    CHECK(mae2 == mae);

    gst_model_free(mback);
    gst_model_free(model);
    gst_trainrun_free(run);
    gst_dataset_free(ds);

    // Missing kernels surface as GST_ERR_MISSING when required.
    std::string no_kernel = manifest_text;
    const std::string needle = ",\"kernel\":";
    for (size_t at = no_kernel.find(needle); at != std::string::npos;
         at = no_kernel.find(needle)) {
        const size_t end = no_kernel.find("}", at);
        no_kernel.erase(at, end - at);
    }
    const std::string manifest2 = (dir / "manifest_nok.json").string();
    {
        std::ofstream out(manifest2);
        out << no_kernel;
    }
    gst_dataset* ds2 = nullptr;
    CHECK(gst_dataset_load(manifest2.c_str(), 1, &ds2) == GST_ERR_MISSING);
    REQUIRE(gst_dataset_load(manifest2.c_str(), 0, &ds2) == GST_OK);
    gst_dataset_free(ds2);
}

TEST_CASE("bench and oracles through the C surface") {
    gst_bench_config cfg{};
    const int heights[] = {24};
    const int widths[] = {24};
    const int points[] = {4};
    cfg.heights = heights;
    cfg.widths = widths;
    cfg.n_sizes = 1;
    cfg.point_counts = points;
    cfg.n_point_counts = 1;
    cfg.sinkhorn_k = 5;
    cfg.epsilon = 0.01;
    cfg.repeats = 2;
    cfg.sigma = 8.0;
    cfg.cutoff_d = 3.0;
    cfg.seed = 1;
    cfg.threads = 1;
    gst_bench_row rows[2];
    size_t n_rows = 0;
    REQUIRE(gst_bench_run(&cfg, rows, &n_rows) == GST_OK);
    CHECK(n_rows == 2);
    CHECK(std::string(rows[0].method) == "gst_loss");
    CHECK(std::string(rows[1].method) == "sinkhorn_k5");

    cfg.repeats = 0;
    CHECK(gst_bench_run(&cfg, rows, &n_rows) == GST_ERR_CONFIG);
    CHECK(std::string(gst_last_error()).find("repeats") != std::string::npos);

    double residual = 1.0;
    REQUIRE(gst_oracle_mass_identity(50, 3, &residual) == GST_OK);
    CHECK(residual < 1e-12);

    double row_res = 1.0, col_res = 1.0;
    REQUIRE(gst_oracle_marginals_random(3, 5, &row_res, &col_res) == GST_OK);
    CHECK(row_res <= 1e-12);
    CHECK(col_res < 1e-6);

    double ot_err = 1.0;
    REQUIRE(gst_oracle_ot1d(3, 7, &ot_err) == GST_OK);
    CHECK(ot_err < 1e-3);

    double entry_err = 1.0;
    REQUIRE(gst_oracle_dense_equiv(2, 9, &entry_err) == GST_OK);
    CHECK(entry_err < 1e-12);
}
