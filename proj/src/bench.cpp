#include "gst/bench.hpp"

#include <chrono>
#include <cmath>

#include "gst/image.hpp"
#include "gst/kernel.hpp"
#include "gst/losses.hpp"
#include "gst/rng.hpp"

namespace gst {

namespace {

double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    return {mean, std::sqrt(var)};
}

} // namespace

std::vector<BenchRow> run_bench(const BenchConfig& cfg) {
    if (cfg.repeats < 1) throw ConfigError("repeats must be >= 1");
    if (cfg.sizes.empty() || cfg.point_counts.empty())
        throw ConfigError("bench needs at least one size and point count");

    std::vector<BenchRow> rows;
    Rng rng(cfg.seed);
    for (const auto& [H, W] : cfg.sizes) {
        for (int n_points : cfg.point_counts) {
            AnnotationSet ann;
            ann.image_height = H;
            ann.image_width = W;
            for (int n = 0; n < n_points; ++n)
                ann.points.push_back(
                    {rng.uniform(1.0, H - 1.0), rng.uniform(1.0, W - 1.0)});

            DensityMap d(H, W);
            for (double& v : d.values) v = rng.uniform(0.0, 2.0 * n_points /
                                                                static_cast<double>(d.size()));

            CorrespondenceParams params;
            params.cutoff_d = cfg.cutoff_d;
            params.truncation_radius = 2.0 * cfg.cutoff_d;
            const auto t_build = std::chrono::steady_clock::now();
            const TransportKernel kernel =
                build_heuristic_kernel(ann, cfg.sigma, H, W, params, cfg.threads);
            const double build_ms = ms_since(t_build);

            const auto target = annotation_target(ann.count());
            std::vector<double> gst_ms(static_cast<size_t>(cfg.repeats));
            double sink = 0.0; // defeat dead-code elimination
            for (int rep = 0; rep < cfg.repeats; ++rep) {
                const auto t0 = std::chrono::steady_clock::now();
                const LossResult lr = gst_loss(kernel, d, target, cfg.threads);
                gst_ms[static_cast<size_t>(rep)] = ms_since(t0);
                sink += lr.value;
            }

            DmCountConfig dm;
            dm.epsilon = cfg.epsilon;
            dm.max_iters = cfg.sinkhorn_k;
            dm.tol = 0.0; // fixed-k inner loop
            dm.threads = cfg.threads;
            std::vector<double> ot_ms(static_cast<size_t>(cfg.repeats));
            for (int rep = 0; rep < cfg.repeats; ++rep) {
                const auto t0 = std::chrono::steady_clock::now();
                const LossResult lr = dmcount_loss(d, ann, dm);
                ot_ms[static_cast<size_t>(rep)] = ms_since(t0);
                sink += lr.value;
            }
            (void)sink;

            const auto [gm, gs] = mean_std(gst_ms);
            const auto [om, os] = mean_std(ot_ms);
            rows.push_back({H, W, n_points, "gst_loss", gm, gs, build_ms});
            rows.push_back(
                {H, W, n_points, "sinkhorn_k" + std::to_string(cfg.sinkhorn_k), om, os, 0.0});
        }
    }
    return rows;
}

} // namespace gst
