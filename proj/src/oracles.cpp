#include "gst/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gst/losses.hpp"

namespace gst {

GaussianScene make_random_interior_scene(Rng& rng, int height, int width, size_t n,
                                         AnnotationSet* ann_out) {
    GaussianScene scene;
    scene.height = height;
    scene.width = width;
    AnnotationSet ann;
    ann.image_height = height;
    ann.image_width = width;
    for (size_t i = 0; i < n; ++i) {
        Gaussian2D g;
        const double s1 = rng.uniform(1.2, 2.2);
        const double s2 = rng.uniform(1.2, 2.2);
        const double margin = 6.0 * std::max(s1, s2) + 1.0;
        g.mu = {rng.uniform(margin, height - margin), rng.uniform(margin, width - margin)};
        g.log_s = {std::log(s1), std::log(s2)};
        g.theta = rng.uniform(0.0, M_PI);
        g.alpha = rng.uniform(0.2, 1.0);
        g.color = {rng.uniform(), rng.uniform(), rng.uniform()};
        g.role = Role::Foreground;
        g.assigned = static_cast<int>(i);
        ann.points.push_back(g.mu);
        scene.gaussians.push_back(std::move(g));
    }
    if (ann_out) *ann_out = std::move(ann);
    return scene;
}

double max_row_sum_error(const TransportKernel& k) {
    double worst = 0.0;
    for (size_t i = 0; i < k.n_pixels; ++i) {
        double s = 0.0;
        for (size_t j = k.row_offsets[i]; j < k.row_offsets[i + 1]; ++j) s += k.weights[j];
        worst = std::max(worst, std::fabs(s - 1.0));
    }
    return worst;
}

MarginalAuditResult marginal_audit(const GaussianScene& scene, const AnnotationSet& ann,
                                   double cutoff_d) {
    const size_t N = ann.count();
    if (N == 0) throw DataError("marginal audit requires at least one annotation");

    CorrespondenceParams production;
    production.cutoff_d = cutoff_d;
    production.truncation_radius = 2.0 * cutoff_d;
    production.include_background = true;

    CorrespondenceParams audit;
    audit.cutoff_d = cutoff_d;
    audit.truncation_radius = std::numeric_limits<double>::infinity();
    audit.include_background = false;

    const TransportKernel k_prod = build_kernel(scene, ann, production);
    const TransportKernel k_audit = build_kernel(scene, ann, audit);

    const std::vector<double> p_x = consistent_pixel_marginal(scene, ann);
    std::vector<double> p_y(N + 1, 1.0 / static_cast<double>(N));
    p_y[0] = 0.0;

    const auto [row_res, col_res] = verify_marginals(k_audit, p_x, p_y);

    MarginalAuditResult res;
    res.row_residual = row_res;
    res.col_residual = col_res;
    res.max_row_sum_err = std::max(max_row_sum_error(k_prod), max_row_sum_error(k_audit));
    return res;
}

MarginalAuditResult marginal_audit_random(int trials, uint64_t seed) {
    Rng rng(seed);
    MarginalAuditResult worst;
    for (int t = 0; t < trials; ++t) {
        const int h = static_cast<int>(rng.uniform_int(40, 64));
        const int w = static_cast<int>(rng.uniform_int(40, 64));
        const size_t n = static_cast<size_t>(rng.uniform_int(1, 20));
        AnnotationSet ann;
        const GaussianScene scene = make_random_interior_scene(rng, h, w, n, &ann);
        const MarginalAuditResult r = marginal_audit(scene, ann, 3.0);
        worst.row_residual = std::max(worst.row_residual, r.row_residual);
        worst.col_residual = std::max(worst.col_residual, r.col_residual);
        worst.max_row_sum_err = std::max(worst.max_row_sum_err, r.max_row_sum_err);
    }
    return worst;
}

double mass_identity_audit(int trials, uint64_t seed) {
    Rng rng(seed);
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
        const size_t I = static_cast<size_t>(rng.uniform_int(1, 30));
        const size_t N = static_cast<size_t>(rng.uniform_int(1, 10));

        std::vector<double> p_x(I), target(N), p_y(N);
        double sx = 0.0, sy = 0.0;
        for (auto& v : p_x) sx += (v = rng.uniform(0.01, 1.0));
        for (auto& v : p_x) v /= sx;
        for (auto& v : target) sy += (v = rng.uniform(0.01, 2.0));
        for (size_t n = 0; n < N; ++n) p_y[n] = target[n] / sy;

        const double mass = rng.uniform(0.0, 20.0);
        const auto plan = nw_corner_plan(p_x, p_y);
        const auto [lhs, rhs] = check_pushforward_equivalence(plan, I, N, mass, target);
        worst = std::max(worst, std::fabs(lhs - rhs));
    }
    return worst;
}

double ot1d_audit(int trials, uint64_t seed, double epsilon, int max_iters) {
    Rng rng(seed);
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
        const size_t I = static_cast<size_t>(rng.uniform_int(2, 30));
        const size_t N = static_cast<size_t>(rng.uniform_int(1, 10));
        std::vector<double> xs(I), ys(N), a(I), b(N);
        for (auto& v : xs) v = rng.uniform();
        for (auto& v : ys) v = rng.uniform();
        double sa = 0.0, sb = 0.0;
        for (auto& v : a) sa += (v = rng.uniform(0.1, 1.0));
        for (auto& v : a) v /= sa;
        for (auto& v : b) sb += (v = rng.uniform(0.1, 1.0));
        for (auto& v : b) v /= sb;

        const CostMatrix c = cost_matrix_1d(xs, ys, Metric::Euclidean);
        // Epsilon scaling plus mild over-relaxation reaches the small target
        // regularization well inside the sweep budget.
        SinkhornOptions opts;
        opts.anneal_from = 0.1;
        opts.over_relaxation = 1.5;
        const SinkhornResult s = sinkhorn(a, b, c, epsilon, max_iters, 1e-10, opts);
        const double exact = ot_1d_cost(xs, a, ys, b);
        worst = std::max(worst, std::fabs(s.cost - exact));
    }
    return worst;
}

double dense_equivalence_audit(int trials, uint64_t seed) {
    Rng rng(seed);
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
        const int h = static_cast<int>(rng.uniform_int(20, 32));
        const int w = static_cast<int>(rng.uniform_int(20, 32));
        const size_t n = static_cast<size_t>(rng.uniform_int(1, 6));
        AnnotationSet ann;
        GaussianScene scene;
        // Interior margin is relaxed here; equivalence does not need it.
        scene.height = h;
        scene.width = w;
        ann.image_height = h;
        ann.image_width = w;
        for (size_t i = 0; i < n; ++i) {
            Gaussian2D g;
            g.mu = {rng.uniform(2.0, h - 2.0), rng.uniform(2.0, w - 2.0)};
            g.log_s = {std::log(rng.uniform(0.8, 3.0)), std::log(rng.uniform(0.8, 3.0))};
            g.theta = rng.uniform(0.0, M_PI);
            g.alpha = 0.5;
            g.color = {1.0, 1.0, 1.0};
            g.role = Role::Foreground;
            g.assigned = static_cast<int>(i);
            ann.points.push_back(g.mu);
            scene.gaussians.push_back(std::move(g));
        }

        CorrespondenceParams params;
        params.cutoff_d = 3.0;
        params.truncation_radius = std::numeric_limits<double>::infinity();
        params.include_background = true;

        const TransportKernel sparse = build_kernel(scene, ann, params);
        const TransportKernel dense = build_kernel_dense_reference(scene, ann, params);

        // Truncation disabled: both attain every column of every row.
        if (sparse.nnz() != dense.nnz()) return std::numeric_limits<double>::infinity();
        for (size_t j = 0; j < sparse.nnz(); ++j) {
            if (sparse.cols[j] != dense.cols[j])
                return std::numeric_limits<double>::infinity();
            worst = std::max(worst, std::fabs(sparse.weights[j] - dense.weights[j]));
        }
    }
    return worst;
}

} // namespace gst
