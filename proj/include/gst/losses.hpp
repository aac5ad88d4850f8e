#pragma once

#include <span>
#include <utility>
#include <vector>

#include "gst/image.hpp"
#include "gst/kernel.hpp"

namespace gst {

enum class Metric { SqEuclidean, Euclidean };

/// Dense I x N cost matrix, row-major over pixels.
struct CostMatrix {
    size_t n_sources = 0;
    size_t n_targets = 0;
    Metric metric = Metric::SqEuclidean;
    std::vector<double> entries;

    double at(size_t i, size_t n) const { return entries[i * n_targets + n]; }
};

/// Loss value plus gradient w.r.t. the density map.
struct LossResult {
    double value = 0.0;
    std::vector<double> grad;
};

/// ||K' d - target||_1 with subgradient K sign(residual), sign(0) = 0.
/// target spans the extended set (N+1 entries).
LossResult gst_loss(const TransportKernel& k, const DensityMap& d,
                    std::span<const double> target, int threads = 1);

/// Sum of per-annotation isotropic Gaussians, each renormalized over the
/// pixel grid to unit mass; total mass = N.
DensityMap make_pseudo_gt(const AnnotationSet& ann, double sigma, int height, int width);

/// Sum of squared differences; grad = 2 (d - pseudo).
LossResult l2_loss(const DensityMap& d, const DensityMap& pseudo);

/// Pixel-center-to-annotation costs, coordinates divided by max(H, W).
CostMatrix cost_matrix(int height, int width, const AnnotationSet& ann, Metric metric);

/// Cost matrix between arbitrary 1D point sets (oracle instances).
CostMatrix cost_matrix_1d(std::span<const double> xs, std::span<const double> ys,
                          Metric metric);

struct SinkhornResult {
    std::vector<double> plan; // n_sources x n_targets, row-major
    double cost = 0.0;        // <C, plan>
    int iterations = 0;
    double marginal_error = 0.0; // L1 row-marginal error at exit
    std::vector<double> f, g;    // dual potentials (epsilon-scaled)
};

struct SinkhornOptions {
    int threads = 1;
    /// > epsilon enables epsilon scaling: the regularization decays
    /// geometrically from this value to the target over the early sweeps;
    /// convergence is still measured at the target epsilon.
    double anneal_from = 0.0;
    /// Over-relaxation factor in [1, 2); 1 is the plain update. Values
    /// around 1.5 cut the sweep count several-fold at small epsilon.
    double over_relaxation = 1.0;
};

/// Log-domain Sinkhorn for entropic OT. Stops when the L1 row-marginal
/// error drops below tol or after max_iters sweeps. Inputs must sum to 1
/// within 1e-9.
SinkhornResult sinkhorn(std::span<const double> p_x, std::span<const double> p_y,
                        const CostMatrix& c, double epsilon, int max_iters, double tol,
                        const SinkhornOptions& opts = {});

/// Exact 1D Wasserstein-1 between weighted point sets via sorted CDF
/// matching. Total masses must agree within 1e-9.
double ot_1d_cost(std::span<const double> src_pos, std::span<const double> src_mass,
                  std::span<const double> dst_pos, std::span<const double> dst_mass);

/// North-west-corner feasible plan; marginals exact by construction.
std::vector<double> nw_corner_plan(std::span<const double> p_x,
                                   std::span<const double> p_y);

struct DmCountConfig {
    double epsilon = 0.01;
    int max_iters = 100;
    double tol = 1e-6;
    double lambda_d = 1.0;
    Metric metric = Metric::SqEuclidean;
    int threads = 1;
};

struct DmCountStats {
    double ot_cost = 0.0;
    double count_term = 0.0;
    int sinkhorn_iterations = 0;
};

/// lambda_D |sum(d) - N| + <C, P*>, P* solved per call by Sinkhorn on the
/// normalized density; OT-term gradient through the dual potentials.
LossResult dmcount_loss(const DensityMap& d, const AnnotationSet& ann,
                        const DmCountConfig& cfg, DmCountStats* stats = nullptr);

/// lhs = ||(d_mass * plan)' 1 - target||_1, rhs = |d_mass - ||target||_1|.
/// Equal for every plan with exact marginals proportional to target.
std::pair<double, double> check_pushforward_equivalence(std::span<const double> plan,
                                                        size_t n_sources, size_t n_targets,
                                                        double d_mass,
                                                        std::span<const double> target);

} // namespace gst
