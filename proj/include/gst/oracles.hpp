#pragma once

#include <cstdint>
#include <utility>

#include "gst/kernel.hpp"
#include "gst/rng.hpp"

namespace gst {

/// Random scene with interior anisotropic Gaussians (6-sigma margin) and a
/// bijective foreground assignment; audit and test input generator.
GaussianScene make_random_interior_scene(Rng& rng, int height, int width, size_t n,
                                         AnnotationSet* ann_out = nullptr);

/// Largest |row sum - 1| over all kernel rows.
double max_row_sum_error(const TransportKernel& k);

struct MarginalAuditResult {
    double row_residual = 0.0; // aggregate, via verify_marginals
    double col_residual = 0.0;
    double max_row_sum_err = 0.0; // per-row worst case, production kernel
};

/// Marginal audit of one scene: the annotation-only kernel against the
/// uniform target marginal under the generative pixel marginal, plus the
/// row-stochasticity of the production (background-included) kernel.
MarginalAuditResult marginal_audit(const GaussianScene& scene, const AnnotationSet& ann,
                                   double cutoff_d);

/// Worst-case audit over `trials` random interior scenes (<= 64x64, N <= 20).
MarginalAuditResult marginal_audit_random(int trials, uint64_t seed);

/// Max |lhs - rhs| of the push-forward identity
/// ||tau(d) - zeta_g||_1 = | ||d||_1 - ||zeta_g||_1 | over random
/// (P_X, P_Y, mass) triples with exact nw-corner plans.
double mass_identity_audit(int trials, uint64_t seed);

/// Max |entropic cost - exact 1D cost| over random line instances
/// (<= 30 sources, <= 10 targets, Euclidean cost).
double ot1d_audit(int trials, uint64_t seed, double epsilon = 1e-3, int max_iters = 5000);

/// Max per-entry |sparse - dense| over random small scenes with
/// truncation disabled.
double dense_equivalence_audit(int trials, uint64_t seed);

} // namespace gst
