#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gst/image.hpp"
#include "gst/splat.hpp"

namespace gst {

/// Build-time provenance; not part of the GSTK wire format.
struct KernelMeta {
    uint64_t scene_hash = 0;
    double truncation_radius = 0.0;
    bool include_background = true;
};

/// Sparse row-stochastic matrix: rows are pixels (row-major), columns are
/// the extended target set {y0=background, y1..yN}. Column indices are
/// strictly increasing within a row; every row sums to 1.
struct TransportKernel {
    uint64_t n_pixels = 0;
    uint64_t n_targets = 0; // N + 1
    double cutoff_d = 3.0;
    std::vector<uint64_t> row_offsets; // n_pixels + 1
    std::vector<uint32_t> cols;
    std::vector<double> weights;
    KernelMeta meta;

    size_t nnz() const { return cols.size(); }
    std::pair<const uint32_t*, const double*> row(size_t i) const {
        return {cols.data() + row_offsets[i], weights.data() + row_offsets[i]};
    }
    size_t row_size(size_t i) const { return row_offsets[i + 1] - row_offsets[i]; }
    void validate() const;
};

struct CorrespondenceParams {
    double cutoff_d = 3.0;
    /// Mahalanobis radius beyond which foreground columns are dropped
    /// before row normalization; infinity disables truncation.
    double truncation_radius = 6.0;
    /// False builds the pixel-to-annotation kernel only (zero background
    /// column); Theorem-style audits and the "GST-" ablation use it.
    bool include_background = true;

    void validate() const; // cutoff_d > 0, truncation_radius >= cutoff_d
};

/// Normalized 2D Gaussian density (2 pi |Sigma|^(1/2))^-1 exp(-q/2).
double p_x_given_gaussian(const std::array<double, 2>& x, const Gaussian2D& g);

/// Background correspondence against the nearest foreground Gaussian G*
/// (Mahalanobis-nearest, ties to the lowest annotation index):
/// (2 pi |Sigma*|^(1/2))^-1 exp(-(d^2 - q*)/2). Returns 1 when the scene
/// has no foreground Gaussian (whole image is background).
double p_x_given_background(const std::array<double, 2>& x, const GaussianScene& scene,
                            double cutoff_d);

/// Indicator of the pre-assigned Gaussian-to-target mapping; m and n index
/// the extended sets (0 = background pseudo-Gaussian / virtual object).
double p_g_given_y(const GaussianScene& scene, size_t m, size_t n);

/// Total-probability decomposition collapsed by the one-to-one assignment:
/// the assigned Gaussian's density for n >= 1, the background term for n=0.
double p_x_given_y(const std::array<double, 2>& x, size_t n, const GaussianScene& scene,
                   const CorrespondenceParams& params);

/// Row-normalized conditional densities over retained targets, computed in
/// log space. N=0 yields a single all-ones background column.
TransportKernel build_kernel(const GaussianScene& scene, const AnnotationSet& ann,
                             const CorrespondenceParams& params, int threads = 1);

/// Same construction with isotropic N(y_n, sigma^2 I) conditionals and the
/// Euclidean-nearest annotation as G*.
TransportKernel build_heuristic_kernel(const AnnotationSet& ann, double sigma,
                                       int height, int width,
                                       const CorrespondenceParams& params, int threads = 1);

/// Straight-line dense reference builder (no sparsity machinery); oracle
/// counterpart for the sparse path.
TransportKernel build_kernel_dense_reference(const GaussianScene& scene,
                                             const AnnotationSet& ann,
                                             const CorrespondenceParams& params);

/// out[n] = sum_i K_in d_i. Mass-conserving for row-stochastic K.
std::vector<double> push_forward(const TransportKernel& k, const DensityMap& d,
                                 int threads = 1);

/// For P_hat = diag(P_X) K: (||P_hat 1 - P_X||_1, ||P_hat' 1 - P_Y||_1).
std::pair<double, double> verify_marginals(const TransportKernel& k,
                                           std::span<const double> p_x,
                                           std::span<const double> p_y);

/// The generative marginal P_X(x_i) ~ sum_n P(x_i|y_n) P_Y(y_n) over real
/// annotations (uniform P_Y on 1..N, 0 on y0), normalized over pixels.
std::vector<double> consistent_pixel_marginal(const GaussianScene& scene,
                                              const AnnotationSet& ann);

// GSTK binary container (little-endian, CRC32 trailer).
void save_kernel(const TransportKernel& k, const std::string& path);
TransportKernel load_kernel(const std::string& path);

} // namespace gst
