#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gst/image.hpp"

namespace gst {

enum class Role { Foreground, Background };

/// Anisotropic 2D Gaussian. Scales are stored as logs so s1, s2 stay
/// positive under unconstrained gradient steps. Foreground Gaussians keep
/// mu pinned to their assigned annotation for the whole optimization.
struct Gaussian2D {
    std::array<double, 2> mu{0.0, 0.0};     // (row, col)
    std::array<double, 2> log_s{0.0, 0.0};  // log scales in pixels
    double theta = 0.0;                     // radians
    double alpha = 0.0;                     // opacity, unconstrained
    std::vector<double> color;              // per channel, unconstrained
    Role role = Role::Background;
    int assigned = -1;                      // 0-based annotation index, fg only

    std::array<double, 2> scales() const;
};

struct GaussianScene {
    int height = 0;
    int width = 0;
    std::vector<Gaussian2D> gaussians;

    size_t foreground_count() const;
    /// Foreground Gaussian indices ordered by assigned annotation; throws
    /// DataError unless the assignment is a bijection onto 0..N-1.
    std::vector<size_t> foreground_by_annotation(size_t n_annotations) const;
    void validate() const;
};

struct FitConfig {
    int iterations = 4000;
    double learning_rate = 0.01;
    double delta = 1.5;        // max permissible aspect ratio
    double beta = 0.2;         // shape loss weight
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int n_background = -1;     // -1 -> max(64, N)
    double init_scale = 4.0;   // pixels
    uint64_t seed = 0;
    int threads = 1;
    bool exact = false;        // disable the 6-sigma render truncation

    void validate() const; // iterations >= 1, lr > 0, delta >= 1
};

/// Sigma = R S (R S)^T, returned row-major (xx, xy, yx, yy).
/// Eigenvalues are s1^2, s2^2.
std::array<double, 4> covariance(const Gaussian2D& g);

/// (x - mu)^T Sigma^{-1} (x - mu); the quantity in the render exponent.
double mahalanobis_sq(const std::array<double, 2>& x, const Gaussian2D& g);

/// Additive blend: per pixel/channel, sum over Gaussians of
/// alpha * color * exp(-mahalanobis_sq / 2). With exact=false each Gaussian
/// contributes only where mahalanobis_sq <= 36 (6-sigma support,
/// exp(-18) < 2e-8 tail).
Image render(const GaussianScene& scene, int channels, bool exact = false, int threads = 1);

/// Mean over pixels and channels of the squared difference.
double reconstruction_loss(const Image& rendered, const Image& target);

/// max_m(max(s_major/s_minor - delta, 0)).
double shape_loss(const GaussianScene& scene, double delta);

/// Gradients laid out per Gaussian: mu(2), log_s(2), theta, alpha, color(C).
struct SceneGrad {
    int channels = 0;
    std::vector<double> data;

    size_t stride() const { return static_cast<size_t>(6 + channels); }
    double* gaussian(size_t m) { return data.data() + m * stride(); }
    const double* gaussian(size_t m) const { return data.data() + m * stride(); }
};

/// L_gs = L_rec + beta * L_shape and its analytic gradient w.r.t. every
/// trainable parameter. Foreground mu entries are exactly 0. At shape-loss
/// ties the first Gaussian in iteration order takes the gradient; at the
/// hinge point the gradient is 0.
double total_loss_and_grad(const GaussianScene& scene, const Image& target,
                           double beta, double delta, SceneGrad& grad,
                           bool exact = false, int threads = 1);

/// Adam descent on all trainable parameters, foreground means pinned to
/// their annotations. Deterministic given cfg.seed and thread count.
/// An explicit init scene overrides the default initialization; its
/// foreground anchors must match the annotations.
GaussianScene fit(const Image& image, const AnnotationSet& ann, const FitConfig& cfg,
                  std::vector<double>* loss_curve = nullptr,
                  const GaussianScene* init = nullptr);

// Scene JSON; double round-trips are value-exact (shortest-decimal printing).
std::string scene_to_json(const GaussianScene& scene);
GaussianScene scene_from_json(const std::string& text);
void save_scene(const GaussianScene& scene, const std::string& path);
GaussianScene load_scene(const std::string& path);

/// FNV-1a of the serialized scene; kernel provenance.
uint64_t scene_hash(const GaussianScene& scene);

/// Annotations recovered from the fg Gaussians (means are pinned), for
/// tools that only have a scene file.
AnnotationSet annotations_from_scene(const GaussianScene& scene);

} // namespace gst
