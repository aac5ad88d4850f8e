#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gst/image.hpp"
#include "gst/kernel.hpp"
#include "gst/losses.hpp"

namespace gst {

/// Synthetic annotated scene: textured noise background plus radial blobs
/// with annotations at the blob centers.
struct SceneSpec {
    int height = 48;
    int width = 48;
    int blob_count_min = 3;
    int blob_count_max = 8;
    double blob_radius_min = 2.0;
    double blob_radius_max = 5.0;
    double noise_level = 0.08;
    uint64_t seed = 0;

    void validate() const; // non-empty ranges, dims >= 16
};

std::pair<Image, AnnotationSet> generate_scene(const SceneSpec& spec);

/// Three-stage convolutional density regressor:
/// 3x3 (3->16) + ReLU, 3x3 (16->16) + ReLU, 1x1 (16->1) + softplus.
/// Parameters live in one flat vector (w1 b1 w2 b2 w3 b3) so the optimizer
/// and finite-difference checks can treat them uniformly.
struct ToyRegressor {
    static constexpr int kHidden = 16;
    static constexpr int kInChannels = 3;
    static constexpr size_t kW1 = 16 * 3 * 9;
    static constexpr size_t kB1 = 16;
    static constexpr size_t kW2 = 16 * 16 * 9;
    static constexpr size_t kB2 = 16;
    static constexpr size_t kW3 = 16;
    static constexpr size_t kB3 = 1;
    static constexpr size_t kParamCount = kW1 + kB1 + kW2 + kB2 + kW3 + kB3;

    std::vector<double> params;
    uint64_t seed = 0;

    static ToyRegressor init(uint64_t seed);
    static ToyRegressor zeros();
};

DensityMap forward(const ToyRegressor& model, const Image& img, int threads = 1);

/// Exact reverse-mode gradient of the network w.r.t. all parameters for a
/// given upstream dL/d(output). Activations are recomputed internally.
std::vector<double> backward(const ToyRegressor& model, const Image& img,
                             const DensityMap& upstream, int threads = 1);

// Model JSON persistence (value-exact doubles).
void save_model(const ToyRegressor& model, const std::string& path);
ToyRegressor load_model(const std::string& path);

enum class LossKind { Gst, L2, DmCount };

LossKind loss_kind_from_string(const std::string& s);
std::string to_string(LossKind k);

struct TrainItem {
    Image image;
    AnnotationSet annotations;
    std::optional<TransportKernel> kernel; // required for LossKind::Gst
};

/// Dataset manifest entry; kernel may be empty when not needed.
struct ManifestItem {
    std::string image;
    std::string annotations;
    std::string kernel;
};

std::vector<ManifestItem> load_manifest(const std::string& path);
void save_manifest(const std::vector<ManifestItem>& items, const std::string& path);

/// Loads every referenced file. With need_kernels, a missing kernel path is
/// a MissingError.
std::vector<TrainItem> load_dataset(const std::string& manifest_path, bool need_kernels);

struct TrainConfig {
    LossKind loss = LossKind::Gst;
    int epochs = 1;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double sigma = 8.0; // pseudo-ground-truth width for the L2 baseline
    DmCountConfig dmcount;
    uint64_t seed = 0;
    int threads = 1;
    bool deterministic = false; // forces sequential, single-thread evaluation
};

struct StepRecord {
    int step = 0;
    double loss = 0.0;
    double count_err = 0.0; // signed: count(prediction) - N
    double transport_ms = 0.0;
    double total_ms = 0.0;
    int inner_iterations = 0; // Sinkhorn sweeps; 0 for kernel/L2 losses
};

struct TrainRun {
    std::vector<StepRecord> records;
    ToyRegressor model;
    double mean_transport_ms = 0.0;
};

/// Adam over the regressor parameters, batch size 1, per-step transport
/// compute timed separately from the model passes.
TrainRun train(const std::vector<TrainItem>& dataset, const TrainConfig& cfg);

/// Total predicted mass.
double count(const DensityMap& d);

struct EvalResult {
    double mae = 0.0;
    double rmse = 0.0;
};

EvalResult evaluate(const ToyRegressor& model, const std::vector<TrainItem>& dataset,
                    int threads = 1);

} // namespace gst
