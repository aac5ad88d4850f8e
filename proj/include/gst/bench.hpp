#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace gst {

/// Per-step transport-loss timing: the pre-computed-kernel loss against a
/// fixed-k Sinkhorn loss on identical instances.
struct BenchConfig {
    std::vector<std::pair<int, int>> sizes; // (height, width)
    std::vector<int> point_counts;
    int sinkhorn_k = 100;
    double epsilon = 0.01;
    int repeats = 10;
    double sigma = 8.0; // heuristic kernel width
    double cutoff_d = 3.0;
    uint64_t seed = 0;
    int threads = 1;
};

struct BenchRow {
    int height = 0;
    int width = 0;
    int n_points = 0;
    std::string method;
    double mean_ms = 0.0;
    double std_ms = 0.0;
    double kernel_build_ms = 0.0; // one-time pre-computation; gst rows only
};

std::vector<BenchRow> run_bench(const BenchConfig& cfg);

} // namespace gst
