#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace gst {

// Deterministic RNG. std::mt19937_64 is bit-stable across platforms, but the
// std distributions are not, so uniform/normal are derived by hand.
class Rng {
  public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [lo, hi] via rejection-free scaling (fine at these scales)
    int64_t uniform_int(int64_t lo, int64_t hi) {
        return lo + static_cast<int64_t>(uniform() * static_cast<double>(hi - lo + 1));
    }

    // Box-Muller; one value per call, cache discarded for simplicity
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Fisher-Yates
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 engine_;
};

} // namespace gst
