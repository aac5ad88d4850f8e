#include "gst/viz.hpp"

#include <algorithm>
#include <cmath>

namespace gst {

namespace {

// t in [0,1] -> black, red, yellow, white.
void heat_color(double t, double* rgb) {
    rgb[0] = std::clamp(3.0 * t, 0.0, 1.0);
    rgb[1] = std::clamp(3.0 * t - 1.0, 0.0, 1.0);
    rgb[2] = std::clamp(3.0 * t - 2.0, 0.0, 1.0);
}

// Golden-angle hue wheel, one distinct color per target.
void target_color(uint32_t n, double* rgb) {
    const double h = std::fmod(0.61803398874989485 * static_cast<double>(n), 1.0) * 6.0;
    const double s = 0.85, v = 1.0;
    const int i = static_cast<int>(h) % 6;
    const double f = h - std::floor(h);
    const double p = v * (1.0 - s), q = v * (1.0 - s * f), t = v * (1.0 - s * (1.0 - f));
    switch (i) {
        case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
        case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
        case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
        case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
        case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
        default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
    }
}

} // namespace

Image render_heatmap(const DensityMap& d) {
    double peak = 0.0;
    for (double v : d.values) peak = std::max(peak, v);
    Image img(d.height, d.width, 3, 0.0);
    if (peak <= 0.0) return img;
    double rgb[3];
    for (int r = 0; r < d.height; ++r) {
        for (int c = 0; c < d.width; ++c) {
            heat_color(d.at(r, c) / peak, rgb);
            for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = rgb[ch];
        }
    }
    return img;
}

Image render_correspondence(const TransportKernel& k, int height, int width) {
    if (static_cast<uint64_t>(height) * width != k.n_pixels)
        throw DataError("dimensions do not match kernel pixel count");
    Image img(height, width, 3, 0.0);
    double rgb[3];
    for (size_t i = 0; i < k.n_pixels; ++i) {
        uint32_t best_col = 0;
        double best_w = -1.0;
        for (size_t j = k.row_offsets[i]; j < k.row_offsets[i + 1]; ++j) {
            if (k.weights[j] > best_w) {
                best_w = k.weights[j];
                best_col = k.cols[j];
            }
        }
        if (best_col == 0) continue; // background stays dark
        target_color(best_col, rgb);
        for (int ch = 0; ch < 3; ++ch)
            img.values[i * 3 + static_cast<size_t>(ch)] = rgb[ch] * best_w;
    }
    return img;
}

} // namespace gst
