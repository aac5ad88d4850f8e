#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gst/errors.hpp"

namespace gst {

/// Dense image, row-major, channel-interleaved, values nominally in [0,1].
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0; // 1 or 3
    std::vector<double> values; // height * width * channels

    Image() = default;
    Image(int h, int w, int c, double fill = 0.0);

    double& at(int r, int c, int ch) {
        return values[static_cast<size_t>((r * width + c) * channels + ch)];
    }
    double at(int r, int c, int ch) const {
        return values[static_cast<size_t>((r * width + c) * channels + ch)];
    }
    size_t pixel_count() const { return static_cast<size_t>(height) * static_cast<size_t>(width); }

    /// Throws DataError unless dimensions, length and finiteness hold.
    void validate() const;
};

/// Point annotations in (row, col) pixel units. Index 0 of the extended
/// target set is the virtual background object y0; real annotations map to
/// target columns 1..N in file order.
struct AnnotationSet {
    std::vector<std::array<double, 2>> points; // (row, col)
    int image_height = 0;
    int image_width = 0;

    size_t count() const { return points.size(); }
    void validate() const; // bounds + finiteness
};

/// Non-negative per-pixel scalar field.
struct DensityMap {
    int height = 0;
    int width = 0;
    std::vector<double> values;

    DensityMap() = default;
    DensityMap(int h, int w, double fill = 0.0);

    double& at(int r, int c) { return values[static_cast<size_t>(r * width + c)]; }
    double at(int r, int c) const { return values[static_cast<size_t>(r * width + c)]; }
    size_t size() const { return values.size(); }

    void validate() const; // non-negative, finite
};

/// Target masses over the extended set {y0, y1, ..., yN}: 0 for y0, 1 per
/// real annotation.
std::vector<double> annotation_target(size_t n_annotations);

/// Continuous coordinate of the center of pixel (r, c).
inline std::array<double, 2> pixel_center(int r, int c) {
    return {static_cast<double>(r) + 0.5, static_cast<double>(c) + 0.5};
}

// --- file I/O ------------------------------------------------------------

/// Reads a binary PPM (P6), PGM (P5) or an 8-bit non-interlaced PNG.
/// Samples are scaled to [0,1] by /255.
Image load_image(const std::string& path);

/// Writes .ppm/.pgm or .png by extension. Values are clamped to [0,1] and
/// quantized to 8 bits; reload error is at most 1/255 per sample.
void save_image(const Image& img, const std::string& path);

/// Annotation JSON: {"points": [[row, col], ...]}. Points outside
/// [0,height) x [0,width) are rejected.
AnnotationSet load_annotations(const std::string& path, int height, int width);
void save_annotations(const AnnotationSet& ann, const std::string& path);

/// Probability vector over pixels proportional to d. Throws DataError on
/// zero total mass.
std::vector<double> normalize(const DensityMap& d);

} // namespace gst
