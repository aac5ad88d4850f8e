#pragma once

#include "gst/image.hpp"
#include "gst/kernel.hpp"

namespace gst {

/// Density heatmap with the fixed piecewise-linear colormap
/// black -> red -> yellow -> white, normalized by the map maximum.
Image render_heatmap(const DensityMap& d);

/// Correspondence map: each pixel takes its argmax target's palette color
/// scaled by that weight; background-dominated pixels stay dark.
Image render_correspondence(const TransportKernel& k, int height, int width);

} // namespace gst
