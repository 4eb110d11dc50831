#pragma once

#include <vector>

#include "mos/image.hpp"

namespace mos {

struct DenoiseConfig {
  double alpha = 5.0;     // percent of darkest pixels discarded, in [0, 100)
  double epsilon = 1e-6;  // keeps the rescale finite when p_max == p_min
  void validate() const;
};

/// All intensities in ascending order (stable).
std::vector<double> sort_pixels(const LabeledImage& image);

/// Percentile speckle suppression: the k_cut = floor(alpha/100 * N) darkest
/// pixels are discarded (set to 0); the rest are rescaled linearly so that
/// [p_min, p_max] maps onto [0, 255), with p_min = sorted[k_cut] and
/// p_max = sorted[N-1].
///
/// Not idempotent: re-running moves the percentile threshold.
/// Optical inputs are rejected unless `force` is set.
LabeledImage denoise_image(const LabeledImage& image, const DenoiseConfig& cfg, bool force = false);

}  // namespace mos
