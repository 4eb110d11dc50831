#include "mos/sar_denoise.hpp"

#include <algorithm>
#include <cmath>

namespace mos {

void DenoiseConfig::validate() const {
  if (!(alpha >= 0.0 && alpha < 100.0)) fail(ErrorCode::Config, "denoise: alpha must lie in [0, 100)");
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) fail(ErrorCode::Config, "denoise: epsilon must be > 0");
}

std::vector<double> sort_pixels(const LabeledImage& image) {
  image.validate();
  std::vector<double> sorted = image.pixels;
  std::stable_sort(sorted.begin(), sorted.end());
  return sorted;
}

LabeledImage denoise_image(const LabeledImage& image, const DenoiseConfig& cfg, bool force) {
  cfg.validate();
  if (image.pixels.empty()) fail(ErrorCode::Data, "denoise: empty image");
  if (image.modality != Modality::Sar && !force) fail(ErrorCode::Data, "denoise: input is not a SAR image");

  const auto sorted = sort_pixels(image);
  const std::size_t n = sorted.size();
  const auto k_cut = static_cast<std::size_t>(std::floor(cfg.alpha / 100.0 * static_cast<double>(n)));
  const double p_min = sorted[k_cut];
  const double p_max = sorted[n - 1];
  const double scale = 255.0 / (p_max - p_min + cfg.epsilon);

  LabeledImage out = image;
  for (double& p : out.pixels) p = p < p_min ? 0.0 : (p - p_min) * scale;
  return out;
}

}  // namespace mos
