#pragma once

#include <filesystem>
#include <vector>

#include "mos/common.hpp"

namespace mos {

/// Grayscale intensity grid with identity label and modality tag.
/// Pixels are row-major; values are real-valued in [0, 255].
struct LabeledImage {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;
  int identity = 1;
  Modality modality = Modality::Optical;

  std::size_t size() const { return pixels.size(); }
  double at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
  double& at(int row, int col) { return pixels[static_cast<std::size_t>(row) * width + col]; }

  /// Throws Error(Data) if any invariant is violated.
  void validate() const;

  /// Flattened pixels scaled to [0, 1].
  Vec as_unit_vector() const;
};

LabeledImage make_image(int height, int width, std::vector<double> pixels, int identity, Modality modality);

LabeledImage flip_horizontal(const LabeledImage& img);
LabeledImage flip_vertical(const LabeledImage& img);

/// Reads an 8-bit grayscale PNG (colour inputs are rejected).
LabeledImage read_png(const std::filesystem::path& path, int identity, Modality modality);

/// Writes an 8-bit grayscale PNG, rounding to nearest and clamping to [0, 255].
void write_png(const std::filesystem::path& path, const LabeledImage& img);

}  // namespace mos
