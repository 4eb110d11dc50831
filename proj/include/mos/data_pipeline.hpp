#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mos/common.hpp"
#include "mos/image.hpp"

namespace mos {

enum class Split { Train, Query, Gallery };

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory
  int identity = 1;
  Modality modality = Modality::Optical;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  Split split = Split::Train;
};

/// Manifest plus decoded images, index-aligned with `manifest.entries`.
struct Dataset {
  DatasetManifest manifest;
  std::vector<LabeledImage> images;
};

/// Parses `relative/path.png,identity,modality` lines. Blank lines and lines
/// starting with '#' are skipped. When `check_files` is set every path must
/// exist relative to the manifest's directory.
DatasetManifest load_manifest(const std::filesystem::path& path, bool check_files = true);
DatasetManifest parse_manifest(const std::string& text);
std::string format_manifest(const DatasetManifest& manifest);

/// Reads `manifest.csv` (or the given .csv) and all referenced PNGs.
Dataset load_dataset(const std::filesystem::path& dir_or_manifest);
/// Writes PNGs and `manifest.csv` under `dir`.
void write_dataset(const std::filesystem::path& dir, const Dataset& data);

struct SynthConfig {
  int num_ids = 10;
  int imgs_per_id_per_modality = 8;
  int side = 32;
  std::uint64_t seed = 7;
  // Index of the first rendering per identity. Renderings are a pure function
  // of (seed, identity, modality, index), so a disjoint offset yields fresh
  // images of the same identities.
  int first_index = 0;
};

/// Seeded two-modality toy dataset. Each identity is a blob layout; optical
/// renderings add mild Gaussian noise, SAR renderings invert contrast, apply a
/// random gain and exponential speckle concentrated in dark regions.
Dataset generate_synthetic(const SynthConfig& cfg);

struct Batch {
  std::vector<std::size_t> indices;  // into the source dataset
  std::vector<LabeledImage> images;
  std::size_t size() const { return images.size(); }
};

/// Identities owning images in both modalities, ascending.
std::vector<int> dual_modality_identities(const DatasetManifest& manifest);

/// P identities x K instances, each identity contributing both modalities.
/// Draws without replacement inside an identity/modality pool when it is large
/// enough, with replacement otherwise.
Batch sample_balanced_batch(const Dataset& data, int identities_per_batch, int instances_per_identity, Rng& rng);

/// Applies each enabled flip with probability 1/2 to every image (both modalities).
void augment_flips(Batch& batch, bool horizontal, bool vertical, Rng& rng);

}  // namespace mos
