#include "mos/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace mos {

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

int parse_identity(const std::string& text, std::size_t line_no) {
  std::size_t used = 0;
  long value = 0;
  try {
    value = std::stol(text, &used);
  } catch (const std::exception&) {
    fail(ErrorCode::Data, "manifest line " + std::to_string(line_no) + ": identity is not an integer");
  }
  if (used != text.size()) fail(ErrorCode::Data, "manifest line " + std::to_string(line_no) + ": identity is not an integer");
  if (value < 1) fail(ErrorCode::Data, "manifest line " + std::to_string(line_no) + ": identity must be >= 1");
  if (value > 1'000'000'000) fail(ErrorCode::Data, "manifest line " + std::to_string(line_no) + ": identity too large");
  return static_cast<int>(value);
}

std::filesystem::path manifest_path_of(const std::filesystem::path& dir_or_manifest) {
  if (std::filesystem::is_directory(dir_or_manifest)) return dir_or_manifest / "manifest.csv";
  return dir_or_manifest;
}

}  // namespace

DatasetManifest parse_manifest(const std::string& text) {
  DatasetManifest manifest;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;

    std::vector<std::string> fields;
    std::stringstream row(line);
    std::string field;
    while (std::getline(row, field, ',')) fields.push_back(trim(field));
    if (fields.size() != 3 || fields[0].empty())
      fail(ErrorCode::Data, "manifest line " + std::to_string(line_no) + ": expected path,identity,modality");

    ManifestEntry entry;
    entry.path = fields[0];
    entry.identity = parse_identity(fields[1], line_no);
    entry.modality = parse_modality(fields[2]);
    if (!seen.insert(entry.path).second) fail(ErrorCode::Data, "manifest: duplicate path " + entry.path);
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& path, bool check_files) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Data, "cannot open manifest " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  DatasetManifest manifest = parse_manifest(buffer.str());
  if (check_files) {
    const auto base = path.parent_path();
    for (const auto& e : manifest.entries) {
      if (!std::filesystem::exists(base / e.path)) fail(ErrorCode::Data, "manifest references missing file " + e.path);
    }
  }
  return manifest;
}

std::string format_manifest(const DatasetManifest& manifest) {
  std::string out;
  for (const auto& e : manifest.entries) {
    out += e.path + "," + std::to_string(e.identity) + "," + std::string(modality_name(e.modality)) + "\n";
  }
  return out;
}

Dataset load_dataset(const std::filesystem::path& dir_or_manifest) {
  const auto path = manifest_path_of(dir_or_manifest);
  Dataset data;
  data.manifest = load_manifest(path, true);
  const auto base = path.parent_path();
  data.images.reserve(data.manifest.entries.size());
  for (const auto& e : data.manifest.entries) data.images.push_back(read_png(base / e.path, e.identity, e.modality));
  return data;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < data.images.size(); ++i) write_png(dir / data.manifest.entries[i].path, data.images[i]);
  std::ofstream out(dir / "manifest.csv", std::ios::binary);
  if (!out) fail(ErrorCode::Data, "cannot write manifest in " + dir.string());
  out << format_manifest(data.manifest);
}

namespace {

struct Blob {
  double row, col, sigma, amplitude;
};

std::vector<double> base_pattern(int side, std::uint64_t seed, int identity) {
  Rng rng(sub_seed(stage_seed(seed, "synth/pattern"), static_cast<std::uint64_t>(identity)));
  const double background = 45.0 + 25.0 * uniform01(rng);
  const int num_blobs = 3 + static_cast<int>(uniform_index(rng, 3));
  std::vector<Blob> blobs;
  for (int b = 0; b < num_blobs; ++b) {
    Blob blob;
    blob.row = side * (0.15 + 0.7 * uniform01(rng));
    blob.col = side * (0.15 + 0.7 * uniform01(rng));
    blob.sigma = side * (0.06 + 0.12 * uniform01(rng));
    blob.amplitude = 100.0 + 100.0 * uniform01(rng);
    blobs.push_back(blob);
  }
  std::vector<double> px(static_cast<std::size_t>(side) * side);
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      double v = background;
      for (const auto& b : blobs) {
        const double d2 = (r - b.row) * (r - b.row) + (c - b.col) * (c - b.col);
        v += b.amplitude * std::exp(-0.5 * d2 / (b.sigma * b.sigma));
      }
      px[static_cast<std::size_t>(r) * side + c] = std::min(v, 255.0);
    }
  }
  return px;
}

LabeledImage render(const std::vector<double>& base, int side, int identity, Modality modality, Rng& rng) {
  std::vector<double> px(base.size());
  if (modality == Modality::Optical) {
    const double gain = 0.9 + 0.2 * uniform01(rng);
    for (std::size_t i = 0; i < base.size(); ++i) px[i] = std::clamp(gain * base[i] + 6.0 * standard_normal(rng), 0.0, 255.0);
  } else {
    const double gain = 0.55 + 0.45 * uniform01(rng);
    for (std::size_t i = 0; i < base.size(); ++i) {
      const double inverted = 255.0 - base[i];
      // speckle weight: 1 in dark regions, fading to 0 above intensity 110
      const double weight = std::clamp(1.0 - inverted / 110.0, 0.0, 1.0);
      const double speckle = 1.0 + weight * (standard_exponential(rng) - 1.0);
      px[i] = std::clamp(gain * inverted * speckle, 0.0, 255.0);
    }
  }
  // integer intensities, so a PNG round trip is lossless
  for (double& v : px) v = std::round(v);
  return LabeledImage{side, side, std::move(px), identity, modality};
}

}  // namespace

Dataset generate_synthetic(const SynthConfig& cfg) {
  if (cfg.num_ids < 2) fail(ErrorCode::Config, "synthetic: num_ids must be >= 2");
  if (cfg.imgs_per_id_per_modality < 1) fail(ErrorCode::Config, "synthetic: imgs_per_id_per_modality must be >= 1");
  if (cfg.side < 8) fail(ErrorCode::Config, "synthetic: side must be >= 8");
  if (cfg.first_index < 0) fail(ErrorCode::Config, "synthetic: first_index must be >= 0");

  Dataset data;
  for (int id = 1; id <= cfg.num_ids; ++id) {
    const auto base = base_pattern(cfg.side, cfg.seed, id);
    for (Modality m : {Modality::Optical, Modality::Sar}) {
      const auto stream = sub_seed(stage_seed(cfg.seed, m == Modality::Optical ? "synth/optical" : "synth/sar"),
                                   static_cast<std::uint64_t>(id));
      for (int k = 0; k < cfg.imgs_per_id_per_modality; ++k) {
        const int index = cfg.first_index + k;
        Rng rng(sub_seed(stream, static_cast<std::uint64_t>(index)));
        data.images.push_back(render(base, cfg.side, id, m, rng));
        char name[64];
        std::snprintf(name, sizeof(name), "%s/id%04d_%03d.png", std::string(modality_name(m)).c_str(), id, index);
        data.manifest.entries.push_back({name, id, m});
      }
    }
  }
  return data;
}

std::vector<int> dual_modality_identities(const DatasetManifest& manifest) {
  std::map<int, std::pair<bool, bool>> seen;
  for (const auto& e : manifest.entries) {
    auto& s = seen[e.identity];
    (e.modality == Modality::Optical ? s.first : s.second) = true;
  }
  std::vector<int> ids;
  for (const auto& [id, s] : seen)
    if (s.first && s.second) ids.push_back(id);
  return ids;
}

namespace {

void draw_from_pool(const std::vector<std::size_t>& pool, int count, Rng& rng, std::vector<std::size_t>& out) {
  if (static_cast<std::size_t>(count) <= pool.size()) {
    // partial Fisher-Yates
    std::vector<std::size_t> p = pool;
    for (int i = 0; i < count; ++i) {
      const std::size_t j = static_cast<std::size_t>(i) + uniform_index(rng, p.size() - static_cast<std::size_t>(i));
      std::swap(p[static_cast<std::size_t>(i)], p[j]);
      out.push_back(p[static_cast<std::size_t>(i)]);
    }
  } else {
    for (int i = 0; i < count; ++i) out.push_back(pool[uniform_index(rng, pool.size())]);
  }
}

}  // namespace

Batch sample_balanced_batch(const Dataset& data, int identities_per_batch, int instances_per_identity, Rng& rng) {
  if (identities_per_batch < 2) fail(ErrorCode::Config, "sampler: identities per batch must be >= 2");
  if (instances_per_identity < 2) fail(ErrorCode::Config, "sampler: instances per identity must be >= 2");

  std::map<int, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> pools;
  for (std::size_t i = 0; i < data.manifest.entries.size(); ++i) {
    const auto& e = data.manifest.entries[i];
    auto& p = pools[e.identity];
    (e.modality == Modality::Optical ? p.first : p.second).push_back(i);
  }
  std::vector<int> ids = dual_modality_identities(data.manifest);
  if (ids.size() < static_cast<std::size_t>(identities_per_batch))
    fail(ErrorCode::Data, "sampler: only " + std::to_string(ids.size()) + " dual-modality identities, need " +
                              std::to_string(identities_per_batch));

  for (int i = 0; i < identities_per_batch; ++i) {
    const std::size_t j = static_cast<std::size_t>(i) + uniform_index(rng, ids.size() - static_cast<std::size_t>(i));
    std::swap(ids[static_cast<std::size_t>(i)], ids[j]);
  }

  Batch batch;
  const int n_opt = (instances_per_identity + 1) / 2;
  const int n_sar = instances_per_identity - n_opt;
  for (int i = 0; i < identities_per_batch; ++i) {
    const auto& [opt, sar] = pools.at(ids[static_cast<std::size_t>(i)]);
    draw_from_pool(opt, n_opt, rng, batch.indices);
    draw_from_pool(sar, n_sar, rng, batch.indices);
  }
  for (auto idx : batch.indices) batch.images.push_back(data.images[idx]);
  return batch;
}

void augment_flips(Batch& batch, bool horizontal, bool vertical, Rng& rng) {
  for (auto& img : batch.images) {
    if (horizontal && uniform01(rng) < 0.5) img = flip_horizontal(img);
    if (vertical && uniform01(rng) < 0.5) img = flip_vertical(img);
  }
}

}  // namespace mos
