#pragma once

#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "mos/bridge_gen.hpp"
#include "mos/embed_train.hpp"

namespace mos {

enum class Source : std::uint8_t { Real = 0, Fused = 1 };

struct EmbeddingRecord {
  Vec vector;
  int identity = 1;
  Modality modality = Modality::Optical;
  Source source = Source::Real;
};

struct FuseResult {
  Vec vector;
  bool degenerate = false;  // ||v|| < epsilon; vector is zero
};

/// v = (1 - tau) f_opt + tau mean(pseudo), returned L2-normalized.
FuseResult fuse(const Vec& optical, std::span<const Vec> pseudo, double tau, double epsilon = 1e-12);

/// v / ||v||, or zero with degenerate = true when ||v|| < epsilon.
FuseResult normalize(const Vec& v, double epsilon = 1e-12);

enum class Metric { Euclidean, Cosine };
Metric parse_metric(std::string_view text);

struct DistanceMatrix {
  Mat values;                  // |Q| x |G|
  std::size_t zero_norm = 0;   // vectors treated as distance 1 under Cosine
};

DistanceMatrix pairwise_distances(std::span<const Vec> queries, std::span<const Vec> gallery, Metric metric);

enum class Protocol { AllToAll, OpticalToSar, SarToOptical };
Protocol parse_protocol(std::string_view text);  // all | o2s | s2o
std::string_view protocol_name(Protocol p);

struct ProtocolSpec {
  Protocol name = Protocol::AllToAll;
  bool query_accepts(Modality m) const;
  bool gallery_accepts(Modality m) const;
};

struct RankedRetrieval {
  std::size_t query = 0;              // index into the query records
  std::vector<std::size_t> order;     // gallery record indices, nearest first
  std::vector<bool> relevant;         // aligned with order
  double average_precision = 0.0;
  std::size_t first_relevant_rank = 0;  // 1-based
};

struct EvalResult {
  double mAP = 0.0;
  double r1 = 0.0, r5 = 0.0, r10 = 0.0;
  std::size_t excluded_queries = 0;  // after filtering, no relevant gallery item
  std::size_t evaluated_queries = 0;
  std::vector<RankedRetrieval> per_query;
};

/// Ranks the protocol-filtered gallery for every protocol-filtered query.
/// Distance ties are broken by ascending gallery index.
EvalResult evaluate(std::span<const EmbeddingRecord> queries, std::span<const EmbeddingRecord> gallery, ProtocolSpec protocol,
                    Metric metric);

/// Little-endian MOSE v1 embedding file.
void write_embeddings(const std::filesystem::path& path, std::span<const EmbeddingRecord> records);
std::vector<EmbeddingRecord> read_embeddings(const std::filesystem::path& path);

/// Real embeddings of preprocessed images; `normalized` L2-normalizes each one.
std::vector<EmbeddingRecord> embed_records(const EmbedderParams& embedder, std::span<const LabeledImage> images,
                                           bool denoise, const DenoiseConfig& denoise_cfg, bool normalized);

struct FusionConfig {
  double tau = 0.2;
  int k = 5;
  int sampler_steps = 10;
  std::uint64_t seed = 7;
};

/// Optical images are replaced by their fused embedding (K pseudo-SAR images
/// generated, embedded, fused); SAR images keep their normalized real
/// embedding. Pseudo-SAR seeds depend on (seed, position in `images`).
std::vector<EmbeddingRecord> fused_records(const EmbedderParams& embedder, const MlpNoisePredictor& bridge,
                                           std::span<const LabeledImage> images, bool denoise,
                                           const DenoiseConfig& denoise_cfg, const FusionConfig& fusion);

EvalResult fused_evaluate(const EmbedderParams& embedder, const MlpNoisePredictor& bridge,
                          std::span<const LabeledImage> query_images, std::span<const LabeledImage> gallery_images,
                          bool denoise, const DenoiseConfig& denoise_cfg, const FusionConfig& fusion, Protocol protocol,
                          Metric metric);

}  // namespace mos
