#include "mos/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace mos {

FuseResult normalize(const Vec& v, double epsilon) {
  const double n = v.norm();
  if (!(n >= epsilon)) return {Vec::Zero(v.size()), true};
  return {v / n, false};
}

FuseResult fuse(const Vec& optical, std::span<const Vec> pseudo, double tau, double epsilon) {
  if (pseudo.empty()) fail(ErrorCode::Data, "fuse: empty pseudo-sample list");
  if (!(tau >= 0.0 && tau <= 1.0)) fail(ErrorCode::Config, "fuse: tau must lie in [0, 1]");
  Vec mean = Vec::Zero(optical.size());
  for (const auto& p : pseudo) {
    if (p.size() != optical.size()) fail(ErrorCode::Data, "fuse: dimension mismatch");
    mean += p;
  }
  mean /= static_cast<double>(pseudo.size());
  return normalize((1.0 - tau) * optical + tau * mean, epsilon);
}

Metric parse_metric(std::string_view text) {
  if (text == "euclidean") return Metric::Euclidean;
  if (text == "cosine") return Metric::Cosine;
  fail(ErrorCode::Config, "unknown metric '" + std::string(text) + "'");
}

DistanceMatrix pairwise_distances(std::span<const Vec> queries, std::span<const Vec> gallery, Metric metric) {
  if (gallery.empty()) fail(ErrorCode::Data, "distances: empty gallery");
  const auto d = gallery.front().size();
  for (const auto& v : queries)
    if (v.size() != d) fail(ErrorCode::Data, "distances: dimension mismatch");
  for (const auto& v : gallery)
    if (v.size() != d) fail(ErrorCode::Data, "distances: dimension mismatch");

  DistanceMatrix out;
  out.values.resize(static_cast<Eigen::Index>(queries.size()), static_cast<Eigen::Index>(gallery.size()));
  constexpr double kNormEps = 1e-12;
  std::vector<double> gnorm(gallery.size());
  for (std::size_t j = 0; j < gallery.size(); ++j) {
    gnorm[j] = gallery[j].norm();
    if (metric == Metric::Cosine && gnorm[j] < kNormEps) ++out.zero_norm;
  }
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const double qn = queries[i].norm();
    if (metric == Metric::Cosine && qn < kNormEps) ++out.zero_norm;
    for (std::size_t j = 0; j < gallery.size(); ++j) {
      double v;
      if (metric == Metric::Euclidean) {
        v = (queries[i] - gallery[j]).norm();
      } else if (qn < kNormEps || gnorm[j] < kNormEps) {
        v = 1.0;
      } else {
        v = 1.0 - queries[i].dot(gallery[j]) / (qn * gnorm[j]);
      }
      out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
  }
  if (!out.values.allFinite()) fail(ErrorCode::Numeric, "distances: non-finite value");
  return out;
}

Protocol parse_protocol(std::string_view text) {
  if (text == "all") return Protocol::AllToAll;
  if (text == "o2s") return Protocol::OpticalToSar;
  if (text == "s2o") return Protocol::SarToOptical;
  fail(ErrorCode::Config, "unknown protocol '" + std::string(text) + "'");
}

std::string_view protocol_name(Protocol p) {
  switch (p) {
    case Protocol::AllToAll: return "all";
    case Protocol::OpticalToSar: return "o2s";
    case Protocol::SarToOptical: return "s2o";
  }
  return "?";
}

bool ProtocolSpec::query_accepts(Modality m) const {
  switch (name) {
    case Protocol::AllToAll: return true;
    case Protocol::OpticalToSar: return m == Modality::Optical;
    case Protocol::SarToOptical: return m == Modality::Sar;
  }
  return false;
}

bool ProtocolSpec::gallery_accepts(Modality m) const {
  switch (name) {
    case Protocol::AllToAll: return true;
    case Protocol::OpticalToSar: return m == Modality::Sar;
    case Protocol::SarToOptical: return m == Modality::Optical;
  }
  return false;
}

EvalResult evaluate(std::span<const EmbeddingRecord> queries, std::span<const EmbeddingRecord> gallery, ProtocolSpec protocol,
                    Metric metric) {
  std::vector<std::size_t> q_idx, g_idx;
  for (std::size_t i = 0; i < queries.size(); ++i)
    if (protocol.query_accepts(queries[i].modality)) q_idx.push_back(i);
  for (std::size_t j = 0; j < gallery.size(); ++j)
    if (protocol.gallery_accepts(gallery[j].modality)) g_idx.push_back(j);
  if (g_idx.empty()) fail(ErrorCode::Data, "evaluate: gallery is empty after protocol filtering");

  std::vector<Vec> qv, gv;
  for (auto i : q_idx) qv.push_back(queries[i].vector);
  for (auto j : g_idx) gv.push_back(gallery[j].vector);
  const auto dist = pairwise_distances(qv, gv, metric);

  EvalResult out;
  double ap_sum = 0.0;
  std::size_t hit1 = 0, hit5 = 0, hit10 = 0;
  for (std::size_t qi = 0; qi < q_idx.size(); ++qi) {
    std::vector<std::size_t> local(g_idx.size());
    std::iota(local.begin(), local.end(), std::size_t{0});
    const auto row = dist.values.row(static_cast<Eigen::Index>(qi));
    std::stable_sort(local.begin(), local.end(), [&](std::size_t a, std::size_t b) {
      return row(static_cast<Eigen::Index>(a)) < row(static_cast<Eigen::Index>(b));
    });

    RankedRetrieval rr;
    rr.query = q_idx[qi];
    std::size_t hits = 0;
    double precision_sum = 0.0;
    for (std::size_t k = 0; k < local.size(); ++k) {
      const std::size_t g = g_idx[local[k]];
      const bool rel = gallery[g].identity == queries[q_idx[qi]].identity;
      rr.order.push_back(g);
      rr.relevant.push_back(rel);
      if (rel) {
        ++hits;
        precision_sum += static_cast<double>(hits) / static_cast<double>(k + 1);
        if (rr.first_relevant_rank == 0) rr.first_relevant_rank = k + 1;
      }
    }
    if (hits == 0) {
      ++out.excluded_queries;
      continue;
    }
    rr.average_precision = precision_sum / static_cast<double>(hits);
    ap_sum += rr.average_precision;
    hit1 += rr.first_relevant_rank <= 1;
    hit5 += rr.first_relevant_rank <= 5;
    hit10 += rr.first_relevant_rank <= 10;
    out.per_query.push_back(std::move(rr));
  }
  out.evaluated_queries = out.per_query.size();
  if (out.evaluated_queries > 0) {
    const double n = static_cast<double>(out.evaluated_queries);
    out.mAP = ap_sum / n;
    out.r1 = static_cast<double>(hit1) / n;
    out.r5 = static_cast<double>(hit5) / n;
    out.r10 = static_cast<double>(hit10) / n;
  }
  return out;
}

namespace {

constexpr char kEmbeddingMagic[4] = {'M', 'O', 'S', 'E'};
constexpr std::uint32_t kEmbeddingVersion = 1;

void write_f32(std::ostream& out, float v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

float read_f32(std::istream& in) {
  float v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) fail(ErrorCode::Data, "embedding file: truncated");
  return v;
}

}  // namespace

void write_embeddings(const std::filesystem::path& path, std::span<const EmbeddingRecord> records) {
  const std::uint32_t dim = records.empty() ? 0 : static_cast<std::uint32_t>(records.front().vector.size());
  for (const auto& r : records)
    if (r.vector.size() != dim) fail(ErrorCode::Data, "embedding file: mixed dimensions");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Data, "cannot write embeddings " + path.string());
  out.write(kEmbeddingMagic, 4);
  write_u32(out, kEmbeddingVersion);
  write_u32(out, static_cast<std::uint32_t>(records.size()));
  write_u32(out, dim);
  for (const auto& r : records) {
    write_u32(out, static_cast<std::uint32_t>(r.identity));
    const char tags[4] = {static_cast<char>(r.modality), static_cast<char>(r.source), 0, 0};
    out.write(tags, 4);
    for (Eigen::Index i = 0; i < r.vector.size(); ++i) write_f32(out, static_cast<float>(r.vector[i]));
  }
}

std::vector<EmbeddingRecord> read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Data, "cannot open embeddings " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kEmbeddingMagic, 4) != 0) fail(ErrorCode::Data, "not an embedding file");
  if (read_u32(in) != kEmbeddingVersion) fail(ErrorCode::Data, "unsupported embedding file version");
  const auto count = read_u32(in);
  const auto dim = read_u32(in);
  std::vector<EmbeddingRecord> records;
  for (std::uint32_t k = 0; k < count; ++k) {
    EmbeddingRecord r;
    r.identity = static_cast<int>(read_u32(in));
    unsigned char tags[4];
    if (!in.read(reinterpret_cast<char*>(tags), 4)) fail(ErrorCode::Data, "embedding file: truncated");
    if (tags[0] > 1 || tags[1] > 1) fail(ErrorCode::Data, "embedding file: bad modality/source tag");
    if (r.identity < 1) fail(ErrorCode::Data, "embedding file: identity must be >= 1");
    r.modality = static_cast<Modality>(tags[0]);
    r.source = static_cast<Source>(tags[1]);
    r.vector.resize(dim);
    for (std::uint32_t i = 0; i < dim; ++i) r.vector[i] = read_f32(in);
    if (!r.vector.allFinite()) fail(ErrorCode::Data, "embedding file: non-finite value");
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<EmbeddingRecord> embed_records(const EmbedderParams& embedder, std::span<const LabeledImage> images,
                                           bool denoise, const DenoiseConfig& denoise_cfg, bool normalized) {
  std::vector<LabeledImage> prepared;
  for (const auto& img : images) prepared.push_back(preprocess(img, denoise, denoise_cfg));
  const Mat feats = embed_all(embedder, prepared);
  std::vector<EmbeddingRecord> out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    Vec v = feats.col(static_cast<Eigen::Index>(i));
    if (normalized) v = normalize(v).vector;
    out.push_back({std::move(v), images[i].identity, images[i].modality, Source::Real});
  }
  return out;
}

std::vector<EmbeddingRecord> fused_records(const EmbedderParams& embedder, const MlpNoisePredictor& bridge,
                                           std::span<const LabeledImage> images, bool denoise,
                                           const DenoiseConfig& denoise_cfg, const FusionConfig& fusion) {
  const auto schedule = make_schedule(bridge.schedule_steps());
  // same batched embedding call as the unfused path, so tau = 0 reproduces it bit for bit
  auto out = embed_records(embedder, images, denoise, denoise_cfg, false);
  for (std::size_t i = 0; i < images.size(); ++i) {
    auto& rec = out[i];
    if (rec.modality == Modality::Sar) {
      rec.vector = normalize(rec.vector).vector;
      continue;
    }
    // pseudo-SAR images already live in the preprocessed SAR domain the bridge was trained on
    const auto pseudo =
        generate_pseudo_set(bridge, images[i], fusion.k, schedule, fusion.sampler_steps, sub_seed(fusion.seed, i));
    const Mat pf = embed_all(embedder, pseudo);
    std::vector<Vec> pseudo_features;
    for (Eigen::Index k = 0; k < pf.cols(); ++k) pseudo_features.push_back(pf.col(k));
    rec.vector = fuse(rec.vector, pseudo_features, fusion.tau).vector;
    rec.source = Source::Fused;
  }
  return out;
}

EvalResult fused_evaluate(const EmbedderParams& embedder, const MlpNoisePredictor& bridge,
                          std::span<const LabeledImage> query_images, std::span<const LabeledImage> gallery_images,
                          bool denoise, const DenoiseConfig& denoise_cfg, const FusionConfig& fusion, Protocol protocol,
                          Metric metric) {
  FusionConfig qcfg = fusion, gcfg = fusion;
  qcfg.seed = stage_seed(fusion.seed, "fusion/query");
  gcfg.seed = stage_seed(fusion.seed, "fusion/gallery");
  const auto q = fused_records(embedder, bridge, query_images, denoise, denoise_cfg, qcfg);
  const auto g = fused_records(embedder, bridge, gallery_images, denoise, denoise_cfg, gcfg);
  return evaluate(q, g, ProtocolSpec{protocol}, metric);
}

}  // namespace mos
