#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "metric_check.hpp"
#include "mos/retrieval.hpp"

using namespace mos;

namespace {

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

std::vector<unsigned char> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("fusion examples") {
  const std::vector<Vec> pseudo{vec2(0.0, 1.0)};
  const auto a = fuse(vec2(3.0, 4.0), pseudo, 0.0);
  CHECK(a.vector[0] == doctest::Approx(0.6));
  CHECK(a.vector[1] == doctest::Approx(0.8));
  CHECK_FALSE(a.degenerate);

  const auto b = fuse(vec2(1.0, 0.0), pseudo, 0.5);
  CHECK(b.vector[0] == doctest::Approx(std::sqrt(0.5)));
  CHECK(b.vector[1] == doctest::Approx(std::sqrt(0.5)));

  const std::vector<Vec> two{vec2(0.0, 2.0), vec2(0.0, 4.0)};
  const auto c = fuse(vec2(1.0, 0.0), two, 1.0);
  CHECK(c.vector[0] == 0.0);
  CHECK(c.vector[1] == doctest::Approx(1.0));

  const std::vector<Vec> opposite{vec2(-1.0, 0.0)};
  const auto d = fuse(vec2(1.0, 0.0), opposite, 0.5);
  CHECK(d.degenerate);
  CHECK(d.vector.norm() == 0.0);

  CHECK_THROWS_AS(fuse(vec2(1.0, 0.0), pseudo, 1.5), Error);
  CHECK_THROWS_AS(fuse(vec2(1.0, 0.0), pseudo, -0.1), Error);
  CHECK_THROWS_AS(fuse(vec2(1.0, 0.0), std::vector<Vec>{}, 0.2), Error);
  CHECK_THROWS_AS(fuse(vec2(1.0, 0.0), std::vector<Vec>{Vec::Zero(3)}, 0.2), Error);
}

TEST_CASE("distances") {
  const std::vector<Vec> q{vec2(1.0, 0.0)};
  const std::vector<Vec> g{vec2(1.0, 0.0), vec2(0.0, 1.0), vec2(0.0, 0.0)};
  const auto e = pairwise_distances(q, g, Metric::Euclidean);
  CHECK(e.values(0, 0) == doctest::Approx(0.0));
  CHECK(e.values(0, 1) == doctest::Approx(std::sqrt(2.0)));
  const auto c = pairwise_distances(q, g, Metric::Cosine);
  CHECK(c.values(0, 0) == doctest::Approx(0.0));
  CHECK(c.values(0, 1) == doctest::Approx(1.0));
  CHECK(c.values(0, 2) == 1.0);
  CHECK(c.zero_norm == 1);
  CHECK_THROWS_AS(pairwise_distances(q, std::vector<Vec>{}, Metric::Euclidean), Error);
  CHECK(parse_metric("cosine") == Metric::Cosine);
  CHECK_THROWS_AS(parse_metric("manhattan"), Error);
}

TEST_CASE("euclidean and cosine rank unit vectors identically") {
  Rng rng(73);
  std::vector<EmbeddingRecord> q, g;
  for (int i = 0; i < 8; ++i) q.push_back({normalize(Vec::Random(6)).vector, 1 + i % 4, Modality::Optical, Source::Real});
  for (int i = 0; i < 30; ++i) g.push_back({normalize(Vec::Random(6)).vector, 1 + i % 4, Modality::Sar, Source::Real});
  const auto e = evaluate(q, g, ProtocolSpec{}, Metric::Euclidean);
  const auto c = evaluate(q, g, ProtocolSpec{}, Metric::Cosine);
  CHECK(e.mAP == doctest::Approx(c.mAP).epsilon(1e-12));
  for (std::size_t i = 0; i < e.per_query.size(); ++i) CHECK(e.per_query[i].order == c.per_query[i].order);
}

TEST_CASE("average precision hand example") {
  const auto r = metriccheck::hand_example();
  CHECK(r.mAP == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK(r.r1 == 1.0);
  REQUIRE(r.per_query.size() == 1);
  CHECK(r.per_query[0].relevant == std::vector<bool>{true, false, true});
}

TEST_CASE("perfect retrieval") {
  std::vector<EmbeddingRecord> q{{vec2(0, 0), 1, Modality::Optical, Source::Real}};
  std::vector<EmbeddingRecord> g{{vec2(0.1, 0), 1, Modality::Sar, Source::Real},
                                 {vec2(5, 0), 2, Modality::Sar, Source::Real},
                                 {vec2(6, 0), 3, Modality::Sar, Source::Real}};
  const auto r = evaluate(q, g, ProtocolSpec{}, Metric::Euclidean);
  CHECK(r.mAP == 1.0);
  CHECK(r.r1 == 1.0);
  CHECK(r.r5 == 1.0);
  CHECK(r.r10 == 1.0);
}

TEST_CASE("ties break by gallery index") {
  std::vector<EmbeddingRecord> q{{vec2(0, 0), 1, Modality::Optical, Source::Real}};
  std::vector<EmbeddingRecord> g{{vec2(1, 0), 2, Modality::Sar, Source::Real},
                                 {vec2(0, 1), 1, Modality::Sar, Source::Real},
                                 {vec2(-1, 0), 3, Modality::Sar, Source::Real}};
  const auto r = evaluate(q, g, ProtocolSpec{}, Metric::Euclidean);
  CHECK(r.per_query[0].order == std::vector<std::size_t>{0, 1, 2});
  CHECK(r.mAP == doctest::Approx(0.5));
  CHECK(r.r1 == 0.0);
}

TEST_CASE("brute-force oracle agreement") {
  Rng rng(79);
  int agree = 0;
  for (int i = 0; i < 200; ++i) agree += metriccheck::instance_matches(rng);
  CHECK(agree == 200);
}

TEST_CASE("protocol filters") {
  std::vector<EmbeddingRecord> q, g;
  for (int i = 0; i < 65; ++i) q.push_back({Vec::Constant(2, i), 1 + i % 5, Modality::Optical, Source::Real});
  for (int i = 0; i < 67; ++i) q.push_back({Vec::Constant(2, i), 1 + i % 5, Modality::Sar, Source::Real});
  for (int i = 0; i < 403; ++i) g.push_back({Vec::Constant(2, i), 1 + i % 5, Modality::Optical, Source::Real});
  for (int i = 0; i < 190; ++i) g.push_back({Vec::Constant(2, i), 1 + i % 5, Modality::Sar, Source::Real});

  const auto o2s = evaluate(q, g, ProtocolSpec{parse_protocol("o2s")}, Metric::Euclidean);
  CHECK(o2s.evaluated_queries + o2s.excluded_queries == 65);
  CHECK(o2s.per_query.front().order.size() == 190);
  for (const auto& rr : o2s.per_query) {
    CHECK(q[rr.query].modality == Modality::Optical);
    for (auto j : rr.order) CHECK(g[j].modality == Modality::Sar);
  }
  const auto s2o = evaluate(q, g, ProtocolSpec{parse_protocol("s2o")}, Metric::Euclidean);
  CHECK(s2o.evaluated_queries + s2o.excluded_queries == 67);
  CHECK(s2o.per_query.front().order.size() == 403);
  const auto all = evaluate(q, g, ProtocolSpec{parse_protocol("all")}, Metric::Euclidean);
  CHECK(all.evaluated_queries == 132);
  CHECK(all.per_query.front().order.size() == 593);
  CHECK(protocol_name(Protocol::SarToOptical) == "s2o");
  CHECK_THROWS_AS(parse_protocol("x2y"), Error);
}

TEST_CASE("queries without relevant gallery items are excluded") {
  std::vector<EmbeddingRecord> q{{vec2(0, 0), 1, Modality::Optical, Source::Real},
                                 {vec2(0, 0), 9, Modality::Optical, Source::Real}};
  std::vector<EmbeddingRecord> g{{vec2(1, 0), 1, Modality::Sar, Source::Real}, {vec2(2, 0), 2, Modality::Sar, Source::Real}};
  const auto r = evaluate(q, g, ProtocolSpec{}, Metric::Euclidean);
  CHECK(r.excluded_queries == 1);
  CHECK(r.evaluated_queries == 1);
  CHECK(r.mAP == 1.0);
  std::vector<EmbeddingRecord> sar_only{{vec2(1, 0), 1, Modality::Sar, Source::Real}};
  CHECK_THROWS_AS(evaluate(q, sar_only, ProtocolSpec{Protocol::SarToOptical}, Metric::Euclidean), Error);
}

TEST_CASE("metric invariants") {
  Rng rng(83);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<EmbeddingRecord> q, g;
    for (int i = 0; i < 10; ++i) q.push_back({Vec::Random(4), 1 + i % 5, Modality::Optical, Source::Real});
    for (int i = 0; i < 25; ++i) g.push_back({Vec::Random(4), 1 + i % 5, Modality::Sar, Source::Real});
    const auto r = evaluate(q, g, ProtocolSpec{}, Metric::Euclidean);
    CHECK(r.r1 <= r.r5);
    CHECK(r.r5 <= r.r10);
    CHECK(r.mAP >= 0.0);
    CHECK(r.mAP <= 1.0);
    const double scale = 0.1 + 10.0 * uniform01(rng);
    for (auto& x : q) x.vector *= scale;
    for (auto& x : g) x.vector *= scale;
    const auto s = evaluate(q, g, ProtocolSpec{}, Metric::Euclidean);
    CHECK(s.mAP == doctest::Approx(r.mAP).epsilon(1e-12));
    CHECK(s.r1 == r.r1);
    for (std::size_t i = 0; i < r.per_query.size(); ++i) CHECK(s.per_query[i].order == r.per_query[i].order);
  }
}

TEST_CASE("embedding file layout") {
  std::vector<EmbeddingRecord> recs{{vec2(1.5, -2.0), 7, Modality::Sar, Source::Fused},
                                    {vec2(0.25, 3.0), 300, Modality::Optical, Source::Real}};
  const auto path = std::filesystem::temp_directory_path() / "mos_test.mose";
  write_embeddings(path, recs);
  const auto bytes = file_bytes(path);
  REQUIRE(bytes.size() == 16 + 2 * (8 + 8));
  CHECK(std::memcmp(bytes.data(), "MOSE", 4) == 0);
  const auto u32 = [&](std::size_t off) {
    return static_cast<std::uint32_t>(bytes[off]) | static_cast<std::uint32_t>(bytes[off + 1]) << 8 |
           static_cast<std::uint32_t>(bytes[off + 2]) << 16 | static_cast<std::uint32_t>(bytes[off + 3]) << 24;
  };
  CHECK(u32(4) == 1);
  CHECK(u32(8) == 2);
  CHECK(u32(12) == 2);
  CHECK(u32(16) == 7);
  CHECK(bytes[20] == 1);
  CHECK(bytes[21] == 1);
  CHECK(bytes[22] == 0);
  CHECK(bytes[23] == 0);
  const std::uint32_t f = u32(24);
  float v;
  std::memcpy(&v, &f, 4);
  CHECK(v == 1.5f);
  CHECK(u32(32) == 300);
  CHECK(bytes[36] == 0);
  CHECK(bytes[37] == 0);

  const auto back = read_embeddings(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].identity == 7);
  CHECK(back[0].modality == Modality::Sar);
  CHECK(back[0].source == Source::Fused);
  CHECK(back[1].vector == recs[1].vector);
  write_embeddings(path, back);
  CHECK(file_bytes(path) == bytes);

  std::ofstream(path, std::ios::binary) << "MOSX";
  CHECK_THROWS_AS(read_embeddings(path), Error);
  std::filesystem::remove(path);
}

TEST_CASE("fused records with tau zero equal the normalized real embeddings") {
  Rng rng(89);
  SynthConfig sc;
  sc.num_ids = 3;
  sc.imgs_per_id_per_modality = 2;
  sc.side = 8;
  const auto data = generate_synthetic(sc);
  const auto emb = make_embedder(64, 8, 8, 4, 3, rng);
  const auto bridge = MlpNoisePredictor::random(64, 8, 4, 20, rng);
  FusionConfig fc;
  fc.tau = 0.0;
  fc.k = 3;
  fc.sampler_steps = 5;
  const auto plain = embed_records(emb, data.images, true, DenoiseConfig{}, true);
  const auto fused = fused_records(emb, bridge, data.images, true, DenoiseConfig{}, fc);
  REQUIRE(plain.size() == fused.size());
  for (std::size_t i = 0; i < plain.size(); ++i) {
    CHECK(plain[i].vector == fused[i].vector);
    CHECK(fused[i].source == (data.images[i].modality == Modality::Optical ? Source::Fused : Source::Real));
  }
  fc.tau = 0.2;
  const auto a = fused_records(emb, bridge, data.images, true, DenoiseConfig{}, fc);
  const auto b = fused_records(emb, bridge, data.images, true, DenoiseConfig{}, fc);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].vector == b[i].vector);
    CHECK(a[i].vector.norm() == doctest::Approx(1.0));
  }
}
