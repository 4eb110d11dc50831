#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "grad_checks.hpp"
#include "mos/embed_train.hpp"
#include "oracles.hpp"

using namespace mos;

namespace {

std::vector<double> unit_pixels(const LabeledImage& img) {
  std::vector<double> x(img.pixels.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = img.pixels[i] / 255.0;
  return x;
}

Dataset tiny_dataset(std::uint64_t seed) {
  SynthConfig sc;
  sc.num_ids = 4;
  sc.imgs_per_id_per_modality = 4;
  sc.side = 8;
  sc.seed = seed;
  return generate_synthetic(sc);
}

}  // namespace

TEST_CASE("zero network embeds to zero") {
  EmbedderParams p{Mlp::zeros({16, 8, 8, 4}), Mlp::zeros({4, 3})};
  const auto img = make_image(4, 4, std::vector<double>(16, 0.0), 1, Modality::Optical);
  CHECK(embed(p, img).norm() == 0.0);
}

TEST_CASE("embedding matches scalar forward pass") {
  Rng rng(3);
  const auto p = make_embedder(64, 16, 16, 8, 3, rng);
  const auto data = tiny_dataset(5);
  const Mat all = embed_all(p, data.images);
  for (std::size_t i = 0; i < data.images.size(); ++i) {
    const Vec ref = oracle::to_vec(oracle::naive_forward(p.backbone.layers(), unit_pixels(data.images[i])));
    CHECK((embed(p, data.images[i]) - ref).norm() < 1e-10);
    CHECK((all.col(static_cast<Eigen::Index>(i)) - ref).norm() < 1e-10);
  }
}

TEST_CASE("id loss closed forms") {
  Vec l(2);
  l << 10.0, 0.0;
  CHECK(id_loss(l, 0) == doctest::Approx(std::log1p(std::exp(-10.0))).epsilon(1e-9));
  CHECK(id_loss(l, 0) == doctest::Approx(4.5399e-5).epsilon(1e-4));
  CHECK(id_loss(Vec::Zero(7), 3) == doctest::Approx(std::log(7.0)));
  Vec big(3);
  big << 1000.0, 0.0, -1000.0;
  CHECK(std::isfinite(id_loss(big, 2)));
  CHECK(id_loss(big, 2) == doctest::Approx(2000.0));
  CHECK_THROWS_AS(id_loss(l, 2), Error);
  CHECK_THROWS_AS(id_loss(l, -1), Error);
}

TEST_CASE("id loss gradient") {
  Rng rng(11);
  for (int i = 0; i < 20; ++i) CHECK(gradcheck::id(rng).max_rel_error < 1e-4);
  Vec l = Vec::Zero(4);
  const Vec g = id_loss_gradient(l, 1);
  CHECK(g.sum() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(g[1] == doctest::Approx(-0.75));
}

TEST_CASE("triplet hand example") {
  std::vector<Vec> e(4, Vec::Zero(2));
  e[1] << 1.0, 0.0;
  e[2] << 0.0, 1.2;
  e[3] << 0.0, 2.0;
  const std::vector<int> ids{1, 1, 2, 2};
  const auto r = triplet_loss_batch_hard(e, ids, 0.3);
  CHECK(r.hinge[0] == doctest::Approx(0.1));
  // anchor 1: pos 1.0, neg min(|(1,-1.2)|, |(1,-2)|)
  CHECK(r.hinge[1] == doctest::Approx(std::max(0.0, 1.0 - std::sqrt(1.0 + 1.44) + 0.3)));
  double mean = 0.0;
  for (double h : r.hinge) mean += h;
  CHECK(r.loss == doctest::Approx(mean / 4.0));
}

TEST_CASE("triplet loss vanishes for separated clusters") {
  std::vector<Vec> e;
  std::vector<int> ids;
  for (int c = 0; c < 3; ++c) {
    for (int k = 0; k < 4; ++k) {
      Vec v = Vec::Zero(3);
      v[c] = 10.0;
      v[(c + 1) % 3] = 0.01 * k;
      e.push_back(v);
      ids.push_back(c + 1);
    }
  }
  const auto r = triplet_loss_batch_hard(e, ids, 0.3);
  CHECK(r.loss == 0.0);
  for (const auto& g : r.gradients) CHECK(g.norm() == 0.0);
}

TEST_CASE("triplet loss rejects batches without positives or negatives") {
  std::vector<Vec> e(3, Vec::Ones(2));
  CHECK_THROWS_AS(triplet_loss_batch_hard(e, std::vector<int>{1, 1, 1}, 0.3), Error);
  CHECK_THROWS_AS(triplet_loss_batch_hard(e, std::vector<int>{1, 2, 2}, 0.3), Error);
}

TEST_CASE("triplet gradient away from kinks") {
  Rng rng(13);
  for (int i = 0; i < 20; ++i) CHECK(gradcheck::triplet(rng).max_rel_error < 1e-4);
}

TEST_CASE("objective weights") {
  Rng rng(17);
  auto inst = gradcheck::combined_instance(rng);
  const auto zero = total_loss(inst.images, inst.params, {0.0, 0.0, 0.0, 0.3}, inst.class_of);
  CHECK(zero.loss.total == 0.0);
  CHECK(flatten_gradient(zero).norm() == 0.0);

  const auto id_only = total_loss(inst.images, inst.params, {1.0, 0.0, 0.0, 0.3}, inst.class_of);
  double mean = 0.0;
  for (const auto& img : inst.images) {
    const Vec logits = inst.params.head.forward(embed(inst.params, img));
    mean += id_loss(logits, inst.class_of.at(img.identity));
  }
  mean /= static_cast<double>(inst.images.size());
  CHECK(id_only.loss.total == doctest::Approx(mean).epsilon(1e-12));

  const LossWeights w{0.7, 1.3, 2.1, 0.3};
  const auto full = total_loss(inst.images, inst.params, w, inst.class_of);
  const auto a = total_loss(inst.images, inst.params, {0.7, 0.0, 0.0, 0.3}, inst.class_of);
  const auto b = total_loss(inst.images, inst.params, {0.0, 1.3, 0.0, 0.3}, inst.class_of);
  const auto c = total_loss(inst.images, inst.params, {0.0, 0.0, 2.1, 0.3}, inst.class_of);
  CHECK(full.loss.total == doctest::Approx(a.loss.total + b.loss.total + c.loss.total).epsilon(1e-12));
  const Vec sum = flatten_gradient(a) + flatten_gradient(b) + flatten_gradient(c);
  CHECK((flatten_gradient(full) - sum).norm() <= 1e-12 * (1.0 + sum.norm()));
  CHECK(full.loss.id == doctest::Approx(a.loss.id));
  CHECK(full.loss.cmal == doctest::Approx(c.loss.cmal));
}

TEST_CASE("full objective gradient") {
  Rng rng(19);
  for (int i = 0; i < 3; ++i) CHECK(gradcheck::combined(rng).max_rel_error < 1e-3);
}

TEST_CASE("parameter flatten round trip") {
  Rng rng(23);
  auto p = make_embedder(16, 8, 6, 4, 3, rng);
  const Vec flat = flatten_params(p);
  CHECK(static_cast<std::size_t>(flat.size()) == p.backbone.num_params() + p.head.num_params());
  Vec changed = flat * 2.0;
  assign_params(p, changed);
  CHECK((flatten_params(p) - changed).norm() == 0.0);
}

TEST_CASE("training is deterministic and finite") {
  const auto data = tiny_dataset(29);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.hidden1 = 16;
  cfg.hidden2 = 16;
  cfg.embedding_dim = 8;
  cfg.batch_size = 8;
  cfg.ids_per_batch = 2;
  cfg.flip_horizontal = true;
  const auto a = train(cfg, data);
  const auto b = train(cfg, data);
  CHECK(flatten_params(a.params) == flatten_params(b.params));
  REQUIRE(a.history.size() == 2);
  for (const auto& h : a.history) {
    CHECK(std::isfinite(h.loss.total));
    CHECK(std::isfinite(h.centroid_gap));
  }
  cfg.seed = 30;
  CHECK(flatten_params(train(cfg, data).params) != flatten_params(a.params));
}

TEST_CASE("training rejects bad configuration") {
  const auto data = tiny_dataset(31);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.learning_rate = -1.0;
  CHECK_THROWS_AS(train(cfg, data), Error);
  cfg = TrainConfig{};
  cfg.batch_size = 30;  // not divisible into 4 ids
  cfg.ids_per_batch = 4;
  CHECK_THROWS_AS(train(cfg, data), Error);
}

TEST_CASE("embedder save and load") {
  Rng rng(37);
  const auto p = make_embedder(64, 16, 12, 8, 5, rng);
  const auto path = std::filesystem::temp_directory_path() / "mos_test_embedder.bin";
  save_embedder(path, p);
  const auto q = load_embedder(path);
  CHECK(q.backbone.dims() == p.backbone.dims());
  CHECK(q.head.dims() == p.head.dims());
  CHECK(flatten_params(q) == flatten_params(p));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_embedder(path), Error);
}
