#include "mos/embed_train.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace mos {

EmbedderParams make_embedder(int input_dim, int hidden1, int hidden2, int embedding_dim, int num_classes, Rng& rng) {
  if (embedding_dim < 2) fail(ErrorCode::Config, "embedder: embedding dim must be >= 2");
  if (num_classes < 1) fail(ErrorCode::Config, "embedder: need at least one class");
  EmbedderParams p;
  p.backbone = Mlp::random({input_dim, hidden1, hidden2, embedding_dim}, rng);
  p.head = Mlp::random({embedding_dim, num_classes}, rng);
  return p;
}

namespace {

Mat stack_inputs(std::span<const LabeledImage> images, int input_dim) {
  Mat x(input_dim, static_cast<Eigen::Index>(images.size()));
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (static_cast<int>(images[i].size()) != input_dim) fail(ErrorCode::Data, "embed: image size does not match network input");
    x.col(static_cast<Eigen::Index>(i)) = images[i].as_unit_vector();
  }
  return x;
}

}  // namespace

Vec embed(const EmbedderParams& params, const LabeledImage& image) {
  return embed_all(params, std::span<const LabeledImage>(&image, 1)).col(0);
}

Mat embed_all(const EmbedderParams& params, std::span<const LabeledImage> images) {
  return params.backbone.forward(stack_inputs(images, params.input_dim()));
}

void LossWeights::validate() const {
  for (double v : {lambda_id, lambda_tri, lambda_cmal, triplet_margin}) {
    if (!std::isfinite(v) || v < 0.0) fail(ErrorCode::Config, "loss weights and margin must be finite and >= 0");
  }
}

double id_loss(const Vec& logits, int label) {
  if (label < 0 || label >= logits.size()) fail(ErrorCode::Data, "id_loss: label out of range");
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return lse - logits[label];
}

Vec id_loss_gradient(const Vec& logits, int label) {
  if (label < 0 || label >= logits.size()) fail(ErrorCode::Data, "id_loss: label out of range");
  Vec p = (logits.array() - logits.maxCoeff()).exp();
  p /= p.sum();
  p[label] -= 1.0;
  return p;
}

TripletResult triplet_loss_batch_hard(std::span<const Vec> embeddings, std::span<const int> identities, double margin) {
  const std::size_t n = embeddings.size();
  if (n != identities.size()) fail(ErrorCode::Data, "triplet: embeddings/identities length mismatch");
  if (n < 2) fail(ErrorCode::Data, "triplet: need at least two embeddings");

  Mat dist(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) dist(i, j) = (embeddings[i] - embeddings[j]).norm();

  TripletResult out;
  out.gradients.assign(n, Vec::Zero(embeddings[0].size()));
  out.hinge.assign(n, 0.0);
  const double inv_n = 1.0 / static_cast<double>(n);
  // d||a-b||/da = (a-b)/||a-b||, taken as 0 at coincident points
  const auto add_distance_grad = [&](std::size_t a, std::size_t b, double scale) {
    const double d = dist(a, b);
    if (d <= 0.0) return;
    const Vec g = (scale / d) * (embeddings[a] - embeddings[b]);
    out.gradients[a] += g;
    out.gradients[b] -= g;
  };

  for (std::size_t a = 0; a < n; ++a) {
    std::size_t pos = n, neg = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      if (identities[j] == identities[a]) {
        if (pos == n || dist(a, j) > dist(a, pos)) pos = j;
      } else if (neg == n || dist(a, j) < dist(a, neg)) {
        neg = j;
      }
    }
    if (pos == n) fail(ErrorCode::Data, "triplet: anchor without a positive in batch");
    if (neg == n) fail(ErrorCode::Data, "triplet: anchor without a negative in batch");
    const double h = dist(a, pos) - dist(a, neg) + margin;
    if (h > 0.0) {
      out.hinge[a] = h;
      out.loss += h * inv_n;
      add_distance_grad(a, pos, inv_n);
      add_distance_grad(a, neg, -inv_n);
    }
  }
  return out;
}

LossAndGradient total_loss(std::span<const LabeledImage> images, const EmbedderParams& params,
                           const LossWeights& weights, const std::map<int, int>& class_of) {
  weights.validate();
  const auto b = static_cast<Eigen::Index>(images.size());
  if (b < 2) fail(ErrorCode::Data, "total_loss: batch must hold at least two images");

  Mlp::Tape backbone_tape, head_tape;
  const Mat x = stack_inputs(images, params.input_dim());
  const Mat features = params.backbone.forward(x, &backbone_tape);
  const Mat logits = params.head.forward(features, &head_tape);

  LossAndGradient out;
  const double inv_b = 1.0 / static_cast<double>(b);

  Mat grad_logits(logits.rows(), b);
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto it = class_of.find(images[static_cast<std::size_t>(i)].identity);
    if (it == class_of.end()) fail(ErrorCode::Data, "total_loss: identity has no head class");
    out.loss.id += id_loss(logits.col(i), it->second) * inv_b;
    grad_logits.col(i) = id_loss_gradient(logits.col(i), it->second) * (weights.lambda_id * inv_b);
  }

  std::vector<Vec> feats(static_cast<std::size_t>(b));
  std::vector<int> ids(static_cast<std::size_t>(b));
  std::vector<EmbeddingSample> samples(static_cast<std::size_t>(b));
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto& img = images[static_cast<std::size_t>(i)];
    feats[static_cast<std::size_t>(i)] = features.col(i);
    ids[static_cast<std::size_t>(i)] = img.identity;
    samples[static_cast<std::size_t>(i)] = {features.col(i), img.identity, img.modality};
  }
  const auto triplet = triplet_loss_batch_hard(feats, ids, weights.triplet_margin);
  out.loss.triplet = triplet.loss;
  out.loss.cmal = cmal_loss(class_statistics(samples));
  const auto cmal_grad = cmal_gradient(samples);

  out.loss.total =
      weights.lambda_id * out.loss.id + weights.lambda_tri * out.loss.triplet + weights.lambda_cmal * out.loss.cmal;

  Mat grad_features;
  out.head_grad = params.head.backward(head_tape, grad_logits, &grad_features);
  for (Eigen::Index i = 0; i < b; ++i) {
    grad_features.col(i) += weights.lambda_tri * triplet.gradients[static_cast<std::size_t>(i)] +
                            weights.lambda_cmal * cmal_grad[static_cast<std::size_t>(i)];
  }
  out.backbone_grad = params.backbone.backward(backbone_tape, grad_features);
  return out;
}

Vec flatten_params(const EmbedderParams& params) {
  Vec a = params.backbone.flatten(), h = params.head.flatten();
  Vec flat(a.size() + h.size());
  flat << a, h;
  return flat;
}

void assign_params(EmbedderParams& params, const Vec& flat) {
  const auto nb = static_cast<Eigen::Index>(params.backbone.num_params());
  const auto nh = static_cast<Eigen::Index>(params.head.num_params());
  if (flat.size() != nb + nh) fail(ErrorCode::Data, "embedder: parameter count mismatch");
  params.backbone.assign(flat.head(nb));
  params.head.assign(flat.tail(nh));
}

Vec flatten_gradient(const LossAndGradient& g) {
  Vec a = flatten_layers(g.backbone_grad), h = flatten_layers(g.head_grad);
  Vec flat(a.size() + h.size());
  flat << a, h;
  return flat;
}

void TrainConfig::validate() const {
  if (epochs < 1) fail(ErrorCode::Config, "train: epochs must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail(ErrorCode::Config, "train: learning rate must be > 0");
  if (ids_per_batch < 2) fail(ErrorCode::Config, "train: ids_per_batch must be >= 2");
  if (batch_size < 2 * ids_per_batch || batch_size % ids_per_batch != 0)
    fail(ErrorCode::Config, "train: batch size must be a multiple of ids_per_batch with >= 2 instances per identity");
  if (steps_per_epoch < 0) fail(ErrorCode::Config, "train: steps_per_epoch must be >= 0");
  if (hidden1 < 1 || hidden2 < 1) fail(ErrorCode::Config, "train: hidden sizes must be >= 1");
  if (embedding_dim < 2) fail(ErrorCode::Config, "train: embedding dim must be >= 2");
  denoise_cfg.validate();
  weights.validate();
}

LabeledImage preprocess(const LabeledImage& image, bool denoise, const DenoiseConfig& cfg) {
  if (denoise && image.modality == Modality::Sar) return denoise_image(image, cfg);
  return image;
}

TrainResult train(const TrainConfig& cfg, const Dataset& data) {
  cfg.validate();
  if (data.images.empty()) fail(ErrorCode::Data, "train: empty dataset");

  Dataset prepared;
  prepared.manifest = data.manifest;
  for (const auto& img : data.images) prepared.images.push_back(preprocess(img, cfg.denoise, cfg.denoise_cfg));

  std::map<int, int> class_of;
  for (const auto& e : data.manifest.entries) class_of.emplace(e.identity, 0);
  int next = 0;
  for (auto& [id, cls] : class_of) cls = next++;

  Rng init_rng(stage_seed(cfg.seed, "train/init"));
  Rng batch_rng(stage_seed(cfg.seed, "train/batches"));
  Rng augment_rng(stage_seed(cfg.seed, "train/augment"));

  TrainResult result;
  result.params = make_embedder(static_cast<int>(prepared.images.front().size()), cfg.hidden1, cfg.hidden2,
                                cfg.embedding_dim, static_cast<int>(class_of.size()), init_rng);

  const int instances = cfg.batch_size / cfg.ids_per_batch;
  const int steps = cfg.steps_per_epoch > 0
                        ? cfg.steps_per_epoch
                        : static_cast<int>((prepared.images.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
                                           static_cast<std::size_t>(cfg.batch_size));

  Vec params = flatten_params(result.params);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    for (int s = 0; s < steps; ++s) {
      Batch batch = sample_balanced_batch(prepared, cfg.ids_per_batch, instances, batch_rng);
      augment_flips(batch, cfg.flip_horizontal, cfg.flip_vertical, augment_rng);
      const auto lg = total_loss(batch.images, result.params, cfg.weights, class_of);
      if (!std::isfinite(lg.loss.total))
        fail(ErrorCode::Numeric, "train: non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(s));
      params -= cfg.learning_rate * flatten_gradient(lg);
      assign_params(result.params, params);
      rec.loss.id += lg.loss.id / steps;
      rec.loss.triplet += lg.loss.triplet / steps;
      rec.loss.cmal += lg.loss.cmal / steps;
      rec.loss.total += lg.loss.total / steps;
    }

    const Mat feats = embed_all(result.params, prepared.images);
    if (!feats.allFinite()) fail(ErrorCode::Numeric, "train: non-finite embeddings after epoch " + std::to_string(epoch));
    std::vector<EmbeddingSample> samples;
    for (std::size_t i = 0; i < prepared.images.size(); ++i)
      samples.push_back({feats.col(static_cast<Eigen::Index>(i)), prepared.images[i].identity, prepared.images[i].modality});
    rec.centroid_gap = centroid_gap(class_statistics(samples));
    result.history.push_back(rec);
  }
  return result;
}

namespace {
constexpr char kEmbedderMagic[4] = {'M', 'O', 'S', 'M'};
constexpr std::uint32_t kEmbedderVersion = 1;
}  // namespace

void save_embedder(const std::filesystem::path& path, const EmbedderParams& params) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Data, "cannot write model " + path.string());
  out.write(kEmbedderMagic, 4);
  write_u32(out, kEmbedderVersion);
  auto dims = params.backbone.dims();
  dims.push_back(params.num_classes());
  write_dims(out, dims);
  write_layer_values(out, params.backbone);
  write_layer_values(out, params.head);
}

EmbedderParams load_embedder(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Data, "cannot open model " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kEmbedderMagic, 4) != 0) fail(ErrorCode::Data, "not an embedder model file");
  if (read_u32(in) != kEmbedderVersion) fail(ErrorCode::Data, "unsupported embedder model version");
  const auto dims = read_dims(in);
  if (dims.size() < 3) fail(ErrorCode::Data, "embedder model: need backbone and head dims");
  EmbedderParams p;
  p.backbone = read_layer_values(in, std::vector<int>(dims.begin(), dims.end() - 1));
  p.head = read_layer_values(in, {dims[dims.size() - 2], dims.back()});
  return p;
}

}  // namespace mos
