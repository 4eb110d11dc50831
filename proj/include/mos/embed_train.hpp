#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "mos/alignment.hpp"
#include "mos/data_pipeline.hpp"
#include "mos/mlp.hpp"
#include "mos/sar_denoise.hpp"

namespace mos {

/// Backbone input -> h1 -> h2 -> d (ReLU between layers) plus a linear
/// identity-classification head d -> C. Embeddings are the backbone output.
struct EmbedderParams {
  Mlp backbone;
  Mlp head;

  int input_dim() const { return backbone.input_dim(); }
  int embedding_dim() const { return backbone.output_dim(); }
  int num_classes() const { return head.output_dim(); }
};

EmbedderParams make_embedder(int input_dim, int hidden1, int hidden2, int embedding_dim, int num_classes, Rng& rng);

Vec embed(const EmbedderParams& params, const LabeledImage& image);
/// One embedding per column.
Mat embed_all(const EmbedderParams& params, std::span<const LabeledImage> images);

struct LossWeights {
  double lambda_id = 1.0;
  double lambda_tri = 1.0;
  double lambda_cmal = 2.0;
  double triplet_margin = 0.3;
  void validate() const;
};

/// Softmax cross-entropy for a 0-based class index.
double id_loss(const Vec& logits, int label);
Vec id_loss_gradient(const Vec& logits, int label);

struct TripletResult {
  double loss = 0.0;
  std::vector<Vec> gradients;  // per embedding
  std::vector<double> hinge;   // per-anchor term before averaging
};

/// Batch-hard triplet loss with Euclidean distance: mean over anchors of
/// max(0, max_pos_dist - min_neg_dist + margin). Ties pick the lowest index.
TripletResult triplet_loss_batch_hard(std::span<const Vec> embeddings, std::span<const int> identities, double margin);

struct LossBreakdown {
  double id = 0.0;
  double triplet = 0.0;
  double cmal = 0.0;
  double total = 0.0;
};

struct LossAndGradient {
  LossBreakdown loss;
  std::vector<DenseLayer> backbone_grad;
  std::vector<DenseLayer> head_grad;
};

/// Weighted objective lambda_id*ID + lambda_tri*triplet + lambda_cmal*CMAL over
/// the batch and its exact gradient w.r.t. all parameters. `class_of` maps
/// identity -> 0-based head class.
LossAndGradient total_loss(std::span<const LabeledImage> images, const EmbedderParams& params,
                           const LossWeights& weights, const std::map<int, int>& class_of);

Vec flatten_params(const EmbedderParams& params);
void assign_params(EmbedderParams& params, const Vec& flat);
Vec flatten_gradient(const LossAndGradient& g);

struct TrainConfig {
  int epochs = 30;
  double learning_rate = 5e-4;
  int batch_size = 32;
  int ids_per_batch = 4;
  int steps_per_epoch = 0;  // 0: ceil(train size / batch size)
  int hidden1 = 128;
  int hidden2 = 64;
  int embedding_dim = 32;
  bool flip_horizontal = false;
  bool flip_vertical = false;
  bool denoise = true;
  DenoiseConfig denoise_cfg;
  LossWeights weights;
  std::uint64_t seed = 7;
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  LossBreakdown loss;   // mean over the epoch's steps
  double centroid_gap;  // mean ||mu_opt - mu_sar|| over dual-modality training identities
};

struct TrainResult {
  EmbedderParams params;
  std::vector<EpochRecord> history;
};

/// Applies the configured SAR preprocessing (denoising) to SAR images; optical
/// images pass through unchanged.
LabeledImage preprocess(const LabeledImage& image, bool denoise, const DenoiseConfig& cfg);

/// Plain SGD over identity-balanced batches. Deterministic for a fixed seed.
TrainResult train(const TrainConfig& cfg, const Dataset& data);

void save_embedder(const std::filesystem::path& path, const EmbedderParams& params);
EmbedderParams load_embedder(const std::filesystem::path& path);

}  // namespace mos
