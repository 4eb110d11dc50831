#pragma once

#include <filesystem>
#include <string>

#include "mos/bridge_gen.hpp"
#include "mos/data_pipeline.hpp"
#include "mos/embed_train.hpp"
#include "mos/retrieval.hpp"

namespace mos {

/// Every tunable of the toolkit as flat `key = value` text.
struct PipelineConfig {
  std::uint64_t seed = 7;

  int num_ids = 10;
  int imgs_per_id = 8;         // training images per identity and modality
  int side = 32;
  int test_imgs_per_id = 6;    // held-out renderings per identity and modality
  int query_imgs_per_id = 2;   // of those, how many go to the query set

  double alpha = 5.0;
  double denoise_epsilon = 1e-6;

  int epochs = 30;
  double learning_rate = 5e-4;
  int batch_size = 32;
  int ids_per_batch = 4;
  int steps_per_epoch = 0;
  int hidden1 = 128;
  int hidden2 = 64;
  int embedding_dim = 32;
  bool flip_horizontal = false;
  bool flip_vertical = false;

  double lambda_id = 1.0;
  double lambda_tri = 1.0;
  double lambda_cmal = 2.0;
  double triplet_margin = 0.3;

  int bridge_steps = 200;         // T
  int bridge_sampler_steps = 10;  // S
  int bridge_hidden = 256;
  int bridge_time_dim = 16;
  int bridge_epochs = 150;
  int bridge_batch = 32;
  double bridge_lr = 1e-3;

  double tau = 0.2;
  int k = 5;

  Metric metric = Metric::Euclidean;

  void validate() const;

  SynthConfig synth() const;
  TrainConfig train(bool denoise, double lambda_cmal) const;
  BridgeTrainConfig bridge(bool denoise) const;
  FusionConfig fusion(double tau_value) const;
  DenoiseConfig denoise() const { return {alpha, denoise_epsilon}; }
};

/// Unknown keys, duplicate keys, and malformed values throw Error(Config).
PipelineConfig parse_config(const std::string& text);
PipelineConfig load_config(const std::filesystem::path& path);
/// Every key, in a fixed order, with round-trip exact numbers.
std::string serialize_config(const PipelineConfig& cfg);

}  // namespace mos
