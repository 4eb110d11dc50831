#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "mos/data_pipeline.hpp"
#include "mos/mlp.hpp"
#include "mos/sar_denoise.hpp"

namespace mos {

/// m_t = t/T and delta_t = 2(m_t - m_t^2) for t = 0..T.
struct BridgeSchedule {
  int steps = 0;  // T
  std::vector<double> m;
  std::vector<double> delta;
};

BridgeSchedule make_schedule(int steps);

struct ForwardSample {
  Vec x_t;
  Vec noise;
};

/// x_t = (1 - m_t) x0 + m_t y + sqrt(delta_t) eps.
Vec bridge_state(const Vec& x0, const Vec& y, const Vec& noise, int t, const BridgeSchedule& schedule);
ForwardSample forward_sample(const Vec& x0, const Vec& y, int t, const BridgeSchedule& schedule, Rng& rng);

/// Sinusoidal features of t/T: dim/2 sines followed by dim/2 cosines.
Vec time_embedding(int t, int steps, int dim);

/// Anything that predicts the injected noise from (x_t, t, y), one sample per column.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual Mat predict(const Mat& x_t, std::span<const int> t, const Mat& y) const = 0;
  Vec predict(const Vec& x_t, int t, const Vec& y) const;
};

/// MLP over [x_t ; y ; time embedding]. The network output is read as an
/// x0 estimate and turned into a noise estimate through the bridge marginal,
///   eps_hat = (x_t - (1 - m_t) x0_hat - m_t y) / sqrt(delta_t),
/// which spares the network an identity-rank path from x_t to eps.
/// Returns zero noise at the endpoints t = 0 and t = T (delta = 0).
class MlpNoisePredictor : public NoisePredictor {
 public:
  MlpNoisePredictor() = default;
  MlpNoisePredictor(Mlp net, int data_dim, int time_dim, int schedule_steps);
  static MlpNoisePredictor random(int data_dim, int hidden, int time_dim, int schedule_steps, Rng& rng);

  Mat predict(const Mat& x_t, std::span<const int> t, const Mat& y) const override;
  Mat inputs(const Mat& x_t, std::span<const int> t, const Mat& y) const;
  /// Noise estimate from the raw network output (one column per sample).
  Mat noise_from_output(const Mat& output, const Mat& x_t, std::span<const int> t, const Mat& y) const;
  /// d(eps_hat)/d(output) per sample: -(1 - m_t)/sqrt(delta_t), 0 at the endpoints.
  double output_jacobian(int t) const;

  const Mlp& net() const { return net_; }
  Mlp& net() { return net_; }
  int data_dim() const { return data_dim_; }
  int time_dim() const { return time_dim_; }
  int schedule_steps() const { return schedule_steps_; }

 private:
  Mlp net_;
  int data_dim_ = 0;
  int time_dim_ = 16;
  int schedule_steps_ = 0;
  BridgeSchedule schedule_;
};

struct BridgePair {
  Vec x0;  // target-modality (SAR) sample
  Vec y;   // condition (optical) sample
};

/// Fixed draws for one loss evaluation; lets the loss be re-evaluated exactly.
struct DiffusionDraws {
  std::vector<int> t;
  std::vector<Vec> noise;
};

DiffusionDraws draw_diffusion(std::span<const BridgePair> pairs, const BridgeSchedule& schedule, Rng& rng);

/// Mean ||eps - eps_hat||^2 over the pairs (t uniform on 1..T-1).
double diffusion_loss(const NoisePredictor& predictor, std::span<const BridgePair> pairs, const BridgeSchedule& schedule,
                      const DiffusionDraws& draws);

struct DiffusionLossAndGradient {
  double loss = 0.0;
  std::vector<DenseLayer> grad;
};

DiffusionLossAndGradient diffusion_loss_and_gradient(const MlpNoisePredictor& predictor, std::span<const BridgePair> pairs,
                                                     const BridgeSchedule& schedule, const DiffusionDraws& draws);

/// x0 estimate from a state and a noise estimate; requires t < T.
Vec reconstruct_x0(const Vec& x_t, const Vec& y, const Vec& noise_hat, int t, const BridgeSchedule& schedule);

/// Deterministic noise-reuse descent from (x_start, t_start) through the
/// decreasing `grid` (which must end at 0). Returns the final x_0 estimate.
Vec run_sampler(const NoisePredictor& predictor, const Vec& x_start, int t_start, const Vec& y,
                const BridgeSchedule& schedule, std::span<const int> grid);

/// Full generation from x_T = y over `sampler_steps` evenly spaced steps.
/// The first transition has no x0 estimate: it uses x0_hat = y and a fresh
/// noise draw from `rng`, the only stochastic part of generation.
Vec generate(const NoisePredictor& predictor, const Vec& y, const BridgeSchedule& schedule, int sampler_steps, Rng& rng);

/// K pseudo-SAR renderings of an optical image, sample k on stream sub_seed(seed, k).
std::vector<LabeledImage> generate_pseudo_set(const NoisePredictor& predictor, const LabeledImage& optical, int count,
                                              const BridgeSchedule& schedule, int sampler_steps, std::uint64_t seed);

struct BridgeTrainConfig {
  int schedule_steps = 200;
  int sampler_steps = 10;
  int hidden = 256;
  int time_dim = 16;
  int epochs = 150;
  int batch_size = 32;
  double learning_rate = 1e-3;
  bool denoise = true;
  DenoiseConfig denoise_cfg;
  std::uint64_t seed = 7;
  void validate() const;
};

struct BridgeTrainResult {
  MlpNoisePredictor predictor;
  std::vector<double> loss_history;  // per epoch
};

/// Pairs every optical training image with a SAR image of the same identity
/// (redrawn each epoch) and fits the noise predictor with Adam.
BridgeTrainResult train_bridge(const BridgeTrainConfig& cfg, const Dataset& data);

void save_bridge(const std::filesystem::path& path, const MlpNoisePredictor& predictor);
MlpNoisePredictor load_bridge(const std::filesystem::path& path);

}  // namespace mos
