#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mos/config.hpp"

namespace mos {

/// Synthetic train split plus held-out renderings of the same identities,
/// divided into query and gallery sets.
struct Benchmark {
  Dataset train;
  Dataset query;
  Dataset gallery;
};

Benchmark make_benchmark(const PipelineConfig& cfg);

/// {mAP, R1, R5, R10, excluded_queries}
nlohmann::ordered_json metrics_json(const EvalResult& r);

using ProtocolMetrics = std::map<Protocol, EvalResult>;

/// Trains (and caches) the models a configuration needs and evaluates them.
class PipelineRunner {
 public:
  explicit PipelineRunner(PipelineConfig cfg);

  const PipelineConfig& config() const { return cfg_; }
  const Benchmark& benchmark() const { return bench_; }

  const TrainResult& embedder(bool denoise, double alpha, double lambda_cmal);
  const BridgeTrainResult& bridge(bool denoise, double alpha);

  /// All three protocols; `tau` empty means unfused evaluation on normalized features.
  ProtocolMetrics evaluate_cell(bool denoise, double alpha, double lambda_cmal, std::optional<double> tau);

 private:
  PipelineConfig with_alpha(double alpha) const;

  PipelineConfig cfg_;
  Benchmark bench_;
  std::map<std::string, TrainResult> embedders_;
  std::map<std::string, BridgeTrainResult> bridges_;
};

inline constexpr Protocol kAllProtocols[] = {Protocol::AllToAll, Protocol::OpticalToSar, Protocol::SarToOptical};

/// Ablation report: cells neither / mcrl / cdgf / both, each with all three
/// protocols. When `artifacts` is set, models, embedding files and the
/// benchmark datasets are written there as well.
nlohmann::ordered_json run_pipeline(const PipelineConfig& cfg,
                                    const std::optional<std::filesystem::path>& artifacts = std::nullopt);

struct SweepResult {
  std::vector<double> alphas, lambdas, taus;
  // per protocol: R1[alpha][lambda] at the configured tau, and R1[tau] for the configured alpha/lambda
  std::map<Protocol, std::vector<std::vector<double>>> heatmap;
  std::map<Protocol, std::vector<double>> tau_curve;
};

SweepResult sweep(const PipelineConfig& cfg, const std::vector<double>& alphas, const std::vector<double>& lambdas,
                  const std::vector<double>& taus);

std::string heatmap_csv(const SweepResult& r, Protocol p);
std::string tau_curve_csv(const SweepResult& r);

}  // namespace mos
