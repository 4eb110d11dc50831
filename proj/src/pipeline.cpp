#include "mos/pipeline.hpp"

#include <charconv>
#include <fstream>

namespace mos {

namespace {

std::string key_of(std::initializer_list<double> parts) {
  std::string k;
  for (double p : parts) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, p);
    k.append(buf, r.ptr);
    k += '|';
  }
  return k;
}

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

Benchmark make_benchmark(const PipelineConfig& cfg) {
  cfg.validate();
  Benchmark b;
  b.train = generate_synthetic(cfg.synth());

  SynthConfig held_out = cfg.synth();
  held_out.imgs_per_id_per_modality = cfg.test_imgs_per_id;
  held_out.first_index = cfg.imgs_per_id;
  const Dataset test = generate_synthetic(held_out);

  b.query.manifest.split = Split::Query;
  b.gallery.manifest.split = Split::Gallery;
  std::map<std::pair<int, Modality>, int> taken;
  for (std::size_t i = 0; i < test.images.size(); ++i) {
    const auto& e = test.manifest.entries[i];
    Dataset& dst = taken[{e.identity, e.modality}]++ < cfg.query_imgs_per_id ? b.query : b.gallery;
    dst.manifest.entries.push_back(e);
    dst.images.push_back(test.images[i]);
  }
  return b;
}

nlohmann::ordered_json metrics_json(const EvalResult& r) {
  nlohmann::ordered_json j;
  j["mAP"] = r.mAP;
  j["R1"] = r.r1;
  j["R5"] = r.r5;
  j["R10"] = r.r10;
  j["excluded_queries"] = r.excluded_queries;
  return j;
}

PipelineRunner::PipelineRunner(PipelineConfig cfg) : cfg_(std::move(cfg)), bench_(make_benchmark(cfg_)) {}

PipelineConfig PipelineRunner::with_alpha(double alpha) const {
  PipelineConfig c = cfg_;
  c.alpha = alpha;
  return c;
}

const TrainResult& PipelineRunner::embedder(bool denoise, double alpha, double lambda_cmal) {
  const auto key = key_of({denoise ? 1.0 : 0.0, denoise ? alpha : 0.0, lambda_cmal});
  auto it = embedders_.find(key);
  if (it == embedders_.end()) it = embedders_.emplace(key, train(with_alpha(alpha).train(denoise, lambda_cmal), bench_.train)).first;
  return it->second;
}

const BridgeTrainResult& PipelineRunner::bridge(bool denoise, double alpha) {
  const auto key = key_of({denoise ? 1.0 : 0.0, denoise ? alpha : 0.0});
  auto it = bridges_.find(key);
  if (it == bridges_.end()) it = bridges_.emplace(key, train_bridge(with_alpha(alpha).bridge(denoise), bench_.train)).first;
  return it->second;
}

ProtocolMetrics PipelineRunner::evaluate_cell(bool denoise, double alpha, double lambda_cmal, std::optional<double> tau) {
  const auto& model = embedder(denoise, alpha, lambda_cmal).params;
  const auto dcfg = with_alpha(alpha).denoise();
  std::vector<EmbeddingRecord> q, g;
  if (tau) {
    const auto& predictor = bridge(denoise, alpha).predictor;
    const auto fusion = cfg_.fusion(*tau);
    FusionConfig qf = fusion, gf = fusion;
    qf.seed = stage_seed(fusion.seed, "fusion/query");
    gf.seed = stage_seed(fusion.seed, "fusion/gallery");
    q = fused_records(model, predictor, bench_.query.images, denoise, dcfg, qf);
    g = fused_records(model, predictor, bench_.gallery.images, denoise, dcfg, gf);
  } else {
    q = embed_records(model, bench_.query.images, denoise, dcfg, true);
    g = embed_records(model, bench_.gallery.images, denoise, dcfg, true);
  }
  ProtocolMetrics out;
  for (Protocol p : kAllProtocols) out[p] = evaluate(q, g, ProtocolSpec{p}, cfg_.metric);
  return out;
}

nlohmann::ordered_json run_pipeline(const PipelineConfig& cfg, const std::optional<std::filesystem::path>& artifacts) {
  PipelineRunner runner(cfg);
  struct Cell {
    const char* name;
    bool mcrl;
    bool cdgf;
  };
  const Cell cells[] = {{"neither", false, false}, {"mcrl", true, false}, {"cdgf", false, true}, {"both", true, true}};

  nlohmann::ordered_json report;
  report["seed"] = cfg.seed;
  report["config"] = serialize_config(cfg);
  nlohmann::ordered_json cell_json;
  for (const auto& cell : cells) {
    const double lambda = cell.mcrl ? cfg.lambda_cmal : 0.0;
    std::optional<double> tau;
    if (cell.cdgf) tau = cfg.tau;
    const auto metrics = runner.evaluate_cell(cell.mcrl, cfg.alpha, lambda, tau);
    nlohmann::ordered_json j;
    for (Protocol p : kAllProtocols) j[std::string(protocol_name(p))] = metrics_json(metrics.at(p));
    cell_json[cell.name] = j;
  }
  report["cells"] = cell_json;

  nlohmann::ordered_json diag;
  for (bool mcrl : {false, true}) {
    const auto& tr = runner.embedder(mcrl, cfg.alpha, mcrl ? cfg.lambda_cmal : 0.0);
    const auto& br = runner.bridge(mcrl, cfg.alpha);
    nlohmann::ordered_json d;
    d["final_centroid_gap"] = tr.history.back().centroid_gap;
    d["final_train_loss"] = tr.history.back().loss.total;
    d["final_bridge_loss"] = br.loss_history.back();
    diag[mcrl ? "mcrl" : "baseline"] = d;
  }
  report["diagnostics"] = diag;

  if (artifacts) {
    const auto& dir = *artifacts;
    write_dataset(dir / "data" / "train", runner.benchmark().train);
    write_dataset(dir / "data" / "query", runner.benchmark().query);
    write_dataset(dir / "data" / "gallery", runner.benchmark().gallery);
    for (bool mcrl : {false, true}) {
      const std::string tag = mcrl ? "mcrl" : "baseline";
      const auto& model = runner.embedder(mcrl, cfg.alpha, mcrl ? cfg.lambda_cmal : 0.0).params;
      save_embedder(dir / (tag + "_model.bin"), model);
      save_bridge(dir / (tag + "_bridge.bin"), runner.bridge(mcrl, cfg.alpha).predictor);
      const auto dcfg = cfg.denoise();
      write_embeddings(dir / (tag + "_query.mose"), embed_records(model, runner.benchmark().query.images, mcrl, dcfg, true));
      write_embeddings(dir / (tag + "_gallery.mose"),
                       embed_records(model, runner.benchmark().gallery.images, mcrl, dcfg, true));
    }
    std::ofstream(dir / "report.json", std::ios::binary) << report.dump(2) << "\n";
  }
  return report;
}

SweepResult sweep(const PipelineConfig& cfg, const std::vector<double>& alphas, const std::vector<double>& lambdas,
                  const std::vector<double>& taus) {
  if (alphas.empty() || lambdas.empty() || taus.empty()) fail(ErrorCode::Config, "sweep: grids must be non-empty");
  for (double a : alphas) DenoiseConfig{a, cfg.denoise_epsilon}.validate();
  for (double l : lambdas)
    if (!(l >= 0.0)) fail(ErrorCode::Config, "sweep: lambda_cmal values must be >= 0");
  for (double t : taus)
    if (!(t >= 0.0 && t <= 1.0)) fail(ErrorCode::Config, "sweep: tau values must lie in [0, 1]");

  PipelineRunner runner(cfg);
  SweepResult r{alphas, lambdas, taus, {}, {}};
  for (Protocol p : kAllProtocols) {
    r.heatmap[p].assign(alphas.size(), std::vector<double>(lambdas.size(), 0.0));
    r.tau_curve[p].assign(taus.size(), 0.0);
  }
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    for (std::size_t j = 0; j < lambdas.size(); ++j) {
      const auto m = runner.evaluate_cell(true, alphas[i], lambdas[j], cfg.tau);
      for (Protocol p : kAllProtocols) r.heatmap[p][i][j] = m.at(p).r1;
    }
  }
  for (std::size_t t = 0; t < taus.size(); ++t) {
    const auto m = runner.evaluate_cell(true, cfg.alpha, cfg.lambda_cmal, taus[t]);
    for (Protocol p : kAllProtocols) r.tau_curve[p][t] = m.at(p).r1;
  }
  return r;
}

std::string heatmap_csv(const SweepResult& r, Protocol p) {
  std::string out = "alpha\\lambda_cmal";
  for (double l : r.lambdas) out += "," + fmt(l);
  out += "\n";
  for (std::size_t i = 0; i < r.alphas.size(); ++i) {
    out += fmt(r.alphas[i]);
    for (double v : r.heatmap.at(p)[i]) out += "," + fmt(v);
    out += "\n";
  }
  return out;
}

std::string tau_curve_csv(const SweepResult& r) {
  std::string out = "tau";
  for (Protocol p : kAllProtocols) out += "," + std::string(protocol_name(p));
  out += "\n";
  for (std::size_t t = 0; t < r.taus.size(); ++t) {
    out += fmt(r.taus[t]);
    for (Protocol p : kAllProtocols) out += "," + fmt(r.tau_curve.at(p)[t]);
    out += "\n";
  }
  return out;
}

}  // namespace mos
