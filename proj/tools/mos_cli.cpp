// Command-line entry point: synth, denoise, train, bridge-train,
// bridge-generate, embed, evaluate, pipeline, sweep.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mos/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mos;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
};

PipelineConfig resolve_config(const Globals& g) {
  PipelineConfig cfg = g.config_path.empty() ? PipelineConfig{} : load_config(g.config_path);
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

std::vector<double> parse_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      fail(ErrorCode::Config, std::string("bad value in --") + what + ": '" + item + "'");
    }
  }
  if (out.empty()) fail(ErrorCode::Config, std::string("--") + what + " is empty");
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Data, "cannot write " + path.string());
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Optical/SAR cross-modal re-identification toolkit"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed_value = 0;
  app.add_option("--config", g.config_path, "flat key = value config file")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed_value, "master seed (overrides config)");

  std::string out, data, input, model, bridge_path, query, gallery, protocol = "all", metric = "euclidean";
  double alpha = 5.0;
  bool force = false;
  int k = -1;
  double tau = -1.0;
  std::string alphas = "5", lambdas = "2", taus = "0.2";

  auto* synth = app.add_subcommand("synth", "write the synthetic benchmark (train/query/gallery)");
  synth->add_option("--out", out, "output directory")->required();

  auto* denoise = app.add_subcommand("denoise", "percentile-denoise SAR images of a dataset");
  denoise->add_option("--alpha", alpha, "percent of darkest pixels discarded");
  denoise->add_option("--input", input, "dataset directory")->required();
  denoise->add_option("--output", out, "output directory")->required();
  denoise->add_flag("--force", force, "also rescale optical images");

  auto* train_cmd = app.add_subcommand("train", "train the embedding network");
  train_cmd->add_option("--data", data, "training dataset directory")->required();
  train_cmd->add_option("--out", out, "model file")->required();

  auto* bridge_train = app.add_subcommand("bridge-train", "train the optical->SAR bridge generator");
  bridge_train->add_option("--data", data, "training dataset directory")->required();
  bridge_train->add_option("--out", out, "bridge model file")->required();

  auto* bridge_gen = app.add_subcommand("bridge-generate", "generate K pseudo-SAR images per optical image");
  bridge_gen->add_option("--model", bridge_path, "bridge model file")->required();
  bridge_gen->add_option("--input", input, "dataset directory")->required();
  bridge_gen->add_option("--k", k, "samples per optical image");
  bridge_gen->add_option("--out", out, "output directory")->required();

  auto* embed_cmd = app.add_subcommand("embed", "write L2-normalized embeddings of a dataset");
  embed_cmd->add_option("--model", model, "embedder model file")->required();
  embed_cmd->add_option("--data", data, "dataset directory")->required();
  embed_cmd->add_option("--bridge", bridge_path, "bridge model; enables fusion of optical embeddings");
  embed_cmd->add_option("--tau", tau, "fusion weight");
  embed_cmd->add_option("--k", k, "pseudo-SAR samples per optical image");
  embed_cmd->add_option("--out", out, "embedding file (.mose)")->required();

  auto* eval_cmd = app.add_subcommand("evaluate", "retrieval metrics for query/gallery embedding files");
  eval_cmd->add_option("--query", query, "query embeddings")->required();
  eval_cmd->add_option("--gallery", gallery, "gallery embeddings")->required();
  eval_cmd->add_option("--protocol", protocol, "all | o2s | s2o");
  eval_cmd->add_option("--metric", metric, "euclidean | cosine");
  eval_cmd->add_option("--out", out, "metrics JSON file (stdout when omitted)");

  auto* pipeline_cmd = app.add_subcommand("pipeline", "end-to-end ablation on the synthetic benchmark");
  pipeline_cmd->add_option("--out", out, "artifact directory (report printed to stdout when omitted)");

  auto* sweep_cmd = app.add_subcommand("sweep", "R1 grid over alpha x lambda_cmal and a tau curve");
  sweep_cmd->add_option("--alphas", alphas, "comma-separated alpha values");
  sweep_cmd->add_option("--lambdas", lambdas, "comma-separated lambda_cmal values");
  sweep_cmd->add_option("--taus", taus, "comma-separated tau values");
  sweep_cmd->add_option("--out", out, "output directory for CSV files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << error_code_name(ErrorCode::Config) << ": " << e.what() << "\n";
    return static_cast<int>(ErrorCode::Config);
  }
  if (*seed_opt) g.seed = seed_value;

  try {
    const PipelineConfig cfg = resolve_config(g);

    if (*synth) {
      const auto bench = make_benchmark(cfg);
      write_dataset(fs::path(out) / "train", bench.train);
      write_dataset(fs::path(out) / "query", bench.query);
      write_dataset(fs::path(out) / "gallery", bench.gallery);
    } else if (*denoise) {
      const DenoiseConfig dcfg{alpha, cfg.denoise_epsilon};
      dcfg.validate();
      Dataset ds = load_dataset(input);
      for (auto& img : ds.images)
        if (img.modality == Modality::Sar || force) img = denoise_image(img, dcfg, force);
      write_dataset(out, ds);
    } else if (*train_cmd) {
      const auto result = train(cfg.train(true, cfg.lambda_cmal), load_dataset(data));
      save_embedder(out, result.params);
      for (const auto& rec : result.history) {
        std::cout << "epoch " << rec.epoch << " total " << rec.loss.total << " id " << rec.loss.id << " triplet "
                  << rec.loss.triplet << " cmal " << rec.loss.cmal << " centroid_gap " << rec.centroid_gap << "\n";
      }
    } else if (*bridge_train) {
      const auto result = train_bridge(cfg.bridge(true), load_dataset(data));
      save_bridge(out, result.predictor);
      for (std::size_t e = 0; e < result.loss_history.size(); ++e)
        std::cout << "epoch " << e + 1 << " loss " << result.loss_history[e] << "\n";
    } else if (*bridge_gen) {
      const auto predictor = load_bridge(bridge_path);
      const auto schedule = make_schedule(predictor.schedule_steps());
      const int count = k > 0 ? k : cfg.k;
      const Dataset ds = load_dataset(input);
      Dataset generated;
      const auto base_seed = stage_seed(cfg.seed, "bridge-generate");
      for (std::size_t i = 0; i < ds.images.size(); ++i) {
        if (ds.images[i].modality != Modality::Optical) continue;
        const auto pseudo =
            generate_pseudo_set(predictor, ds.images[i], count, schedule, cfg.bridge_sampler_steps, sub_seed(base_seed, i));
        const auto stem = fs::path(ds.manifest.entries[i].path).stem().string();
        for (std::size_t j = 0; j < pseudo.size(); ++j) {
          generated.manifest.entries.push_back({"pseudo_sar/" + stem + "_k" + std::to_string(j) + ".png",
                                                pseudo[j].identity, Modality::Sar});
          generated.images.push_back(pseudo[j]);
        }
      }
      write_dataset(out, generated);
    } else if (*embed_cmd) {
      const auto embedder = load_embedder(model);
      const Dataset ds = load_dataset(data);
      std::vector<EmbeddingRecord> records;
      if (bridge_path.empty()) {
        records = embed_records(embedder, ds.images, true, cfg.denoise(), true);
      } else {
        auto fusion = cfg.fusion(tau >= 0.0 ? tau : cfg.tau);
        if (k > 0) fusion.k = k;
        records = fused_records(embedder, load_bridge(bridge_path), ds.images, true, cfg.denoise(), fusion);
      }
      write_embeddings(out, records);
    } else if (*eval_cmd) {
      const auto q = read_embeddings(query);
      const auto gl = read_embeddings(gallery);
      const auto result = evaluate(q, gl, ProtocolSpec{parse_protocol(protocol)}, parse_metric(metric));
      const auto text = metrics_json(result).dump() + "\n";
      if (out.empty())
        std::cout << text;
      else
        write_text(out, text);
    } else if (*pipeline_cmd) {
      const auto report = run_pipeline(cfg, out.empty() ? std::nullopt : std::optional<fs::path>(out));
      if (out.empty()) std::cout << report.dump(2) << "\n";
    } else if (*sweep_cmd) {
      const auto r = sweep(cfg, parse_list(alphas, "alphas"), parse_list(lambdas, "lambdas"), parse_list(taus, "taus"));
      for (Protocol p : kAllProtocols)
        write_text(fs::path(out) / ("r1_heatmap_" + std::string(protocol_name(p)) + ".csv"), heatmap_csv(r, p));
      write_text(fs::path(out) / "r1_tau_curve.csv", tau_curve_csv(r));
    }
  } catch (const Error& e) {
    std::cerr << error_code_name(e.code()) << ": " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << error_code_name(ErrorCode::Data) << ": " << e.what() << "\n";
    return static_cast<int>(ErrorCode::Data);
  }
  return 0;
}
