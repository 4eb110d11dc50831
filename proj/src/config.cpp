#include "mos/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace mos {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    fail(ErrorCode::Config, "config: bad value for '" + key + "': '" + text + "'");
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  fail(ErrorCode::Config, "config: bad boolean for '" + key + "': '" + text + "'");
}

struct Field {
  const char* key;
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

template <typename T>
Field number(const char* key, T PipelineConfig::*member) {
  return {key, [key, member](PipelineConfig& c, const std::string& v) { c.*member = parse_number<T>(key, v); },
          [member](const PipelineConfig& c) {
            if constexpr (std::is_floating_point_v<T>)
              return format_double(c.*member);
            else
              return std::to_string(c.*member);
          }};
}

Field boolean(const char* key, bool PipelineConfig::*member) {
  return {key, [key, member](PipelineConfig& c, const std::string& v) { c.*member = parse_bool(key, v); },
          [member](const PipelineConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      number("seed", &PipelineConfig::seed),
      number("synth.num_ids", &PipelineConfig::num_ids),
      number("synth.imgs_per_id", &PipelineConfig::imgs_per_id),
      number("synth.side", &PipelineConfig::side),
      number("synth.test_imgs_per_id", &PipelineConfig::test_imgs_per_id),
      number("synth.query_imgs_per_id", &PipelineConfig::query_imgs_per_id),
      number("denoise.alpha", &PipelineConfig::alpha),
      number("denoise.epsilon", &PipelineConfig::denoise_epsilon),
      number("train.epochs", &PipelineConfig::epochs),
      number("train.lr", &PipelineConfig::learning_rate),
      number("train.batch", &PipelineConfig::batch_size),
      number("train.ids_per_batch", &PipelineConfig::ids_per_batch),
      number("train.steps_per_epoch", &PipelineConfig::steps_per_epoch),
      number("train.hidden1", &PipelineConfig::hidden1),
      number("train.hidden2", &PipelineConfig::hidden2),
      number("train.dim", &PipelineConfig::embedding_dim),
      boolean("train.flip_h", &PipelineConfig::flip_horizontal),
      boolean("train.flip_v", &PipelineConfig::flip_vertical),
      number("loss.lambda_id", &PipelineConfig::lambda_id),
      number("loss.lambda_tri", &PipelineConfig::lambda_tri),
      number("loss.lambda_cmal", &PipelineConfig::lambda_cmal),
      number("loss.margin", &PipelineConfig::triplet_margin),
      number("bridge.T", &PipelineConfig::bridge_steps),
      number("bridge.S", &PipelineConfig::bridge_sampler_steps),
      number("bridge.hidden", &PipelineConfig::bridge_hidden),
      number("bridge.time_dim", &PipelineConfig::bridge_time_dim),
      number("bridge.epochs", &PipelineConfig::bridge_epochs),
      number("bridge.batch", &PipelineConfig::bridge_batch),
      number("bridge.lr", &PipelineConfig::bridge_lr),
      number("fusion.tau", &PipelineConfig::tau),
      number("fusion.k", &PipelineConfig::k),
      {"eval.metric", [](PipelineConfig& c, const std::string& v) { c.metric = parse_metric(v); },
       [](const PipelineConfig& c) { return std::string(c.metric == Metric::Euclidean ? "euclidean" : "cosine"); }},
  };
  return table;
}

}  // namespace

void PipelineConfig::validate() const {
  if (num_ids < 2) fail(ErrorCode::Config, "config: synth.num_ids must be >= 2");
  if (imgs_per_id < 1) fail(ErrorCode::Config, "config: synth.imgs_per_id must be >= 1");
  if (side < 8) fail(ErrorCode::Config, "config: synth.side must be >= 8");
  if (test_imgs_per_id < 2) fail(ErrorCode::Config, "config: synth.test_imgs_per_id must be >= 2");
  if (query_imgs_per_id < 1 || query_imgs_per_id >= test_imgs_per_id)
    fail(ErrorCode::Config, "config: synth.query_imgs_per_id must lie in [1, test_imgs_per_id)");
  train(true, lambda_cmal).validate();
  bridge(true).validate();
  if (!(tau >= 0.0 && tau <= 1.0)) fail(ErrorCode::Config, "config: fusion.tau must lie in [0, 1]");
  if (k < 1) fail(ErrorCode::Config, "config: fusion.k must be >= 1");
}

SynthConfig PipelineConfig::synth() const { return {num_ids, imgs_per_id, side, seed, 0}; }

TrainConfig PipelineConfig::train(bool denoise_sar, double lambda) const {
  TrainConfig t;
  t.epochs = epochs;
  t.learning_rate = learning_rate;
  t.batch_size = batch_size;
  t.ids_per_batch = ids_per_batch;
  t.steps_per_epoch = steps_per_epoch;
  t.hidden1 = hidden1;
  t.hidden2 = hidden2;
  t.embedding_dim = embedding_dim;
  t.flip_horizontal = flip_horizontal;
  t.flip_vertical = flip_vertical;
  t.denoise = denoise_sar;
  t.denoise_cfg = denoise();
  t.weights = {lambda_id, lambda_tri, lambda, triplet_margin};
  t.seed = seed;
  return t;
}

BridgeTrainConfig PipelineConfig::bridge(bool denoise_sar) const {
  BridgeTrainConfig b;
  b.schedule_steps = bridge_steps;
  b.sampler_steps = bridge_sampler_steps;
  b.hidden = bridge_hidden;
  b.time_dim = bridge_time_dim;
  b.epochs = bridge_epochs;
  b.batch_size = bridge_batch;
  b.learning_rate = bridge_lr;
  b.denoise = denoise_sar;
  b.denoise_cfg = denoise();
  b.seed = seed;
  return b;
}

FusionConfig PipelineConfig::fusion(double tau_value) const {
  return {tau_value, k, bridge_sampler_steps, stage_seed(seed, "fusion")};
}

PipelineConfig parse_config(const std::string& text) {
  PipelineConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorCode::Config, "config line " + std::to_string(line_no) + ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return key == f.key; });
    if (it == table.end()) fail(ErrorCode::Config, "config: unknown key '" + key + "'");
    if (!seen.insert(key).second) fail(ErrorCode::Config, "config: duplicate key '" + key + "'");
    it->set(cfg, value);
  }
  cfg.validate();
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Config, "cannot open config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

std::string serialize_config(const PipelineConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  return out;
}

}  // namespace mos
