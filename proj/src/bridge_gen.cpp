#include "mos/bridge_gen.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

namespace mos {

BridgeSchedule make_schedule(int steps) {
  if (steps < 2 || steps % 2 != 0) fail(ErrorCode::Config, "bridge: schedule steps must be even and >= 2");
  BridgeSchedule s;
  s.steps = steps;
  s.m.resize(static_cast<std::size_t>(steps) + 1);
  s.delta.resize(static_cast<std::size_t>(steps) + 1);
  for (int t = 0; t <= steps; ++t) {
    const double m = static_cast<double>(t) / steps;
    s.m[static_cast<std::size_t>(t)] = m;
    s.delta[static_cast<std::size_t>(t)] = 2.0 * (m - m * m);
  }
  return s;
}

namespace {

void check_step(int t, const BridgeSchedule& schedule) {
  if (t < 0 || t > schedule.steps) fail(ErrorCode::Data, "bridge: step outside [0, T]");
}

}  // namespace

Vec bridge_state(const Vec& x0, const Vec& y, const Vec& noise, int t, const BridgeSchedule& schedule) {
  check_step(t, schedule);
  if (x0.size() != y.size() || noise.size() != y.size()) fail(ErrorCode::Data, "bridge: dimension mismatch");
  const double m = schedule.m[static_cast<std::size_t>(t)];
  const double delta = schedule.delta[static_cast<std::size_t>(t)];
  // endpoints written out so they are exact rather than merely close
  if (t == 0) return x0;
  if (t == schedule.steps) return y;
  return (1.0 - m) * x0 + m * y + std::sqrt(delta) * noise;
}

ForwardSample forward_sample(const Vec& x0, const Vec& y, int t, const BridgeSchedule& schedule, Rng& rng) {
  if (x0.size() != y.size()) fail(ErrorCode::Data, "bridge: dimension mismatch");
  ForwardSample s;
  s.noise.resize(x0.size());
  for (Eigen::Index i = 0; i < s.noise.size(); ++i) s.noise[i] = standard_normal(rng);
  s.x_t = bridge_state(x0, y, s.noise, t, schedule);
  return s;
}

Vec time_embedding(int t, int steps, int dim) {
  if (dim < 2 || dim % 2 != 0) fail(ErrorCode::Config, "bridge: time embedding dim must be even and >= 2");
  const int half = dim / 2;
  const double s = static_cast<double>(t) / steps;
  Vec e(dim);
  for (int i = 0; i < half; ++i) {
    // frequencies 1 .. 1000 (geometric) applied to t/T scaled to [0, 2*pi*...]
    const double freq = std::pow(1000.0, static_cast<double>(i) / std::max(half - 1, 1));
    e[i] = std::sin(s * freq);
    e[half + i] = std::cos(s * freq);
  }
  return e;
}

Vec NoisePredictor::predict(const Vec& x_t, int t, const Vec& y) const {
  const int ts[1] = {t};
  return predict(Mat(x_t), ts, Mat(y)).col(0);
}

MlpNoisePredictor::MlpNoisePredictor(Mlp net, int data_dim, int time_dim, int schedule_steps)
    : net_(std::move(net)),
      data_dim_(data_dim),
      time_dim_(time_dim),
      schedule_steps_(schedule_steps),
      schedule_(make_schedule(schedule_steps)) {
  if (net_.input_dim() != 2 * data_dim + time_dim || net_.output_dim() != data_dim)
    fail(ErrorCode::Data, "bridge: predictor network shape does not match data/time dims");
}

MlpNoisePredictor MlpNoisePredictor::random(int data_dim, int hidden, int time_dim, int schedule_steps, Rng& rng) {
  Mlp net = Mlp::random({2 * data_dim + time_dim, hidden, hidden, data_dim}, rng);
  net.layers().back().weight *= 0.1;
  return MlpNoisePredictor(std::move(net), data_dim, time_dim, schedule_steps);
}

Mat MlpNoisePredictor::inputs(const Mat& x_t, std::span<const int> t, const Mat& y) const {
  const auto n = x_t.cols();
  if (x_t.rows() != data_dim_ || y.rows() != data_dim_ || y.cols() != n || static_cast<Eigen::Index>(t.size()) != n)
    fail(ErrorCode::Data, "bridge: predictor input dimension mismatch");
  Mat in(2 * data_dim_ + time_dim_, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    in.col(j).head(data_dim_) = x_t.col(j);
    in.col(j).segment(data_dim_, data_dim_) = y.col(j);
    in.col(j).tail(time_dim_) = time_embedding(t[static_cast<std::size_t>(j)], schedule_steps_, time_dim_);
  }
  return in;
}

double MlpNoisePredictor::output_jacobian(int t) const {
  check_step(t, schedule_);
  if (t == 0 || t == schedule_steps_) return 0.0;
  const auto i = static_cast<std::size_t>(t);
  return -(1.0 - schedule_.m[i]) / std::sqrt(schedule_.delta[i]);
}

Mat MlpNoisePredictor::noise_from_output(const Mat& output, const Mat& x_t, std::span<const int> t, const Mat& y) const {
  Mat eps(output.rows(), output.cols());
  for (Eigen::Index j = 0; j < output.cols(); ++j) {
    const int step = t[static_cast<std::size_t>(j)];
    if (step == 0 || step == schedule_steps_) {
      eps.col(j).setZero();
      continue;
    }
    const auto i = static_cast<std::size_t>(step);
    eps.col(j) = (x_t.col(j) - (1.0 - schedule_.m[i]) * output.col(j) - schedule_.m[i] * y.col(j)) /
                 std::sqrt(schedule_.delta[i]);
  }
  return eps;
}

Mat MlpNoisePredictor::predict(const Mat& x_t, std::span<const int> t, const Mat& y) const {
  return noise_from_output(net_.forward(inputs(x_t, t, y)), x_t, t, y);
}

DiffusionDraws draw_diffusion(std::span<const BridgePair> pairs, const BridgeSchedule& schedule, Rng& rng) {
  DiffusionDraws d;
  for (const auto& p : pairs) {
    d.t.push_back(1 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(schedule.steps - 1))));
    Vec eps(p.x0.size());
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps[i] = standard_normal(rng);
    d.noise.push_back(std::move(eps));
  }
  return d;
}

namespace {

struct DiffusionBatch {
  Mat x_t, y, noise;
};

DiffusionBatch assemble(std::span<const BridgePair> pairs, const BridgeSchedule& schedule, const DiffusionDraws& draws) {
  if (pairs.empty()) fail(ErrorCode::Data, "bridge: empty pair list");
  if (draws.t.size() != pairs.size() || draws.noise.size() != pairs.size()) fail(ErrorCode::Data, "bridge: draw count mismatch");
  const auto dim = pairs.front().x0.size();
  const auto n = static_cast<Eigen::Index>(pairs.size());
  DiffusionBatch b{Mat(dim, n), Mat(dim, n), Mat(dim, n)};
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& p = pairs[static_cast<std::size_t>(j)];
    if (p.x0.size() != dim || p.y.size() != dim) fail(ErrorCode::Data, "bridge: dimension mismatch");
    b.noise.col(j) = draws.noise[static_cast<std::size_t>(j)];
    b.y.col(j) = p.y;
    b.x_t.col(j) = bridge_state(p.x0, p.y, b.noise.col(j), draws.t[static_cast<std::size_t>(j)], schedule);
  }
  return b;
}

}  // namespace

double diffusion_loss(const NoisePredictor& predictor, std::span<const BridgePair> pairs, const BridgeSchedule& schedule,
                      const DiffusionDraws& draws) {
  const auto b = assemble(pairs, schedule, draws);
  const Mat pred = predictor.predict(b.x_t, draws.t, b.y);
  return (b.noise - pred).colwise().squaredNorm().mean();
}

DiffusionLossAndGradient diffusion_loss_and_gradient(const MlpNoisePredictor& predictor, std::span<const BridgePair> pairs,
                                                     const BridgeSchedule& schedule, const DiffusionDraws& draws) {
  const auto b = assemble(pairs, schedule, draws);
  Mlp::Tape tape;
  const Mat raw = predictor.net().forward(predictor.inputs(b.x_t, draws.t, b.y), &tape);
  const Mat residual = b.noise - predictor.noise_from_output(raw, b.x_t, draws.t, b.y);
  const double n = static_cast<double>(pairs.size());
  DiffusionLossAndGradient out;
  out.loss = residual.colwise().squaredNorm().sum() / n;
  Mat grad_raw = (-2.0 / n) * residual;
  for (Eigen::Index j = 0; j < grad_raw.cols(); ++j)
    grad_raw.col(j) *= predictor.output_jacobian(draws.t[static_cast<std::size_t>(j)]);
  out.grad = predictor.net().backward(tape, grad_raw);
  return out;
}

Vec reconstruct_x0(const Vec& x_t, const Vec& y, const Vec& noise_hat, int t, const BridgeSchedule& schedule) {
  if (t < 0 || t >= schedule.steps) fail(ErrorCode::Data, "bridge: reconstruction needs 0 <= t < T");
  const double m = schedule.m[static_cast<std::size_t>(t)];
  const double delta = schedule.delta[static_cast<std::size_t>(t)];
  return (x_t - m * y - std::sqrt(delta) * noise_hat) / (1.0 - m);
}

Vec run_sampler(const NoisePredictor& predictor, const Vec& x_start, int t_start, const Vec& y,
                const BridgeSchedule& schedule, std::span<const int> grid) {
  if (grid.empty() || grid.back() != 0) fail(ErrorCode::Data, "bridge: sampler grid must end at 0");
  Vec x = x_start;
  int t = t_start;
  for (int next : grid) {
    if (next >= t) fail(ErrorCode::Data, "bridge: sampler grid must be strictly decreasing");
    const Vec eps_hat = predictor.predict(x, t, y);
    const Vec x0_hat = reconstruct_x0(x, y, eps_hat, t, schedule);
    x = bridge_state(x0_hat, y, eps_hat, next, schedule);
    t = next;
  }
  return x;
}

Vec generate(const NoisePredictor& predictor, const Vec& y, const BridgeSchedule& schedule, int sampler_steps, Rng& rng) {
  if (sampler_steps < 1 || schedule.steps % sampler_steps != 0)
    fail(ErrorCode::Config, "bridge: sampler steps must divide the schedule length");
  const int stride = schedule.steps / sampler_steps;
  const int first = schedule.steps - stride;

  Vec noise(y.size());
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise[i] = standard_normal(rng);
  const Vec x_first = bridge_state(y, y, noise, first, schedule);
  if (first == 0) return x_first;

  std::vector<int> grid;
  for (int t = first - stride; t >= 0; t -= stride) grid.push_back(t);
  return run_sampler(predictor, x_first, first, y, schedule, grid);
}

std::vector<LabeledImage> generate_pseudo_set(const NoisePredictor& predictor, const LabeledImage& optical, int count,
                                              const BridgeSchedule& schedule, int sampler_steps, std::uint64_t seed) {
  if (count < 1) fail(ErrorCode::Config, "bridge: K must be >= 1");
  const Vec y = optical.as_unit_vector();
  std::vector<LabeledImage> out;
  for (int k = 0; k < count; ++k) {
    Rng rng(sub_seed(seed, static_cast<std::uint64_t>(k)));
    const Vec x = generate(predictor, y, schedule, sampler_steps, rng);
    LabeledImage img{optical.height, optical.width, std::vector<double>(static_cast<std::size_t>(x.size())),
                     optical.identity, Modality::Sar};
    for (Eigen::Index i = 0; i < x.size(); ++i) img.pixels[static_cast<std::size_t>(i)] = std::clamp(255.0 * x[i], 0.0, 255.0);
    out.push_back(std::move(img));
  }
  return out;
}

void BridgeTrainConfig::validate() const {
  make_schedule(schedule_steps);
  if (sampler_steps < 1 || schedule_steps % sampler_steps != 0)
    fail(ErrorCode::Config, "bridge: sampler steps must divide the schedule length");
  if (hidden < 1) fail(ErrorCode::Config, "bridge: hidden size must be >= 1");
  if (time_dim < 2 || time_dim % 2 != 0) fail(ErrorCode::Config, "bridge: time dim must be even and >= 2");
  if (epochs < 1 || batch_size < 1) fail(ErrorCode::Config, "bridge: epochs and batch size must be >= 1");
  if (!(learning_rate > 0.0)) fail(ErrorCode::Config, "bridge: learning rate must be > 0");
  denoise_cfg.validate();
}

BridgeTrainResult train_bridge(const BridgeTrainConfig& cfg, const Dataset& data) {
  cfg.validate();
  const auto schedule = make_schedule(cfg.schedule_steps);

  std::map<int, std::vector<std::size_t>> sar_of;
  std::vector<std::size_t> optical;
  std::vector<Vec> unit(data.images.size());
  for (std::size_t i = 0; i < data.images.size(); ++i) {
    const auto& img = data.images[i];
    if (img.modality == Modality::Sar) {
      sar_of[img.identity].push_back(i);
      unit[i] = (cfg.denoise ? denoise_image(img, cfg.denoise_cfg) : img).as_unit_vector();
    } else {
      optical.push_back(i);
      unit[i] = img.as_unit_vector();
    }
  }
  std::erase_if(optical, [&](std::size_t i) { return !sar_of.contains(data.images[i].identity); });
  if (optical.empty()) fail(ErrorCode::Data, "bridge: no optical image has a same-identity SAR partner");

  Rng init_rng(stage_seed(cfg.seed, "bridge/init"));
  Rng pair_rng(stage_seed(cfg.seed, "bridge/pairs"));
  Rng noise_rng(stage_seed(cfg.seed, "bridge/noise"));

  const int dim = static_cast<int>(unit[optical.front()].size());
  BridgeTrainResult result;
  result.predictor = MlpNoisePredictor::random(dim, cfg.hidden, cfg.time_dim, cfg.schedule_steps, init_rng);
  Adam adam(cfg.learning_rate);
  Vec params = result.predictor.net().flatten();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = optical;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(pair_rng, i)]);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<BridgePair> pairs;
      for (std::size_t j = start; j < std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size)); ++j) {
        const auto& partners = sar_of.at(data.images[order[j]].identity);
        pairs.push_back({unit[partners[uniform_index(pair_rng, partners.size())]], unit[order[j]]});
      }
      const auto draws = draw_diffusion(pairs, schedule, noise_rng);
      const auto lg = diffusion_loss_and_gradient(result.predictor, pairs, schedule, draws);
      if (!std::isfinite(lg.loss)) fail(ErrorCode::Numeric, "bridge: non-finite diffusion loss");
      adam.step(params, flatten_layers(lg.grad));
      result.predictor.net().assign(params);
      epoch_loss += lg.loss;
      ++batches;
    }
    result.loss_history.push_back(epoch_loss / batches);
  }
  return result;
}

namespace {
constexpr char kBridgeMagic[4] = {'M', 'O', 'S', 'B'};
constexpr std::uint32_t kBridgeVersion = 1;
}  // namespace

void save_bridge(const std::filesystem::path& path, const MlpNoisePredictor& predictor) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Data, "cannot write bridge model " + path.string());
  out.write(kBridgeMagic, 4);
  write_u32(out, kBridgeVersion);
  write_u32(out, static_cast<std::uint32_t>(predictor.schedule_steps()));
  write_u32(out, static_cast<std::uint32_t>(predictor.time_dim()));
  write_u32(out, static_cast<std::uint32_t>(predictor.data_dim()));
  write_dims(out, predictor.net().dims());
  write_layer_values(out, predictor.net());
}

MlpNoisePredictor load_bridge(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Data, "cannot open bridge model " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kBridgeMagic, 4) != 0) fail(ErrorCode::Data, "not a bridge model file");
  if (read_u32(in) != kBridgeVersion) fail(ErrorCode::Data, "unsupported bridge model version");
  const auto steps = static_cast<int>(read_u32(in));
  const auto time_dim = static_cast<int>(read_u32(in));
  const auto data_dim = static_cast<int>(read_u32(in));
  make_schedule(steps);
  const auto dims = read_dims(in);
  return MlpNoisePredictor(read_layer_values(in, dims), data_dim, time_dim, steps);
}

}  // namespace mos
