#include "mos/mlp.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

namespace mos {

Mlp::Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) fail(ErrorCode::Config, "mlp: no layers");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].bias.size() != layers_[i].weight.rows()) fail(ErrorCode::Data, "mlp: bias/weight mismatch");
    if (i > 0 && layers_[i].weight.cols() != layers_[i - 1].weight.rows())
      fail(ErrorCode::Data, "mlp: inconsistent layer dimensions");
  }
}

Mlp Mlp::random(const std::vector<int>& dims, Rng& rng) {
  if (dims.size() < 2) fail(ErrorCode::Config, "mlp: need at least input and output dims");
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    if (dims[i] < 1 || dims[i + 1] < 1) fail(ErrorCode::Config, "mlp: layer dims must be positive");
    DenseLayer layer{Mat(dims[i + 1], dims[i]), Vec::Zero(dims[i + 1])};
    const double scale = std::sqrt(2.0 / dims[i]);
    // column-major fill order is part of the reproducibility contract
    for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) layer.weight(r, c) = scale * standard_normal(rng);
    layers.push_back(std::move(layer));
  }
  return Mlp(std::move(layers));
}

Mlp Mlp::zeros(const std::vector<int>& dims) {
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) layers.push_back({Mat::Zero(dims[i + 1], dims[i]), Vec::Zero(dims[i + 1])});
  return Mlp(std::move(layers));
}

std::vector<int> Mlp::dims() const {
  std::vector<int> d{input_dim()};
  for (const auto& l : layers_) d.push_back(static_cast<int>(l.weight.rows()));
  return d;
}

Mat Mlp::forward(const Mat& x, Tape* tape) const {
  if (x.rows() != input_dim()) fail(ErrorCode::Data, "mlp: input dimension mismatch");
  if (tape) {
    tape->inputs.clear();
    tape->pre.clear();
  }
  Mat h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Mat z = layers_[i].weight * h;
    z.colwise() += layers_[i].bias;
    if (tape) {
      tape->inputs.push_back(h);
      tape->pre.push_back(z);
    }
    h = (i + 1 < layers_.size()) ? Mat(z.cwiseMax(0.0)) : z;
  }
  return h;
}

Vec Mlp::forward(const Vec& x) const { return forward(Mat(x)).col(0); }

std::vector<DenseLayer> Mlp::backward(const Tape& tape, const Mat& grad_output, Mat* grad_input) const {
  std::vector<DenseLayer> grads(layers_.size());
  Mat delta = grad_output;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    if (k + 1 < layers_.size()) delta = delta.cwiseProduct((tape.pre[k].array() > 0.0).cast<double>().matrix());
    grads[k].weight = delta * tape.inputs[k].transpose();
    grads[k].bias = delta.rowwise().sum();
    if (k > 0 || grad_input) delta = layers_[k].weight.transpose() * delta;
  }
  if (grad_input) *grad_input = delta;
  return grads;
}

std::size_t Mlp::num_params() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

Vec flatten_layers(const std::vector<DenseLayer>& layers) {
  Eigen::Index n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  Vec flat(n);
  Eigen::Index o = 0;
  for (const auto& l : layers) {
    flat.segment(o, l.weight.size()) = Eigen::Map<const Vec>(l.weight.data(), l.weight.size());
    o += l.weight.size();
    flat.segment(o, l.bias.size()) = l.bias;
    o += l.bias.size();
  }
  return flat;
}

Vec Mlp::flatten() const { return flatten_layers(layers_); }

void Mlp::assign(const Vec& flat) {
  if (static_cast<std::size_t>(flat.size()) != num_params()) fail(ErrorCode::Data, "mlp: parameter count mismatch");
  Eigen::Index o = 0;
  for (auto& l : layers_) {
    Eigen::Map<Vec>(l.weight.data(), l.weight.size()) = flat.segment(o, l.weight.size());
    o += l.weight.size();
    l.bias = flat.segment(o, l.bias.size());
    o += l.bias.size();
  }
}

bool Mlp::all_finite() const {
  for (const auto& l : layers_)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) fail(ErrorCode::Data, "unexpected end of binary file");
  return v;
}

void write_f64(std::ostream& out, double v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

double read_f64(std::istream& in) {
  double v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) fail(ErrorCode::Data, "unexpected end of binary file");
  return v;
}

void write_dims(std::ostream& out, const std::vector<int>& dims) {
  write_u32(out, static_cast<std::uint32_t>(dims.size()));
  for (int d : dims) write_u32(out, static_cast<std::uint32_t>(d));
}

std::vector<int> read_dims(std::istream& in) {
  const auto count = read_u32(in);
  if (count < 2 || count > 64) fail(ErrorCode::Data, "model file: bad dimension count");
  std::vector<int> dims;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto d = read_u32(in);
    if (d == 0 || d > (1u << 20)) fail(ErrorCode::Data, "model file: bad layer dimension");
    dims.push_back(static_cast<int>(d));
  }
  return dims;
}

void write_layer_values(std::ostream& out, const Mlp& net) {
  for (const auto& l : net.layers()) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) write_f64(out, l.weight(r, c));
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) write_f64(out, l.bias[r]);
  }
}

Mlp read_layer_values(std::istream& in, const std::vector<int>& dims) {
  Mlp net = Mlp::zeros(dims);
  for (auto& l : net.layers()) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = read_f64(in);
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias[r] = read_f64(in);
  }
  if (!net.all_finite()) fail(ErrorCode::Data, "model file: non-finite weights");
  return net;
}

void Adam::step(Vec& params, const Vec& grad) {
  if (m_.size() != params.size()) {
    m_ = Vec::Zero(params.size());
    v_ = Vec::Zero(params.size());
    t_ = 0;
  }
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

}  // namespace mos
