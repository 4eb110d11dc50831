#pragma once

#include <iosfwd>
#include <vector>

#include "mos/common.hpp"

namespace mos {

struct DenseLayer {
  Mat weight;  // out x in
  Vec bias;    // out
};

/// Fully connected network with ReLU between layers and a linear output.
/// Batched calls take one sample per column.
class Mlp {
 public:
  struct Tape {
    std::vector<Mat> inputs;  // input to each layer (post-activation of the previous one)
    std::vector<Mat> pre;     // pre-activation of each layer
  };

  Mlp() = default;
  explicit Mlp(std::vector<DenseLayer> layers);

  /// He-normal weights, zero biases.
  static Mlp random(const std::vector<int>& dims, Rng& rng);
  static Mlp zeros(const std::vector<int>& dims);

  std::vector<int> dims() const;
  int input_dim() const { return static_cast<int>(layers_.front().weight.cols()); }
  int output_dim() const { return static_cast<int>(layers_.back().weight.rows()); }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  Mat forward(const Mat& x, Tape* tape = nullptr) const;
  Vec forward(const Vec& x) const;

  /// Gradient of a scalar loss w.r.t. every layer given d(loss)/d(output).
  /// Returned layers have the shapes of this network. If `grad_input` is set
  /// it receives d(loss)/d(input).
  std::vector<DenseLayer> backward(const Tape& tape, const Mat& grad_output, Mat* grad_input = nullptr) const;

  std::size_t num_params() const;
  Vec flatten() const;
  void assign(const Vec& flat);
  bool all_finite() const;

 private:
  std::vector<DenseLayer> layers_;
};

Vec flatten_layers(const std::vector<DenseLayer>& layers);

/// Layer dimension list as u32 count followed by u32 dims.
void write_dims(std::ostream& out, const std::vector<int>& dims);
std::vector<int> read_dims(std::istream& in);

/// Per layer: out*in f64 row-major weights, then out f64 biases.
void write_layer_values(std::ostream& out, const Mlp& net);
Mlp read_layer_values(std::istream& in, const std::vector<int>& dims);

void write_u32(std::ostream& out, std::uint32_t v);
std::uint32_t read_u32(std::istream& in);
void write_f64(std::ostream& out, double v);
double read_f64(std::istream& in);

/// Adam state over a flat parameter vector.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(Vec& params, const Vec& grad);

 private:
  double lr_, beta1_, beta2_, eps_;
  Vec m_, v_;
  long t_ = 0;
};

}  // namespace mos
