#pragma once

// Minimal dense building blocks: row-major matrices, parameter buffers with
// gradient storage, Adam, and a ReLU multilayer perceptron with a hand-written
// backward pass.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fairlab/rng.hpp"

namespace fairlab {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::span<double> row(std::size_t r) {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Trainable values with a same-shaped gradient accumulator.
struct ParamBuffer {
  std::vector<double> value;
  std::vector<double> grad;

  explicit ParamBuffer(std::size_t n = 0) : value(n, 0.0), grad(n, 0.0) {}
  std::size_t size() const { return value.size(); }
  void zero_grad();
  bool all_finite() const;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One optimizer instance per parameter buffer.
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}
  void step(ParamBuffer& params);
  const AdamOptions& options() const { return options_; }
  long steps() const { return t_; }

 private:
  AdamOptions options_;
  std::vector<double> m_;
  std::vector<double> v_;
  long t_ = 0;
};

double relu(double x);
double sigmoid(double x);
// log(1 + exp(x)) without overflow.
double softplus(double x);
double log_sum_exp(std::span<const double> values);
void softmax_inplace(std::span<double> values);

// Fully-connected network: Linear -> ReLU -> ... -> Linear. The last layer has
// no activation. Parameters live in one contiguous buffer, layer by layer,
// weights (out x in, row-major) followed by biases.
class Mlp {
 public:
  Mlp() = default;
  // sizes = {in, hidden..., out}; at least two entries.
  explicit Mlp(std::vector<std::size_t> sizes);

  struct Trace {
    // inputs[l] is the input to layer l; pre[l] its pre-activation output.
    std::vector<std::vector<double>> inputs;
    std::vector<std::vector<double>> pre;
    std::vector<double> output;
  };

  std::size_t input_dim() const { return sizes_.front(); }
  std::size_t output_dim() const { return sizes_.back(); }
  std::size_t layer_count() const { return sizes_.size() - 1; }
  const std::vector<std::size_t>& sizes() const { return sizes_; }

  void init_normal(Rng& rng, double std);  // biases zero
  void init_he(Rng& rng);                  // N(0, 2/fan_in), biases zero
  void set_identity();                     // requires square layers

  std::vector<double> forward(std::span<const double> x) const;
  void forward(std::span<const double> x, Trace& trace) const;
  // Accumulates parameter gradients, and dL/dx into grad_in unless empty.
  void backward(const Trace& trace, std::span<const double> grad_out,
                std::span<double> grad_in, bool accumulate_params = true);

  std::span<double> weights(std::size_t layer);
  std::span<const double> weights(std::size_t layer) const;
  std::span<double> bias(std::size_t layer);
  std::span<const double> bias(std::size_t layer) const;

  ParamBuffer& params() { return params_; }
  const ParamBuffer& params() const { return params_; }

 private:
  std::vector<std::size_t> sizes_;
  std::vector<std::size_t> offsets_;
  ParamBuffer params_;
};

}  // namespace fairlab
