#include "fairlab/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include "fairlab/errors.hpp"

#include "fairlab/kernels.hpp"

namespace fairlab {

void ParamBuffer::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

bool ParamBuffer::all_finite() const {
  return std::all_of(value.begin(), value.end(),
                     [](double x) { return std::isfinite(x); });
}

void Adam::step(ParamBuffer& params) {
  if (m_.size() != params.size()) {
    m_.assign(params.size(), 0.0);
    v_.assign(params.size(), 0.0);
    t_ = 0;
  }
  ++t_;
  const double bias1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double bias2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  kernels::active().adam(params.value.data(), params.grad.data(), m_.data(),
                         v_.data(), params.size(), options_.beta1,
                         options_.beta2, options_.lr / bias1, bias2,
                         options_.eps);
}

double relu(double x) { return x > 0.0 ? x : 0.0; }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double log_sum_exp(std::span<const double> values) {
  double peak = -std::numeric_limits<double>::infinity();
  for (double v : values) peak = std::max(peak, v);
  if (!std::isfinite(peak)) return peak;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - peak);
  return peak + std::log(acc);
}

void softmax_inplace(std::span<double> values) {
  const double lse = log_sum_exp(values);
  for (double& v : values) v = std::exp(v - lse);
}

Mlp::Mlp(std::vector<std::size_t> sizes) : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw ArgumentError("Mlp needs >= 2 sizes");
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    offsets_.push_back(total);
    total += sizes_[l] * sizes_[l + 1] + sizes_[l + 1];
  }
  params_ = ParamBuffer(total);
}

std::span<double> Mlp::weights(std::size_t layer) {
  return {params_.value.data() + offsets_[layer],
          sizes_[layer] * sizes_[layer + 1]};
}
std::span<const double> Mlp::weights(std::size_t layer) const {
  return {params_.value.data() + offsets_[layer],
          sizes_[layer] * sizes_[layer + 1]};
}
std::span<double> Mlp::bias(std::size_t layer) {
  return {params_.value.data() + offsets_[layer] +
              sizes_[layer] * sizes_[layer + 1],
          sizes_[layer + 1]};
}
std::span<const double> Mlp::bias(std::size_t layer) const {
  return {params_.value.data() + offsets_[layer] +
              sizes_[layer] * sizes_[layer + 1],
          sizes_[layer + 1]};
}

void Mlp::init_normal(Rng& rng, double std) {
  std::fill(params_.value.begin(), params_.value.end(), 0.0);
  for (std::size_t l = 0; l < layer_count(); ++l) {
    for (double& w : weights(l)) w = std * rng.normal();
  }
}

void Mlp::init_he(Rng& rng) {
  std::fill(params_.value.begin(), params_.value.end(), 0.0);
  for (std::size_t l = 0; l < layer_count(); ++l) {
    const double std = std::sqrt(2.0 / static_cast<double>(sizes_[l]));
    for (double& w : weights(l)) w = std * rng.normal();
  }
}

void Mlp::set_identity() {
  std::fill(params_.value.begin(), params_.value.end(), 0.0);
  for (std::size_t l = 0; l < layer_count(); ++l) {
    if (sizes_[l] != sizes_[l + 1]) {
      throw ArgumentError("identity init needs square layers");
    }
    auto w = weights(l);
    for (std::size_t i = 0; i < sizes_[l]; ++i) w[i * sizes_[l] + i] = 1.0;
  }
}

std::vector<double> Mlp::forward(std::span<const double> x) const {
  Trace trace;
  forward(x, trace);
  return std::move(trace.output);
}

void Mlp::forward(std::span<const double> x, Trace& trace) const {
  if (x.size() != input_dim()) {
    throw ArgumentError("Mlp input has dimension " +
                                std::to_string(x.size()) + ", expected " +
                                std::to_string(input_dim()));
  }
  const auto& k = kernels::active();
  const std::size_t layers = layer_count();
  trace.inputs.resize(layers);
  trace.pre.resize(layers);
  trace.inputs[0].assign(x.begin(), x.end());
  for (std::size_t l = 0; l < layers; ++l) {
    auto& pre = trace.pre[l];
    pre.resize(sizes_[l + 1]);
    k.gemv(weights(l).data(), bias(l).data(), trace.inputs[l].data(),
           pre.data(), sizes_[l + 1], sizes_[l]);
    if (l + 1 < layers) {
      auto& next = trace.inputs[l + 1];
      next.resize(pre.size());
      for (std::size_t i = 0; i < pre.size(); ++i) next[i] = relu(pre[i]);
    }
  }
  trace.output = trace.pre.back();
}

void Mlp::backward(const Trace& trace, std::span<const double> grad_out,
                   std::span<double> grad_in, bool accumulate_params) {
  const auto& k = kernels::active();
  std::vector<double> delta(grad_out.begin(), grad_out.end());
  std::vector<double> upstream;
  for (std::size_t l = layer_count(); l-- > 0;) {
    const std::size_t in = sizes_[l];
    const std::size_t out = sizes_[l + 1];
    if (accumulate_params) {
      double* wgrad = params_.grad.data() + offsets_[l];
      double* bgrad = wgrad + in * out;
      k.outer_acc(delta.data(), trace.inputs[l].data(), wgrad, out, in);
      for (std::size_t i = 0; i < out; ++i) bgrad[i] += delta[i];
    }
    if (l == 0 && grad_in.empty()) break;
    upstream.assign(in, 0.0);
    k.gemv_t_acc(weights(l).data(), delta.data(), upstream.data(), out, in);
    if (l > 0) {
      const auto& pre = trace.pre[l - 1];
      for (std::size_t i = 0; i < in; ++i) {
        if (pre[i] <= 0.0) upstream[i] = 0.0;
      }
    }
    delta.swap(upstream);
  }
  if (!grad_in.empty()) {
    for (std::size_t i = 0; i < grad_in.size(); ++i) grad_in[i] += delta[i];
  }
}

}  // namespace fairlab
