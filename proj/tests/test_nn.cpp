#include <doctest.h>

#include <cmath>
#include <limits>

#include "fairlab/nn.hpp"
#include "oracles.hpp"

using namespace fairlab;

TEST_SUITE("nn") {
  TEST_CASE("mlp backward matches finite differences") {
    Rng rng(5);
    Mlp net({4, 6, 3});
    net.init_normal(rng, 0.5);
    for (double& b : net.params().value) b += 0.05 * rng.normal();
    std::vector<double> x = {0.3, -0.7, 1.1, 0.2};
    const std::vector<double> weight = {0.5, -1.0, 2.0};
    const auto loss = [&] {
      const auto y = net.forward(x);
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += weight[i] * y[i] * y[i];
      return s;
    };
    Mlp::Trace trace;
    net.forward(x, trace);
    std::vector<double> grad_out(3);
    for (std::size_t i = 0; i < 3; ++i) grad_out[i] = 2.0 * weight[i] * trace.output[i];
    std::vector<double> grad_in(4, 0.0);
    net.params().zero_grad();
    net.backward(trace, grad_out, grad_in);

    const auto num_x = oracle::numeric_gradient(loss, x);
    CHECK(oracle::relative_error(grad_in, num_x) < 1e-7);
    const auto num_p = oracle::numeric_gradient(loss, net.params().value);
    CHECK(oracle::relative_error(net.params().grad, num_p) < 1e-7);
  }

  TEST_CASE("identity network passes inputs through") {
    Mlp net({3, 3, 3});
    net.set_identity();
    const std::vector<double> x = {0.5, 1.5, 2.0};
    CHECK(net.forward(x) == x);
  }

  TEST_CASE("forward rejects a wrong input size") {
    Mlp net({3, 2});
    const std::vector<double> x = {1.0, 2.0};
    CHECK_THROWS(net.forward(x));
  }

  TEST_CASE("adam first step moves each weight by lr against its gradient sign") {
    ParamBuffer p(3);
    p.value = {1.0, -2.0, 0.5};
    p.grad = {0.3, -4.0, 1e-3};
    Adam opt({0.01});
    opt.step(p);
    CHECK(p.value[0] == doctest::Approx(0.99).epsilon(1e-6));
    CHECK(p.value[1] == doctest::Approx(-1.99).epsilon(1e-6));
    CHECK(p.value[2] == doctest::Approx(0.49).epsilon(1e-4));
    CHECK(opt.steps() == 1);
  }

  TEST_CASE("adam matches the textbook update over several steps") {
    ParamBuffer p(1);
    p.value = {0.0};
    Adam opt({0.1, 0.9, 0.999, 1e-8});
    double m = 0.0, v = 0.0, x = 0.0;
    for (int t = 1; t <= 5; ++t) {
      const double g = 2.0 * (x - 3.0);
      p.grad = {g};
      opt.step(p);
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      const double mh = m / (1.0 - std::pow(0.9, t));
      const double vh = v / (1.0 - std::pow(0.999, t));
      x -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
      CHECK(p.value[0] == doctest::Approx(x).epsilon(1e-9));
    }
  }

  TEST_CASE("numerically stable helpers") {
    CHECK(softplus(1000.0) == doctest::Approx(1000.0));
    CHECK(softplus(-1000.0) >= 0.0);
    CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)));
    CHECK(sigmoid(-800.0) >= 0.0);
    CHECK(sigmoid(0.0) == 0.5);
    const std::vector<double> big = {1000.0, 1000.0};
    CHECK(log_sum_exp(big) == doctest::Approx(1000.0 + std::log(2.0)));
    std::vector<double> s = {1.0, 2.0, 3.0};
    softmax_inplace(s);
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(s[2] == doctest::Approx(std::exp(3.0) / z));
    CHECK(s[0] + s[1] + s[2] == doctest::Approx(1.0));
  }

  TEST_CASE("finite check on parameter buffers") {
    ParamBuffer p(2);
    CHECK(p.all_finite());
    p.value[1] = std::numeric_limits<double>::quiet_NaN();
    CHECK_FALSE(p.all_finite());
  }
}
