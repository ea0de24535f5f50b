#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "fairlab/kernels.hpp"
#include "fairlab/rng.hpp"

using namespace fairlab;
using kernels::Isa;

namespace {

std::vector<double> randn(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

void check_close(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
  }
}

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("dispatch reports and pins an isa") {
    const auto start = kernels::active_isa();
    {
      kernels::ScopedIsa pin(Isa::kScalar);
      CHECK(kernels::active_isa() == Isa::kScalar);
      CHECK(&kernels::active() == &kernels::scalar_table());
    }
    CHECK(kernels::active_isa() == start);
    if (kernels::avx2_table() == nullptr || !kernels::cpu_has_avx2()) {
      CHECK_THROWS_AS(kernels::set_isa(Isa::kAvx2), std::invalid_argument);
    }
    CHECK(kernels::isa_name(Isa::kScalar) == "scalar");
  }

  TEST_CASE("avx2 kernels match scalar kernels") {
    const auto* fast = kernels::avx2_table();
    if (fast == nullptr || !kernels::cpu_has_avx2()) {
      MESSAGE("no avx2 on this machine; skipping");
      return;
    }
    const auto& slow = kernels::scalar_table();
    Rng rng(3);
    // Lengths straddle the 4-wide and 16-wide unrolled loops and their tails.
    for (std::size_t n : {0UL, 1UL, 3UL, 4UL, 5UL, 7UL, 15UL, 16UL, 17UL, 33UL, 64UL, 130UL}) {
      CAPTURE(n);
      const auto a = randn(n, rng);
      const auto b = randn(n, rng);
      CHECK(fast->dot(a.data(), b.data(), n) ==
            doctest::Approx(slow.dot(a.data(), b.data(), n)).epsilon(1e-12));
      CHECK(fast->squared_distance(a.data(), b.data(), n) ==
            doctest::Approx(slow.squared_distance(a.data(), b.data(), n)).epsilon(1e-12));

      auto y1 = b;
      auto y2 = b;
      slow.axpy(0.37, a.data(), y1.data(), n);
      fast->axpy(0.37, a.data(), y2.data(), n);
      check_close(y1, y2);

      for (std::size_t rows : {1UL, 3UL, 8UL}) {
        CAPTURE(rows);
        const auto w = randn(rows * n, rng);
        const auto bias = randn(rows, rng);
        const auto g = randn(rows, rng);
        std::vector<double> o1(rows), o2(rows);
        slow.gemv(w.data(), bias.data(), a.data(), o1.data(), rows, n);
        fast->gemv(w.data(), bias.data(), a.data(), o2.data(), rows, n);
        check_close(o1, o2);
        slow.gemv(w.data(), nullptr, a.data(), o1.data(), rows, n);
        fast->gemv(w.data(), nullptr, a.data(), o2.data(), rows, n);
        check_close(o1, o2);

        auto x1 = b;
        auto x2 = b;
        slow.gemv_t_acc(w.data(), g.data(), x1.data(), rows, n);
        fast->gemv_t_acc(w.data(), g.data(), x2.data(), rows, n);
        check_close(x1, x2);

        auto w1 = w;
        auto w2 = w;
        slow.outer_acc(g.data(), a.data(), w1.data(), rows, n);
        fast->outer_acc(g.data(), a.data(), w2.data(), rows, n);
        check_close(w1, w2);
      }

      auto p1 = a;
      auto p2 = a;
      auto m1 = randn(n, rng);
      auto m2 = m1;
      auto v1 = randn(n, rng);
      for (double& v : v1) v = v * v;
      auto v2 = v1;
      slow.adam(p1.data(), b.data(), m1.data(), v1.data(), n, 0.9, 0.999, 1e-3, 0.01, 1e-8);
      fast->adam(p2.data(), b.data(), m2.data(), v2.data(), n, 0.9, 0.999, 1e-3, 0.01, 1e-8);
      check_close(p1, p2);
      check_close(m1, m2);
      check_close(v1, v2);
    }
  }

  TEST_CASE("scalar kernels against direct loops") {
    kernels::ScopedIsa pin(Isa::kScalar);
    const std::vector<double> a = {1, 2, 3};
    const std::vector<double> b = {4, -5, 6};
    CHECK(kernels::dot(a, b) == 12.0);
    CHECK(kernels::squared_distance(a, b) == 9.0 + 49.0 + 9.0);
    std::vector<double> y = {1, 1, 1};
    kernels::axpy(2.0, a, y);
    CHECK(y == std::vector<double>{3, 5, 7});
  }
}
