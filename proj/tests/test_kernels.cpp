#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "egnn/kernels.hpp"
#include "egnn/rng.hpp"

using namespace egnn;
namespace k = egnn::kernels;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

bool close(double a, double b, double tol) {
  return std::abs(a - b) <= tol * (1.0 + std::abs(a) + std::abs(b));
}

}  // namespace

TEST_CASE("scalar backend always exists and active() resolves") {
  const k::Ops& s = k::scalar_ops();
  CHECK(std::string(s.name) == "scalar");
  CHECK(k::active().name != nullptr);
}

TEST_CASE("force(scalar) pins the backend, reset() restores detection") {
  k::force(k::Backend::scalar);
  CHECK(k::active_backend() == k::Backend::scalar);
  k::reset();
  const k::Ops* simd = k::simd_ops();
  if (simd != nullptr) {
    CHECK(std::string(k::active().name) == simd->name);
  } else {
    CHECK(k::active_backend() == k::Backend::scalar);
  }
}

TEST_CASE("simd backends agree with the scalar reference") {
  const k::Ops* simd = k::simd_ops();
  if (simd == nullptr) {
    MESSAGE("no SIMD backend on this CPU, skipping equivalence checks");
    return;
  }
  const k::Ops& ref = k::scalar_ops();
  Rng rng(20240811);

  // ragged sizes exercise both the vector body and the scalar tail
  for (std::size_t n : {1u, 2u, 3u, 4u, 5u, 7u, 8u, 16u, 31u, 67u, 128u, 513u}) {
    auto x = random_vec(rng, n, -3.0, 3.0);
    auto y0 = random_vec(rng, n, -3.0, 3.0);
    const double a = rng.uniform(-2.0, 2.0);

    SUBCASE("") {}  // keep sizes in one test case body

    auto y1 = y0, y2 = y0;
    ref.axpy(y1.data(), a, x.data(), n);
    simd->axpy(y2.data(), a, x.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(close(y1[i], y2[i], 1e-14));

    y1 = y0;
    y2 = y0;
    ref.add(y1.data(), x.data(), n);
    simd->add(y2.data(), x.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == y2[i]);

    CHECK(close(ref.dot(x.data(), y0.data(), n),
                simd->dot(x.data(), y0.data(), n), 1e-12));

    y1 = y0;
    y2 = y0;
    ref.scale(y1.data(), a, n);
    simd->scale(y2.data(), a, n);
    for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == y2[i]);

    y1.assign(n, 0.0);
    y2.assign(n, 0.0);
    ref.relu_inplace(y1.data(), n);  // no-op on zeros
    auto z = random_vec(rng, n, -2.0, 2.0);
    y1 = z;
    y2 = z;
    ref.relu_inplace(y1.data(), n);
    simd->relu_inplace(y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == y2[i]);
  }
}

TEST_CASE("simd sigmoid matches libm over a wide input range") {
  const k::Ops* simd = k::simd_ops();
  if (simd == nullptr) return;
  const k::Ops& ref = k::scalar_ops();

  std::vector<double> xs;
  Rng rng(7);
  for (int i = 0; i < 4000; ++i) xs.push_back(rng.uniform(-40.0, 40.0));
  for (int i = 0; i < 400; ++i) xs.push_back(rng.uniform(-750.0, 750.0));
  xs.insert(xs.end(), {0.0, 1.0, -1.0, 88.0, -88.0, 709.0, -709.0, 745.0, -745.0});

  std::vector<double> a(xs.size()), b(xs.size());
  ref.sigmoid(a.data(), xs.data(), xs.size());
  simd->sigmoid(b.data(), xs.data(), xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    // absolute-or-relative: saturated tails may differ by a denormal
    CHECK(std::abs(a[i] - b[i]) <=
          1e-12 * std::max(1.0, std::abs(a[i]) + std::abs(b[i])));
  }
}

TEST_CASE("simd sigmoid_backward and adam_update agree with scalar") {
  const k::Ops* simd = k::simd_ops();
  if (simd == nullptr) return;
  const k::Ops& ref = k::scalar_ops();
  Rng rng(99);

  for (std::size_t n : {1u, 5u, 64u, 129u}) {
    auto u = random_vec(rng, n, -2.0, 2.0);
    auto y = random_vec(rng, n, 0.01, 0.99);
    std::vector<double> g1(n), g2(n);
    ref.sigmoid_backward(g1.data(), u.data(), y.data(), n);
    simd->sigmoid_backward(g2.data(), u.data(), y.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(close(g1[i], g2[i], 1e-14));

    auto w0 = random_vec(rng, n, -1.0, 1.0);
    auto m0 = random_vec(rng, n, -0.1, 0.1);
    auto v0 = random_vec(rng, n, 0.0, 0.1);
    auto g = random_vec(rng, n, -1.0, 1.0);
    auto w1 = w0, m1 = m0, v1 = v0;
    auto w2 = w0, m2 = m0, v2 = v0;
    const double bc1 = 1.0 - std::pow(0.9, 7);
    const double bc2 = 1.0 - std::pow(0.999, 7);
    ref.adam_update(w1.data(), m1.data(), v1.data(), g.data(), n, 0.003, 0.9,
                    0.999, 1e-8, bc1, bc2);
    simd->adam_update(w2.data(), m2.data(), v2.data(), g.data(), n, 0.003, 0.9,
                      0.999, 1e-8, bc1, bc2);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(close(w1[i], w2[i], 1e-12));
      CHECK(close(m1[i], m2[i], 1e-13));
      CHECK(close(v1[i], v2[i], 1e-13));
    }
  }
}

TEST_CASE("kernels are deterministic: same inputs, same outputs") {
  const k::Ops& ops = k::active();
  Rng rng(5);
  auto x = random_vec(rng, 128, -1.0, 1.0);
  auto y = random_vec(rng, 128, -1.0, 1.0);
  CHECK(ops.dot(x.data(), y.data(), x.size()) ==
        ops.dot(x.data(), y.data(), x.size()));
  std::vector<double> s1(128), s2(128);
  ops.sigmoid(s1.data(), x.data(), 128);
  ops.sigmoid(s2.data(), x.data(), 128);
  CHECK(s1 == s2);
}

TEST_CASE("rng streams are reproducible and derive() is independent") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng c(42);
  Rng c1 = c.derive(1), c2 = c.derive(2);
  CHECK(c1.next_u64() != c2.next_u64());
  // derive is a pure function of (seed, stream)
  Rng d(42);
  CHECK(d.derive(1).next_u64() == Rng(42).derive(1).next_u64());
}

TEST_CASE("rng uniform and below stay in range") {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.next_double();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const auto v = rng.below(7);
    CHECK(v < 7);
  }
  // normal: sample mean of 10k draws within 5 sigma of 0
  double sum = 0.0;
  for (int i = 0; i < 10000; ++i) sum += rng.normal();
  CHECK(std::abs(sum / 10000.0) < 0.05);
}
