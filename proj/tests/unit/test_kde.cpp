#include <doctest.h>

#include "postapprox/error.hpp"
#include "postapprox/kde.hpp"
#include "test_util.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

using namespace postapprox;

namespace {

// Independent oracle: direct sum over kernels with a fresh inverse.
double brute_force_kde(const Matrix& train, const Matrix& bw, const Vector& x) {
  const Matrix inv = bw.inverse();
  const double norm = 1.0 / std::sqrt(std::pow(2 * std::numbers::pi, static_cast<double>(x.size())) * bw.determinant());
  double s = 0.0;
  for (Eigen::Index i = 0; i < train.rows(); ++i) {
    const Vector d = x - train.row(i).transpose();
    s += norm * std::exp(-0.5 * d.dot(inv * d));
  }
  return s / static_cast<double>(train.rows());
}

}  // namespace

TEST_CASE("plug-in bandwidth of normal data is near the normal reference value") {
  const auto x = testutil::normal_draws(10000, 1);
  const double h = sheather_jones_bandwidth(x);
  const double reference = 1.06 * std::pow(10000.0, -0.2);
  CHECK(std::abs(h / reference - 1.0) < 0.15);
}

TEST_CASE("plug-in bandwidth is scale equivariant and rejects constant data") {
  const auto x = testutil::normal_draws(2000, 2);
  std::vector<double> scaled(x);
  for (auto& v : scaled) v *= 3.7;
  const double h = sheather_jones_bandwidth(x);
  CHECK(std::abs(sheather_jones_bandwidth(scaled) - 3.7 * h) < 1e-10 * 3.7 * h);
  std::vector<double> flat(20, 1.5);
  CHECK_THROWS_AS(sheather_jones_bandwidth(flat), Error);
  try {
    sheather_jones_bandwidth(flat);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateSample);
  }
}

TEST_CASE("single kernel at the origin") {
  const KdeModel m(Matrix::Zero(1, 2), Matrix::Identity(2, 2));
  CHECK(m.pdf(Vector::Zero(2)) == doctest::Approx(1.0 / (2 * std::numbers::pi)).epsilon(1e-14));
  Vector d(2);
  d << 0.3, -1.1;
  CHECK(std::abs(m.pdf(d) - m.pdf(-d)) < 1e-12 * m.pdf(d));
}

TEST_CASE("high-dimensional bandwidth uses the diagonal rule") {
  const Matrix x = testutil::normal_matrix(10000, 6, 3);
  const Matrix bw = kde_bandwidth(x);
  CHECK(bw(0, 1) == 0.0);
  const Vector c0 = x.col(0);
  const double h = sheather_jones_bandwidth(std::span<const double>(c0.data(), 10000));
  const double factor = std::pow(10000.0, -0.1);
  CHECK(factor == doctest::Approx(0.39811).epsilon(1e-4));
  CHECK(std::sqrt(bw(0, 0)) == doctest::Approx(h * std::pow(10000.0, 0.2) * factor).epsilon(1e-12));
}

TEST_CASE("D=2 isotropic bandwidth is close to the normal reference matrix") {
  const Matrix x = testutil::normal_matrix(10000, 2, 4);
  const Matrix bw = kde_bandwidth(x);
  const Matrix ref = std::pow(10000.0, -2.0 / 6.0) * sample_covariance(x);
  const double scale = ref.diagonal().mean();
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) CHECK(std::abs(bw(i, j) - ref(i, j)) / scale < 0.25);
  }
}

TEST_CASE("fit_kde rejects too few samples") {
  try {
    fit_kde(SampleSet::validate(Matrix::Zero(1, 1)));
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateSample);
  }
}

TEST_CASE("kde pdf matches the brute-force kernel sum") {
  const Matrix x = testutil::normal_matrix(300, 3, 5);
  const KdeModel m = fit_kde(SampleSet::validate(x));
  const Matrix q = testutil::normal_matrix(100, 3, 6) * 1.5;
  const Vector batch = m.log_pdf_batch(q);
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    const double expected = brute_force_kde(x, m.bandwidth(), q.row(i).transpose());
    CHECK(std::abs(m.pdf(q.row(i).transpose()) - expected) <= 1e-12 * expected);
    CHECK(std::abs(std::exp(batch(i)) - expected) <= 1e-12 * expected);
  }
}

TEST_CASE("kde integrates to one in 2-D") {
  Matrix x = testutil::normal_matrix(200, 2, 8);
  x.col(1) = 0.5 * x.col(0) + x.col(1);
  const KdeModel m = fit_kde(SampleSet::validate(x));
  const double s0 = std::sqrt(sample_covariance(x)(0, 0));
  const double s1 = std::sqrt(sample_covariance(x)(1, 1));
  const Vector mu = x.colwise().mean();
  const double total = testutil::grid_integral_2d(
      [&](double a, double b) {
        Vector p(2);
        p << a, b;
        return m.pdf(p);
      },
      mu(0) - 8 * s0, mu(0) + 8 * s0, mu(1) - 8 * s1, mu(1) + 8 * s1, 300);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("kde sampling") {
  const KdeModel two(Matrix::Identity(2, 2) * 5.0, Matrix::Identity(2, 2) * 1e-20);
  CHECK(two.sample(0, 1).rows() == 0);
  const Matrix s = two.sample(50000, 42);
  int first = 0;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const bool at0 = std::abs(s(i, 0) - 5.0) < 1e-6 && std::abs(s(i, 1)) < 1e-6;
    const bool at1 = std::abs(s(i, 1) - 5.0) < 1e-6 && std::abs(s(i, 0)) < 1e-6;
    CHECK((at0 || at1));
    first += at0 ? 1 : 0;
  }
  CHECK(std::abs(first / 50000.0 - 0.5) < 0.01);
  CHECK(two.sample(10, 3) == two.sample(10, 3));
}

TEST_CASE("kde evaluation cost grows linearly with N") {
  auto time_eval = [](Eigen::Index n) {
    const KdeModel m(testutil::normal_matrix(n, 2, 9), Matrix::Identity(2, 2) * 0.1);
    const Matrix q = testutil::normal_matrix(400, 2, 10);
    double best = 1e300;
    for (int rep = 0; rep < 3; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      double acc = 0.0;
      for (Eigen::Index i = 0; i < q.rows(); ++i) acc += m.log_pdf(q.row(i).transpose());
      const auto t1 = std::chrono::steady_clock::now();
      CHECK(std::isfinite(acc));
      best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
  };
  const double ratio = time_eval(5000) / time_eval(500);
  MESSAGE("kde eval time ratio N=5000/N=500: " << ratio);
  CHECK(ratio >= 5.0);
  CHECK(ratio <= 20.0);
}
