#include <doctest.h>

#include "postapprox/error.hpp"
#include "postapprox/mixture.hpp"
#include "postapprox/numerics.hpp"
#include "test_util.hpp"

#include <boost/math/distributions/gamma.hpp>

#include <chrono>
#include <cmath>
#include <numbers>

using namespace postapprox;

namespace {

Matrix random_spd(Eigen::Index d, std::uint64_t seed) {
  const Matrix a = testutil::normal_matrix(d, d, seed);
  return a.transpose() * a + static_cast<double>(d) * Matrix::Identity(d, d);
}

// Two-component target: weights 2/3, 1/3, optional shift of 10 per dimension.
Matrix two_gaussians(Eigen::Index n, Eigen::Index d, bool separated, std::uint64_t seed) {
  const Matrix l1 = random_spd(d, seed + 1).llt().matrixL();
  const Matrix l2 = random_spd(d, seed + 2).llt().matrixL();
  Rng rng(seed);
  std::normal_distribution<double> normal;
  Matrix out(n, d);
  Vector z(d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) z(j) = normal(rng);
    if (uniform01(rng) < 2.0 / 3.0) {
      out.row(i) = (l1 * z).transpose();
    } else {
      out.row(i) = (l2 * z).transpose();
      if (separated) out.row(i).array() += 10.0;
    }
  }
  return out;
}

// Truncated-normal log-likelihood on (0, inf), written out directly.
double half_line_loglik(const std::vector<double>& x, double mu, double sigma) {
  double s = 0.0;
  for (double v : x) {
    const double z = (v - mu) / sigma;
    s += -0.5 * z * z - std::log(sigma);
  }
  return s - static_cast<double>(x.size()) * std::log(norm_sf(-mu / sigma));
}

// Oracle: profile out sigma by a 1-D search, then search over mu.
double truncated_mle_mu(const std::vector<double>& x) {
  auto profile = [&](double mu) {
    return -golden_section_minimize([&](double ls) { return -half_line_loglik(x, mu, std::exp(ls)); }, -1.0, 1.0,
                                    1e-9)
                .value;
  };
  return golden_section_minimize([&](double mu) { return -profile(mu); }, -1.5, 1.5, 1e-7).x;
}

}  // namespace

TEST_CASE("single component is the closed-form ML fit") {
  const Matrix x = testutil::normal_matrix(400, 3, 5) * 2.0;
  const auto s = SampleSet::validate(x);
  const GmModel m = fit_gmm_k(s, 1, 1);
  REQUIRE(m.components() == 1);
  const Vector mean = x.colwise().mean();
  const Matrix c = x.rowwise() - mean.transpose();
  const double eps = 1e-6 * sample_covariance(x).trace() / 3.0;
  const Matrix expected = c.transpose() * c / 400.0 + eps * Matrix::Identity(3, 3);
  CHECK((m.means()[0] - mean).norm() < 1e-12);
  CHECK((m.covs()[0] - expected).norm() < 1e-10);
  CHECK(m.em_trace().size() <= 3);
}

TEST_CASE("two well separated clusters give hard responsibilities and cluster means") {
  Matrix x = testutil::normal_matrix(600, 2, 7);
  x.bottomRows(300).array() += 10.0;
  const GmModel m = fit_gmm_k(SampleSet::validate(x), 2, 3);
  REQUIRE(m.components() == 2);
  const Vector m_a = x.topRows(300).colwise().mean();
  const Vector m_b = x.bottomRows(300).colwise().mean();
  const bool first_is_a = m.means()[0](0) < 5.0;
  CHECK((m.means()[first_is_a ? 0 : 1] - m_a).norm() < 0.1);
  CHECK((m.means()[first_is_a ? 1 : 0] - m_b).norm() < 0.1);
  const auto comps = kernels::make_components(m.weights(), m.means(), m.covs());
  const Matrix lp = kernels::component_log_densities(comps, x, kernels::Exec::Serial);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double r0 = 1.0 / (1.0 + std::exp(lp(i, 1) - lp(i, 0)));
    CHECK((r0 < 1e-6 || r0 > 1.0 - 1e-6));
  }
}

TEST_CASE("EM objective never decreases") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Matrix x = two_gaussians(800, 3, false, seed);
    const GmModel m = fit_gmm_k(SampleSet::validate(x), 4, seed);
    const auto& t = m.em_trace();
    REQUIRE(t.size() >= 2);
    for (std::size_t i = 1; i < t.size(); ++i) CHECK(t[i] >= t[i - 1] - 1e-10 * std::abs(t[i - 1]));
  }
}

TEST_CASE("BIC selects one component for Gaussian data in at least 90 of 100 seeds") {
  int ones = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Matrix x = testutil::normal_matrix(500, 2, 1000 + seed);
    const GmModel m = fit_gmm(SampleSet::validate(x), 3, seed);
    if (m.components() == 1) ++ones;
    if (seed < 10) {
      // the winner is no worse than any candidate
      for (std::size_t k = 1; k <= 3; ++k) CHECK(m.bic() <= fit_gmm_k(SampleSet::validate(x), k, seed).bic());
    }
  }
  MESSAGE("G=1 selected in " << ones << "/100");
  CHECK(ones >= 90);
}

TEST_CASE("BIC selects two components for the separated mixture") {
  const Matrix x = two_gaussians(1000, 2, true, 11);
  const GmModel m = fit_gmm(SampleSet::validate(x), 9, 1);
  CHECK(m.components() == 2);
}

TEST_CASE("BIC patience stops early and keeps the full-scan winner here") {
  const Matrix x = two_gaussians(1000, 2, true, 11);
  EmOptions em;
  em.bic_patience = 2;
  const GmModel full = fit_gmm(SampleSet::validate(x), 6, 1);
  const GmModel early = fit_gmm(SampleSet::validate(x), 6, 1, em);
  CHECK(early.components() == full.components());
  CHECK(early.bic() == full.bic());
}

TEST_CASE("g_max = 1 matches the single-component fit") {
  const auto s = SampleSet::validate(testutil::normal_matrix(100, 2, 3));
  const GmModel a = fit_gmm(s, 1, 4);
  const GmModel b = fit_gmm_k(s, 1, 4);
  CHECK(a.means()[0] == b.means()[0]);
  CHECK(a.covs()[0] == b.covs()[0]);
  CHECK(a.bic() == b.bic());
}

TEST_CASE("too few samples raise InsufficientSamples") {
  const auto s = SampleSet::validate(testutil::normal_matrix(5, 2, 3));
  CHECK_THROWS_AS(fit_gmm_k(s, 2, 1), Error);
  try {
    fit_gmm(SampleSet::validate(testutil::normal_matrix(2, 2, 3)), 3, 1);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InsufficientSamples);
  }
}

TEST_CASE("mixture pdf values") {
  const GmModel one(Vector::Ones(1), {Vector::Zero(1)}, {Matrix::Identity(1, 1)});
  CHECK(one.pdf(Vector::Zero(1)) == doctest::Approx(1.0 / std::sqrt(2.0 * std::numbers::pi)).epsilon(1e-15));

  const Vector mu = Vector::LinSpaced(2, -0.3, 0.8);
  const Matrix cov = random_spd(2, 9);
  const GmModel single(Vector::Ones(1), {mu}, {cov});
  const GmModel doubled(Vector::Constant(2, 0.5), {mu, mu}, {cov, cov});
  const Matrix q = testutil::normal_matrix(50, 2, 4);
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    const Vector x = q.row(i).transpose();
    CHECK(std::abs(single.pdf(x) - doubled.pdf(x)) <= 1e-14 * single.pdf(x) + 1e-300);
  }

  const Matrix x = two_gaussians(500, 2, false, 21);
  const GmModel m = fit_gmm_k(SampleSet::validate(x), 2, 1);
  const double integral = testutil::grid_integral_2d(
      [&](double a, double b) { return m.pdf(Vector{{a, b}}); }, -25, 25, -25, 25, 600);
  CHECK(std::abs(integral - 1.0) < 1e-3);
}

TEST_CASE("mixture sampling") {
  const GmModel tight(Vector::Ones(1), {Vector{{1.0, -2.0}}}, {1e-20 * Matrix::Identity(2, 2)});
  const Matrix d = tight.sample(100, 1);
  CHECK((d.rowwise() - Eigen::RowVector2d(1.0, -2.0)).cwiseAbs().maxCoeff() < 1e-8);

  const GmModel two(Vector{{0.3, 0.7}}, {Vector{{0.0}}, Vector{{100.0}}}, {Matrix::Identity(1, 1), Matrix::Identity(1, 1)});
  const Matrix s = two.sample(50000, 2);
  const double frac = (s.array() < 50.0).cast<double>().mean();
  CHECK(std::abs(frac - 0.3) < 0.01);
  CHECK(two.sample(0, 1).rows() == 0);
  CHECK(two.sample(10, 5) == two.sample(10, 5));
}

TEST_CASE("box probability") {
  SUBCASE("diagonal covariance separates") {
    const Vector mu{{0.2, -0.1, 0.4}};
    const Matrix cov = Vector{{1.0, 2.0, 0.5}}.asDiagonal();
    const Vector a{{-1.0, -0.5, 0.0}};
    const Vector b{{0.5, 2.0, 1.0}};
    double expected = 1.0;
    for (int j = 0; j < 3; ++j) {
      const double sd = std::sqrt(cov(j, j));
      expected *= norm_cdf((b(j) - mu(j)) / sd) - norm_cdf((a(j) - mu(j)) / sd);
    }
    const auto p = mvn_box_probability(mu, cov, a, b, 1);
    CHECK(std::abs(p.value - expected) <= 3.0 * p.std_error + 1e-12);
  }
  SUBCASE("unbounded box is exactly one") {
    const double inf = std::numeric_limits<double>::infinity();
    const auto p = mvn_box_probability(Vector::Zero(3), random_spd(3, 1), Vector::Constant(3, -inf),
                                       Vector::Constant(3, inf), 1);
    CHECK(p.value == 1.0);
  }
  SUBCASE("correlated unit box against plain Monte Carlo") {
    const Matrix cov{{1.0, 0.8}, {0.8, 1.0}};
    const Vector a = Vector::Zero(2);
    const Vector b = Vector::Ones(2);
    const auto p = mvn_box_probability(Vector::Zero(2), cov, a, b, 3);
    // oracle: 1e7 direct draws
    Rng rng(99);
    std::normal_distribution<double> normal;
    const double l21 = 0.8;
    const double l22 = std::sqrt(1.0 - 0.64);
    const long n = 10000000;
    long hits = 0;
    for (long i = 0; i < n; ++i) {
      const double z1 = normal(rng);
      const double z2 = normal(rng);
      const double x1 = z1;
      const double x2 = l21 * z1 + l22 * z2;
      if (x1 >= 0.0 && x1 <= 1.0 && x2 >= 0.0 && x2 <= 1.0) ++hits;
    }
    const double mc = static_cast<double>(hits) / static_cast<double>(n);
    const double mc_se = std::sqrt(mc * (1.0 - mc) / static_cast<double>(n));
    CHECK(p.std_error <= 1e-4);
    CHECK(std::abs(p.value - mc) <= 3.0 * std::hypot(p.std_error, mc_se));
  }
  SUBCASE("non-SPD covariance is rejected") {
    const Matrix bad{{1.0, 2.0}, {2.0, 1.0}};
    try {
      mvn_box_probability(Vector::Zero(2), bad, Vector::Zero(2), Vector::Ones(2), 1);
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::DegenerateCovariance);
    }
  }
}

TEST_CASE("truncated moments in one dimension match the closed form") {
  // N(0,1) on (0, inf): mean sqrt(2/pi), variance 1 - 2/pi
  const double inf = std::numeric_limits<double>::infinity();
  const auto m = truncated_mvn_moments(Vector::Zero(1), Matrix::Identity(1, 1), Vector::Zero(1),
                                       Vector::Constant(1, inf), 4096, 1);
  CHECK(m.mass == doctest::Approx(0.5).epsilon(1e-3));
  CHECK(m.mean(0) == doctest::Approx(std::sqrt(2.0 / std::numbers::pi)).epsilon(1e-3));
  CHECK(m.cov(0, 0) == doctest::Approx(1.0 - 2.0 / std::numbers::pi).epsilon(1e-2));
}

TEST_CASE("truncated mixture with infinite bounds coincides with the plain fit") {
  const Matrix x = two_gaussians(400, 2, true, 5);
  const auto s = SampleSet::validate(x);
  const GmModel g = fit_gmm(s, 3, 7);
  const TgmModel t = fit_truncated_gmm(s, Bounds::unbounded(2), 3, 7);
  REQUIRE(g.components() == t.components());
  for (std::size_t k = 0; k < g.components(); ++k) {
    CHECK((g.means()[k] - t.means()[k]).norm() < 1e-6);
    CHECK((g.covs()[k] - t.covs()[k]).norm() < 1e-6);
    CHECK(t.masses()(static_cast<Eigen::Index>(k)) == 1.0);
  }
}

TEST_CASE("half-normal data recovers the untruncated location") {
  auto raw = testutil::normal_draws(5000, 17);
  std::vector<double> x;
  for (double v : raw) x.push_back(std::abs(v));
  const double inf = std::numeric_limits<double>::infinity();
  Matrix pos(static_cast<Eigen::Index>(x.size()), 1);
  for (std::size_t i = 0; i < x.size(); ++i) pos(static_cast<Eigen::Index>(i), 0) = x[i];
  const TgmModel t =
      fit_truncated_gmm_k(SampleSet::validate(pos), Bounds(Vector::Zero(1), Vector::Constant(1, inf)), 1, 1);
  const double oracle = truncated_mle_mu(x);
  MESSAGE("EM mu " << t.means()[0](0) << " oracle mu " << oracle);
  CHECK(std::abs(oracle) < 0.1);
  CHECK(std::abs(t.means()[0](0) - oracle) < 0.02);
  CHECK(std::abs(t.means()[0](0)) < 0.1);
}

TEST_CASE("truncated mixture density") {
  const Bounds box(Vector{{0.0, -1.0}}, Vector{{3.0, 2.0}});
  Rng rng(3);
  std::normal_distribution<double> normal;
  Matrix pos(600, 2);
  for (Eigen::Index i = 0; i < pos.rows();) {
    const double a = 0.5 + normal(rng);
    const double b = 0.8 * (a - 0.5) + 0.6 * normal(rng);
    if (a > 0.0 && a < 3.0 && b > -1.0 && b < 2.0) {
      pos(i, 0) = a;
      pos(i, 1) = b;
      ++i;
    }
  }
  const TgmModel t = fit_truncated_gmm(SampleSet::validate(pos), box, 3, 2);
  CHECK(t.pdf(Vector{{-0.1, 0.0}}) == 0.0);
  CHECK(t.pdf(Vector{{1.0, 2.5}}) == 0.0);
  const double integral = testutil::grid_integral_2d(
      [&](double a, double b) { return t.pdf(Vector{{a, b}}); }, 0.0, 3.0, -1.0, 2.0, 600);
  CHECK(std::abs(integral - 1.0) < 2e-3);

  const Matrix draws = t.sample(200, 4);
  for (Eigen::Index i = 0; i < draws.rows(); ++i) CHECK(t.pdf(draws.row(i).transpose()) > 0.0);

  CHECK_THROWS_AS(fit_truncated_gmm(SampleSet::validate(Matrix::Constant(10, 2, 5.0)), box, 1, 1), Error);
}

TEST_CASE("single component in a wide box matches the untruncated density") {
  const Vector mu{{0.5, -0.5}};
  const Matrix cov = random_spd(2, 4);
  const Vector sd = cov.diagonal().cwiseSqrt();
  const Bounds box(mu - 10.0 * sd, mu + 10.0 * sd);
  const auto mass = mvn_box_probability(mu, cov, box.lower, box.upper, 1).value;
  const TgmModel t(Vector::Ones(1), {mu}, {cov}, box, Vector::Constant(1, mass));
  const GmModel g(Vector::Ones(1), {mu}, {cov});
  const Matrix q = testutil::normal_matrix(20, 2, 8);
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    const Vector x = mu + q.row(i).transpose();
    CHECK(std::abs(t.pdf(x) / g.pdf(x) - 1.0) < 1e-6);
  }
}

TEST_CASE("evaluation cost does not grow with the training size") {
  auto fit_time = [](Eigen::Index n) {
    const GmModel m = fit_gmm_k(SampleSet::validate(two_gaussians(n, 3, false, 2)), 2, 1);
    const Matrix q = testutil::normal_matrix(20000, 3, 3);
    double best = 1e300;
    for (int rep = 0; rep < 5; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      const Vector v = m.log_pdf_batch(q);
      const auto t1 = std::chrono::steady_clock::now();
      CHECK(v.allFinite());
      best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
  };
  const double ratio = fit_time(5000) / fit_time(500);
  MESSAGE("eval time ratio N=5000/N=500: " << ratio);
  CHECK(ratio < 2.0);
  CHECK(ratio > 0.5);
}

TEST_CASE("1-D mixtures") {
  SUBCASE("normal data") {
    const auto x = testutil::normal_draws(2000, 3);
    const double inf = std::numeric_limits<double>::infinity();
    const Mixture1d m = fit_mixture_1d(x, -inf, inf, 5, 1);
    CHECK(m.family() == Mixture1dFamily::Normal);
    CHECK(m.components() == 1);
    CHECK(std::abs(m.p1()(0) - sample_mean(x)) < 1e-8);
    CHECK(std::abs(m.p1()(0)) < 0.1);
    CHECK(std::abs(m.p2()(0) - 1.0) < 0.1);
    CHECK(m.quantile(m.cdf(0.7)) == doctest::Approx(0.7).epsilon(1e-9));
  }
  SUBCASE("uniform data on the unit interval") {
    Rng rng(5);
    std::vector<double> x(3000);
    for (auto& v : x) v = uniform01(rng);
    const Mixture1d m = fit_mixture_1d(x, 0.0, 1.0, 5, 1);
    CHECK(m.family() == Mixture1dFamily::Beta);
    for (double t = 0.05; t <= 0.95; t += 0.05) CHECK(std::abs(m.pdf(t) - 1.0) < 0.15);
    CHECK(testutil::grid_integral_1d([&](double t) { return m.pdf(t); }, 0.0, 1.0, 20000) ==
          doctest::Approx(1.0).epsilon(1e-3));
  }
  SUBCASE("gamma data with a lower bound") {
    Rng rng(6);
    std::gamma_distribution<double> gam(3.0, 1.0);
    std::vector<double> x(3000);
    for (auto& v : x) v = gam(rng);
    const Mixture1d m = fit_mixture_1d(x, 0.0, std::numeric_limits<double>::infinity(), 5, 1);
    CHECK(m.family() == Mixture1dFamily::Gamma);
    CHECK(std::abs(m.mean() / 3.0 - 1.0) < 0.05);
    CHECK(std::abs(m.mean() - sample_mean(x)) < 0.05);
    CHECK(m.cdf(m.quantile(0.3)) == doctest::Approx(0.3).epsilon(1e-9));
  }
  SUBCASE("upper bound reflects") {
    Rng rng(7);
    std::gamma_distribution<double> gam(2.0, 1.0);
    std::vector<double> x(2000);
    for (auto& v : x) v = 5.0 - gam(rng);
    const Mixture1d m = fit_mixture_1d(x, -std::numeric_limits<double>::infinity(), 5.0, 3, 1);
    CHECK(m.pdf(5.5) == 0.0);
    CHECK(m.cdf(4.999999) > 0.99);
    CHECK(testutil::grid_integral_1d([&](double t) { return m.pdf(t); }, -30.0, 5.0, 50000) ==
          doctest::Approx(1.0).epsilon(1e-3));
  }
  SUBCASE("too few samples") {
    std::vector<double> x{1, 2, 3};
    CHECK_THROWS_AS(fit_mixture_1d(x, 0.0, 10.0, 3, 1), Error);
  }
}

TEST_CASE("gamma components with a very large shape match the exact forms at the switch") {
  // shape 1e6 uses the incomplete gamma; just above it the large-shape forms
  const auto make = [](double shape) {
    return Mixture1d(Mixture1dFamily::Gamma, Vector::Ones(1), Vector::Constant(1, shape), Vector::Constant(1, 1.0 / shape),
                     0.0, 1.0, 1.0);
  };
  const Mixture1d exact = make(1e6);
  const Mixture1d approx = make(1e6 * (1.0 + 1e-12));
  for (double z : {-4.0, -2.0, -0.5, 0.0, 0.7, 3.0}) {
    const double x = 1.0 + z * 1e-3;
    CHECK(std::abs(approx.cdf(x) - exact.cdf(x)) < 1e-6);
    CHECK(std::abs(approx.log_pdf(x) - exact.log_pdf(x)) < 1e-6);
  }
  // far beyond the incomplete-gamma range
  const Mixture1d huge = make(5e11);
  CHECK(huge.cdf(1.0 - 5e-6) < 0.001);
  CHECK(huge.cdf(1.0 + 5e-6) > 0.999);
  CHECK(huge.cdf(1.0) == doctest::Approx(0.5).epsilon(1e-3));
  CHECK(huge.log_pdf(1.0) == doctest::Approx(0.5 * std::log(5e11 / (2.0 * std::numbers::pi))).epsilon(1e-9));
}
