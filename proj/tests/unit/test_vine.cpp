#include <doctest.h>

#include "postapprox/error.hpp"
#include "postapprox/numerics.hpp"
#include "postapprox/vine.hpp"
#include "test_util.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace postapprox;

namespace {

double brute_tau(const std::vector<double>& u, const std::vector<double>& v) {
  double s = 0.0;
  const std::size_t n = u.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double p = (u[i] - u[j]) * (v[i] - v[j]);
      s += p > 0 ? 1.0 : (p < 0 ? -1.0 : 0.0);
    }
  }
  return s / (static_cast<double>(n) * (n - 1) / 2.0);
}

BicopModel make(CopulaFamily f, int rot, double theta) {
  BicopModel m;
  m.family = f;
  m.rotation = rot;
  m.theta = theta;
  m.validate();
  return m;
}

std::vector<BicopModel> zoo() {
  return {make(CopulaFamily::Gaussian, 0, 0.7),   make(CopulaFamily::Gaussian, 0, -0.5),
          make(CopulaFamily::Clayton, 0, 2.0),    make(CopulaFamily::Clayton, 90, 1.5),
          make(CopulaFamily::Clayton, 180, 3.0),  make(CopulaFamily::Clayton, 270, 0.8),
          make(CopulaFamily::Gumbel, 0, 1.8),     make(CopulaFamily::Gumbel, 90, 2.5),
          make(CopulaFamily::Gumbel, 180, 1.3),   make(CopulaFamily::Gumbel, 270, 3.0),
          make(CopulaFamily::Frank, 0, 5.0),      make(CopulaFamily::Frank, 0, -4.0)};
}

// pairs (u, v) drawn by the conditional method: v uniform, u = hinv(w | v)
std::pair<std::vector<double>, std::vector<double>> copula_draws(const BicopModel& m, std::size_t n,
                                                                  std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> u(n), v(n);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = uniform01(rng);
    u[i] = m.hinv(uniform01(rng), v[i]);
  }
  return {u, v};
}

std::pair<std::vector<double>, std::vector<double>> gaussian_pairs(double rho, std::size_t n, std::uint64_t seed) {
  Matrix z = testutil::normal_matrix(static_cast<Eigen::Index>(n), 2, seed);
  std::vector<double> u(n), v(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = z(static_cast<Eigen::Index>(i), 0);
    const double b = rho * a + std::sqrt(1 - rho * rho) * z(static_cast<Eigen::Index>(i), 1);
    u[i] = norm_cdf(a);
    v[i] = norm_cdf(b);
  }
  return {u, v};
}

Matrix correlated_normals(const Matrix& corr, std::size_t n, std::uint64_t seed) {
  Eigen::LLT<Matrix> llt(corr);
  Matrix z = testutil::normal_matrix(static_cast<Eigen::Index>(n), corr.rows(), seed);
  return z * llt.matrixL().transpose();
}

Matrix equicorrelation(int d, double rho) {
  Matrix c = Matrix::Constant(d, d, rho);
  c.diagonal().setOnes();
  return c;
}

std::vector<double> col(const Matrix& m, Eigen::Index j) { return {m.col(j).data(), m.col(j).data() + m.rows()}; }

}  // namespace

TEST_CASE("kendall tau small cases") {
  CHECK(kendall_tau(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3}) == doctest::Approx(1.0));
  CHECK(kendall_tau(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(kendall_tau(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), Error);
}

TEST_CASE("kendall tau matches the quadratic pair count, with and without ties") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    std::vector<double> u(200), v(200), ut(200), vt(200);
    for (std::size_t i = 0; i < 200; ++i) {
      u[i] = uniform01(rng);
      v[i] = u[i] + uniform01(rng);
      ut[i] = std::floor(u[i] * 8);
      vt[i] = std::floor(v[i] * 5);
    }
    CHECK(std::abs(kendall_tau(u, v) - brute_tau(u, v)) < 1e-12);
    CHECK(std::abs(kendall_tau(ut, vt) - brute_tau(ut, vt)) < 1e-12);
  }
}

TEST_CASE("independence copula") {
  BicopModel m;
  for (double u : {0.1, 0.5, 0.93}) {
    for (double v : {0.2, 0.7}) {
      CHECK(m.pdf(u, v) == 1.0);
      CHECK(m.hfunc(u, v) == doctest::Approx(u));
    }
  }
}

TEST_CASE("gaussian h-function equals the v-derivative of the integrated copula") {
  const double rho = 0.6;
  const BicopModel m = make(CopulaFamily::Gaussian, 0, rho);
  // C(u, v) as a double integral of the bivariate normal density
  auto cdf = [&](double u, double v) {
    const double x = norm_quantile(u);
    const double y = norm_quantile(v);
    const double r2 = 1 - rho * rho;
    auto inner = [&](double s) {
      auto f = [&](double t) {
        return std::exp(-(s * s - 2 * rho * s * t + t * t) / (2 * r2)) / (2 * std::numbers::pi * std::sqrt(r2));
      };
      return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, -12.0, y, 15, 1e-14);
    };
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(inner, -12.0, x, 15, 1e-14);
  };
  const double delta = 1e-4;
  for (double u : {0.15, 0.5, 0.8}) {
    for (double v : {0.3, 0.6}) {
      const double numeric = (cdf(u, v + delta) - cdf(u, v - delta)) / (2 * delta);
      CHECK(std::abs(m.hfunc(u, v) - numeric) < 1e-6);
    }
  }
}

TEST_CASE("hinv inverts h for every family and rotation") {
  Rng rng(7);
  const std::vector<std::pair<CopulaFamily, std::pair<double, double>>> ranges = {
      {CopulaFamily::Gaussian, {-0.95, 0.95}},
      {CopulaFamily::Clayton, {0.05, 8.0}},
      {CopulaFamily::Gumbel, {1.0, 6.0}},
      {CopulaFamily::Frank, {-15.0, 15.0}}};
  for (const auto& [family, range] : ranges) {
    for (int rot : {0, 90, 180, 270}) {
      if (rot != 0 && (family == CopulaFamily::Gaussian || family == CopulaFamily::Frank)) continue;
      double worst = 0.0;
      double worst_first = 0.0;
      for (int i = 0; i < 1000; ++i) {
        const double u = 0.01 + 0.98 * uniform01(rng);
        const double v = 0.01 + 0.98 * uniform01(rng);
        double th = range.first + (range.second - range.first) * uniform01(rng);
        if (family == CopulaFamily::Frank && std::abs(th) < 1e-3) th = 1e-3;
        const BicopModel m = make(family, rot, th);
        const double h = m.hfunc(u, v);
        const double hf = m.hfunc_first(u, v);
        // a saturated h (flat in u) carries no information about u in double precision
        if (h > 1e-6 && h < 1 - 1e-6) worst = std::max(worst, std::abs(m.hinv(h, v) - u));
        if (hf > 1e-6 && hf < 1 - 1e-6) worst_first = std::max(worst_first, std::abs(m.hinv_first(u, hf) - v));
      }
      INFO(std::string(to_string(family)), " rotation ", rot);
      CHECK(worst < 1e-8);
      CHECK(worst_first < 1e-8);
    }
  }
}

TEST_CASE("copula densities are normalized with uniform margins") {
  boost::math::quadrature::tanh_sinh<double> ts;
  for (const auto& m : zoo()) {
    INFO(std::string(to_string(m.family)), " rotation ", m.rotation, " theta ", m.theta);
    for (double u : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      const double margin_v = ts.integrate([&](double v) { return m.pdf(u, v); }, 0.0, 1.0);
      const double margin_u = ts.integrate([&](double v) { return m.pdf(v, u); }, 0.0, 1.0);
      CHECK(std::abs(margin_v - 1.0) < 1e-3);
      CHECK(std::abs(margin_u - 1.0) < 1e-3);
    }
    const double total = ts.integrate(
        [&](double u) { return ts.integrate([&](double v) { return m.pdf(u, v); }, 0.0, 1.0); }, 0.0, 1.0);
    CHECK(std::abs(total - 1.0) < 1e-3);
  }
}

TEST_CASE("hfunc and hfunc_first are the partial derivatives of the same copula") {
  // d/du of int_0^v c(u, t) dt equals hfunc_first, and int_0^u c(s, v) ds equals hfunc
  boost::math::quadrature::tanh_sinh<double> ts;
  for (const auto& m : zoo()) {
    INFO(std::string(to_string(m.family)), " rotation ", m.rotation);
    for (auto [u, v] : {std::pair{0.3, 0.6}, std::pair{0.75, 0.2}}) {
      CHECK(std::abs(ts.integrate([&](double s) { return m.pdf(s, v); }, 0.0, u) - m.hfunc(u, v)) < 1e-6);
      CHECK(std::abs(ts.integrate([&](double t) { return m.pdf(u, t); }, 0.0, v) - m.hfunc_first(u, v)) < 1e-6);
    }
  }
}

TEST_CASE("copula tau matches the sample tau of conditional-method draws") {
  for (const auto& m : zoo()) {
    auto [u, v] = copula_draws(m, 20000, 3);
    INFO(std::string(to_string(m.family)), " rotation ", m.rotation);
    CHECK(std::abs(kendall_tau(u, v) - copula_tau(m.family, m.rotation, m.theta)) < 0.02);
  }
}

TEST_CASE("validate rejects parameters outside the family range") {
  CHECK_THROWS_AS(make(CopulaFamily::Gaussian, 0, 1.0), Error);
  CHECK_THROWS_AS(make(CopulaFamily::Clayton, 0, -0.5), Error);
  CHECK_THROWS_AS(make(CopulaFamily::Gumbel, 0, 0.9), Error);
  CHECK_THROWS_AS(make(CopulaFamily::Frank, 0, 0.0), Error);
  CHECK_THROWS_AS(make(CopulaFamily::Gaussian, 90, 0.5), Error);
  CHECK(copula_family_from_string("gumbel") == CopulaFamily::Gumbel);
}

TEST_CASE("fit_bicop input checks") {
  std::vector<double> u(20, 0.5), v(20, 0.5);
  CHECK_THROWS_AS(fit_bicop(u, v), Error);
  std::vector<double> a(40, 0.5), b(40, 0.5);
  b[3] = 1.0;
  try {
    fit_bicop(a, b);
    FAIL("expected InvalidPIT");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidPIT);
  }
}

TEST_CASE("independent uniforms select independence") {
  int hits = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng(derive_seed(11, s));
    std::vector<double> u(1000), v(1000);
    for (std::size_t i = 0; i < 1000; ++i) {
      u[i] = uniform01(rng);
      v[i] = uniform01(rng);
    }
    const BicopModel m = fit_bicop(u, v);
    CHECK(m.aic <= 0.0);
    hits += m.family == CopulaFamily::Independence;
  }
  CHECK(hits >= 80);
}

TEST_CASE("gaussian copula data recovers rho") {
  auto [u, v] = gaussian_pairs(0.8, 1000, 5);
  const BicopModel m = fit_bicop(u, v);
  CHECK(m.family == CopulaFamily::Gaussian);
  CHECK(m.theta >= 0.75);
  CHECK(m.theta <= 0.85);
  CHECK(m.aic == doctest::Approx(2.0 - 2.0 * m.loglik));
}

TEST_CASE("rotated clayton data selects clayton at 90 degrees") {
  const BicopModel truth = make(CopulaFamily::Clayton, 90, 3.0);
  int hits = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto [u, v] = copula_draws(truth, 2000, derive_seed(19, s));
    const BicopModel m = fit_bicop(u, v);
    hits += m.family == CopulaFamily::Clayton && m.rotation == 90;
  }
  CHECK(hits > 5);
}

TEST_CASE("AIC selection never exceeds the independence AIC") {
  for (const auto& truth : zoo()) {
    auto [u, v] = copula_draws(truth, 300, 23);
    const BicopModel m = fit_bicop(u, v, BicopFitOptions{0.0});
    CHECK(m.aic <= 0.0);
  }
}

TEST_CASE("fit_vine needs enough samples") {
  auto s = SampleSet::validate(testutil::normal_matrix(20, 2, 1));
  CHECK_THROWS_AS(fit_vine(s, Bounds::unbounded(2)), Error);
  auto one = SampleSet::validate(testutil::normal_matrix(100, 1, 1));
  CHECK_THROWS_AS(fit_vine(one, Bounds::unbounded(1)), Error);
}

TEST_CASE("two-dimensional vine is a single pair copula times the marginals") {
  Matrix corr = equicorrelation(2, 0.7);
  auto s = SampleSet::validate(correlated_normals(corr, 800, 3));
  VineFitOptions opts;
  opts.marginal = MarginalKind::EcdfKd;
  const VineModel vine = fit_vine(s, Bounds::unbounded(2), opts);
  REQUIRE(vine.structure().levels.size() == 1);
  REQUIRE(vine.structure().levels[0].size() == 1);
  const BicopModel& c = vine.structure().levels[0][0].copula;
  CHECK(vine.method() == "vine-ecdf");
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    Vector x(2);
    x << 2 * uniform01(rng) - 1, 2 * uniform01(rng) - 1;
    const auto& m = vine.marginals();
    const double expect = c.pdf(m[0].cdf(x[0]), m[1].cdf(x[1])) * m[0].pdf(x[0]) * m[1].pdf(x[1]);
    CHECK(std::abs(vine.pdf(x) - expect) <= 1e-12 * std::max(1.0, expect));
  }
}

TEST_CASE("two-dimensional vine density integrates to one") {
  Matrix corr = equicorrelation(2, 0.6);
  auto s = SampleSet::validate(correlated_normals(corr, 1000, 8));
  const VineModel vine = fit_vine(s, Bounds::unbounded(2));
  const double lo0 = vine.marginals()[0].quantile(1e-7);
  const double hi0 = vine.marginals()[0].quantile(1 - 1e-7);
  const double lo1 = vine.marginals()[1].quantile(1e-7);
  const double hi1 = vine.marginals()[1].quantile(1 - 1e-7);
  const double total = testutil::grid_integral_2d(
      [&](double a, double b) {
        Vector x(2);
        x << a, b;
        return vine.pdf(x);
      },
      lo0, hi0, lo1, hi1, 500);
  CHECK(std::abs(total - 1.0) < 2e-3);
}

TEST_CASE("equicorrelated gaussian data: first-tree tau and the gaussian-copula oracle") {
  const double rho = 0.6;
  Matrix corr = equicorrelation(3, rho);
  auto s = SampleSet::validate(correlated_normals(corr, 5000, 12));
  const VineModel vine = fit_vine(s, Bounds::unbounded(3));
  const auto& st = vine.structure();
  REQUIRE(st.levels.size() == 2);
  CHECK(st.levels[0].size() == 2);
  CHECK(st.levels[1].size() == 1);
  const double tau = 2.0 / std::numbers::pi * std::asin(rho);
  for (const auto& e : st.levels[0]) {
    CHECK(std::abs(std::abs(copula_tau(e.copula.family, e.copula.rotation, e.copula.theta)) - tau) < 0.08);
  }

  // the sampled data are standard normal margins with a gaussian copula
  Eigen::LLT<Matrix> llt(corr);
  const double log_det = 2 * llt.matrixLLT().diagonal().array().log().sum();
  Rng rng(13);
  std::vector<double> rel;
  for (int i = 0; i < 1000; ++i) {
    const Vector x = correlated_normals(corr, 1, derive_seed(99, static_cast<std::uint64_t>(i))).row(0).transpose();
    const Vector z = llt.matrixL().solve(x);
    const double truth = -1.5 * std::log(2 * std::numbers::pi) - 0.5 * log_det - 0.5 * z.squaredNorm();
    rel.push_back(std::abs(std::exp(vine.log_pdf(x) - truth) - 1.0));
  }
  double mean = 0.0;
  for (double r : rel) mean += r / rel.size();
  CHECK(mean < 5e-2);
}

TEST_CASE("independent data select independence on every edge") {
  int all_indep = 0;
  VineFitOptions opts;
  opts.marginal = MarginalKind::EcdfKd;
  for (std::uint64_t s = 0; s < 100; ++s) {
    auto set = SampleSet::validate(testutil::normal_matrix(500, 3, derive_seed(31, s)));
    const VineModel vine = fit_vine(set, Bounds::unbounded(3), opts);
    bool ok = true;
    for (const auto& level : vine.structure().levels)
      for (const auto& e : level) ok = ok && e.copula.family == CopulaFamily::Independence;
    all_indep += ok;
  }
  CHECK(all_indep >= 70);
}

TEST_CASE("independence vine is the product of marginals and samples them") {
  auto set = SampleSet::validate(testutil::normal_matrix(500, 3, 41));
  VineFitOptions opts;
  opts.marginal = MarginalKind::EcdfKd;
  opts.bicop.independence_level = 1e-20;  // never rejects independence
  const VineModel vine = fit_vine(set, Bounds::unbounded(3), opts);
  Vector x(3);
  x << 0.3, -0.2, 1.1;
  double prod = 1.0;
  for (int j = 0; j < 3; ++j) prod *= vine.marginals()[static_cast<std::size_t>(j)].pdf(x[j]);
  CHECK(vine.pdf(x) == doctest::Approx(prod).epsilon(1e-14));

  const std::size_t n = 4000;
  const Matrix draws = vine.sample(n, 5);
  for (int j = 0; j < 3; ++j) {
    std::vector<double> c = col(draws, j);
    std::sort(c.begin(), c.end());
    double ks = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double f = vine.marginals()[static_cast<std::size_t>(j)].cdf(c[i]);
      ks = std::max({ks, std::abs(f - static_cast<double>(i + 1) / n), std::abs(f - static_cast<double>(i) / n)});
    }
    CHECK(ks < 1.63 / std::sqrt(static_cast<double>(n)));
  }
  CHECK(vine.sample(0, 1).rows() == 0);
}

TEST_CASE("gaussian-copula vine draws reproduce Kendall tau and refit") {
  Matrix corr = equicorrelation(2, 0.8);
  auto s = SampleSet::validate(correlated_normals(corr, 2000, 17));
  const VineModel vine = fit_vine(s, Bounds::unbounded(2));
  const Matrix draws = vine.sample(10000, 3);
  const double tau = kendall_tau(col(draws, 0), col(draws, 1));
  CHECK(std::abs(tau - 2.0 / std::numbers::pi * std::asin(0.8)) < 0.03);
  const Matrix again = vine.sample(10000, 3);
  CHECK((draws - again).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("four-dimensional vine: structure, sampling dependence, refit round trip") {
  Matrix corr(4, 4);
  corr << 1.0, 0.7, 0.4, 0.2,  //
      0.7, 1.0, 0.5, -0.3,     //
      0.4, 0.5, 1.0, 0.1,      //
      0.2, -0.3, 0.1, 1.0;
  auto s = SampleSet::validate(correlated_normals(corr, 3000, 21));
  const VineModel vine = fit_vine(s, Bounds::unbounded(4));
  const auto& st = vine.structure();
  REQUIRE(st.levels.size() == 3);
  for (std::size_t l = 0; l < 3; ++l) {
    CHECK(st.levels[l].size() == 3 - l);
    for (const auto& e : st.levels[l]) CHECK(e.cond.size() == l);
  }
  // proximity: every edge above tree 1 joins two edges of the tree below that share a node
  for (std::size_t l = 1; l < 3; ++l) {
    for (const auto& e : st.levels[l]) {
      std::vector<int> all = e.cond;
      all.push_back(e.a);
      all.push_back(e.b);
      std::sort(all.begin(), all.end());
      int parents = 0;
      for (const auto& p : st.levels[l - 1]) {
        std::vector<int> pv = p.cond;
        pv.push_back(p.a);
        pv.push_back(p.b);
        std::sort(pv.begin(), pv.end());
        parents += std::includes(all.begin(), all.end(), pv.begin(), pv.end());
      }
      CHECK(parents == 2);
    }
  }

  const Matrix draws = vine.sample(10000, 8);
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) {
      const double analytic = 2.0 / std::numbers::pi * std::asin(corr(i, j));
      CHECK(std::abs(kendall_tau(col(draws, i), col(draws, j)) - analytic) < 0.05);
    }
  }

  auto resampled = SampleSet::validate(draws);
  const VineModel refit = fit_vine(resampled, Bounds::unbounded(4));
  for (const auto& e : st.levels[0]) {
    const double t0 = copula_tau(e.copula.family, e.copula.rotation, e.copula.theta);
    const double t1 = kendall_tau(col(draws, e.a), col(draws, e.b));
    CHECK(std::abs(t0 - t1) < 0.05);
  }
  int shared = 0;
  for (const auto& e : refit.structure().levels[0]) {
    for (const auto& o : st.levels[0]) {
      if (o.a != e.a || o.b != e.b) continue;
      ++shared;
      const double t0 = copula_tau(o.copula.family, o.copula.rotation, o.copula.theta);
      const double t1 = copula_tau(e.copula.family, e.copula.rotation, e.copula.theta);
      CHECK(std::abs(t0 - t1) < 0.05);
    }
  }
  CHECK(shared >= 2);
}

TEST_CASE("bounded vine respects the support") {
  Rng rng(3);
  Matrix x(600, 2);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double a = uniform01(rng);
    x(i, 0) = a;
    x(i, 1) = std::min(0.999, std::max(0.001, a * 0.7 + 0.3 * uniform01(rng)));
  }
  Vector lo = Vector::Zero(2), hi = Vector::Ones(2);
  const VineModel vine = fit_vine(SampleSet::validate(x), Bounds(lo, hi));
  Vector out(2);
  out << 1.2, 0.5;
  CHECK(vine.pdf(out) == 0.0);
  const Matrix draws = vine.sample(2000, 1);
  CHECK(draws.minCoeff() >= 0.0);
  CHECK(draws.maxCoeff() <= 1.0);
}
