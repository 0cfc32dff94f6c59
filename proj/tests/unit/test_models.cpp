#include <doctest.h>

#include "postapprox/error.hpp"
#include "postapprox/models.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

using namespace postapprox;

namespace {

// classical fixed-step RK4 on the same right-hand side
std::array<double, 2> rk4(const LvParams& p, std::array<double, 2> s, double t_end, double h) {
  auto f = [&](const std::array<double, 2>& u) {
    return std::array<double, 2>{p.alpha * u[0] - (p.beta_kill + p.beta_stress) * u[0] * u[1],
                                 p.delta * u[0] * u[1] - p.gamma * u[1]};
  };
  const auto steps = static_cast<long>(std::llround(t_end / h));
  for (long i = 0; i < steps; ++i) {
    const auto k1 = f(s);
    const auto k2 = f({s[0] + 0.5 * h * k1[0], s[1] + 0.5 * h * k1[1]});
    const auto k3 = f({s[0] + 0.5 * h * k2[0], s[1] + 0.5 * h * k2[1]});
    const auto k4 = f({s[0] + h * k3[0], s[1] + h * k3[1]});
    for (int j = 0; j < 2; ++j) s[j] += h / 6.0 * (k1[j] + 2 * k2[j] + 2 * k3[j] + k4[j]);
  }
  return s;
}

std::vector<double> annual(std::size_t n) {
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<double>(i);
  return t;
}

double normal_oracle(double x, double mu, double sd) { return std::log(boost::math::pdf(boost::math::normal(mu, sd), x)); }

}  // namespace

TEST_CASE("gm_target construction") {
  const GmTarget t = gm_target(3, false, 4);
  CHECK(t.means[0].isZero(0.0));
  CHECK(t.means[1].isZero(0.0));
  CHECK(t.weights[0] == doctest::Approx(2.0 / 3.0));
  for (const auto& c : t.covs) {
    CHECK((c - c.transpose()).cwiseAbs().maxCoeff() == 0.0);
    Eigen::SelfAdjointEigenSolver<Matrix> es(c);
    CHECK(es.eigenvalues().minCoeff() >= 3.0 - 1e-10);
  }
  const GmTarget s = gm_target(3, true, 4);
  CHECK(s.means[1].isApprox(Vector::Constant(3, 10.0)));
  CHECK(s.covs[0].isApprox(t.covs[0]));
  CHECK_THROWS_AS(gm_target(0, false, 1), Error);
}

TEST_CASE("gm_target pdf is the weighted sum of its components") {
  const GmTarget t = gm_target(2, true, 11);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(3.0, 6.0);
  for (int i = 0; i < 50; ++i) {
    Vector x(2);
    x << n(rng), n(rng);
    const double direct = 2.0 / 3.0 * std::exp(mvn_log_pdf(x, t.means[0], t.covs[0])) +
                          1.0 / 3.0 * std::exp(mvn_log_pdf(x, t.means[1], t.covs[1]));
    CHECK(std::exp(t.log_pdf(x)) == doctest::Approx(direct).epsilon(1e-12));
  }
  Matrix xs(2, 2);
  xs << 0, 0, 10, 10;
  const Vector lp = t.log_pdf_batch(xs);
  CHECK(lp(0) == doctest::Approx(t.log_pdf(xs.row(0).transpose())));
  CHECK(t.density()->log_pdf(xs.row(1).transpose()) == doctest::Approx(lp(1)));
}

TEST_CASE("separated target draws have mean 10/3 per dimension") {
  const GmTarget t = gm_target(2, true, 5);
  const Matrix x = t.sample(100000, 9);
  const Vector mean = x.colwise().mean();
  for (Eigen::Index j = 0; j < 2; ++j) {
    // mixture variance: E[var] + var of the component means
    const double var = 2.0 / 3.0 * t.covs[0](j, j) + 1.0 / 3.0 * t.covs[1](j, j) + 100.0 * 2.0 / 9.0;
    CHECK(std::abs(mean(j) - 10.0 / 3.0) < 4.0 * std::sqrt(var / 1e5));
  }
  CHECK(t.sample(10, 2).isApprox(t.sample(10, 2)));
}

TEST_CASE("LV equilibrium stays constant") {
  const LvParams p;
  const LvInitial init{p.gamma / p.delta, p.alpha / (p.beta_kill + p.beta_stress)};
  const auto t = annual(51);
  const LvTrajectory traj = lv_simulate(p, init, t);
  REQUIRE(traj.x.size() == 51);
  for (std::size_t i = 0; i < t.size(); ++i) {
    CHECK(std::abs(traj.x[i] - init.x0) < 1e-6);
    CHECK(std::abs(traj.y[i] - init.y0) < 1e-6);
  }
}

TEST_CASE("natality formula") {
  LvParams p;
  p.alpha = 0.73;
  CHECK(lv_natality(p, 0.0) == doctest::Approx(2.0 * std::exp(0.73)).epsilon(1e-15));
  CHECK(lv_natality(p, 1.5) == doctest::Approx(2.0 * std::exp(0.73 - 0.2 * 1.5)).epsilon(1e-15));
}

TEST_CASE("adaptive integration matches fine-step RK4") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.3, 1.0);
  for (int rep = 0; rep < 5; ++rep) {
    LvParams p{u(rng), u(rng) * 0.8, u(rng) * 0.4, u(rng), u(rng)};
    LvInitial init{u(rng) * 2, u(rng) * 2};
    const std::vector<double> t{0.0, 2.5, 7.0, 12.0};
    const LvTrajectory traj = lv_simulate(p, init, t);
    std::array<double, 2> s{init.x0, init.y0};
    double prev = 0.0;
    for (std::size_t i = 1; i < t.size(); ++i) {
      s = rk4(p, s, t[i] - prev, 1e-4);
      prev = t[i];
      CHECK(std::abs(traj.x[i] - s[0]) <= 1e-5 * std::abs(s[0]));
      CHECK(std::abs(traj.y[i] - s[1]) <= 1e-5 * std::abs(s[1]));
    }
  }
}

TEST_CASE("classical invariant is conserved without stress") {
  LvParams p{0.7, 0.5, 0.0, 0.4, 0.9};
  const LvInitial init{0.5, 2.0};
  auto v = [&](double x, double y) { return p.delta * x - p.gamma * std::log(x) + p.beta_kill * y - p.alpha * std::log(y); };
  const double v0 = v(init.x0, init.y0);
  const std::vector<double> t = annual(60);
  const LvTrajectory traj = lv_simulate(p, init, t);
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(std::abs(v(traj.x[i], traj.y[i]) - v0) <= 1e-5 * std::abs(v0));
}

TEST_CASE("lv_simulate input and failure handling") {
  const LvParams p;
  const auto t = annual(5);
  CHECK_THROWS_AS(lv_simulate(LvParams{-0.1, 0.4, 0.2, 0.6, 0.6}, {1, 1}, t), Error);
  CHECK_THROWS_AS(lv_simulate(p, {0.0, 1.0}, t), Error);
  const std::vector<double> bad{0.0, 2.0, 1.0};
  CHECK_THROWS_AS(lv_simulate(p, {1, 1}, bad), Error);

  LvParams wild{1e6, 1e-6, 1e-6, 1e6, 1e-6};
  try {
    lv_simulate(wild, {1.0, 1.0}, annual(30));
    FAIL("expected StiffnessFailure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::StiffnessFailure);
  }
  std::atomic<std::uint64_t> failures{0};
  LvDataset d{LvObservation::Lynx, annual(30), std::vector<double>(30, 1.0), {}};
  CHECK(lv_loglik(wild, {1.0, 1.0}, d, &failures) == -std::numeric_limits<double>::infinity());
  CHECK(failures.load() == 1);
}

TEST_CASE("lv_loglik at exact data and one-sigma residual") {
  const LvParams p;
  const LvInitial init{0.8, 1.3};
  const auto t = annual(20);
  const LvTrajectory traj = lv_simulate(p, init, t);
  LvDataset lynx{LvObservation::Lynx, t, traj.y, {}};
  LvDataset hare{LvObservation::Hare, t, traj.x, traj.natality};
  const double c_dens = std::log(1.0 / (kLvDensitySigma * std::sqrt(2 * std::numbers::pi)));
  const double c_nat = std::log(1.0 / (kLvNatalitySigma * std::sqrt(2 * std::numbers::pi)));
  CHECK(lv_loglik(p, init, lynx) == doctest::Approx(20 * c_dens).epsilon(1e-12));
  CHECK(lv_loglik(p, init, hare) == doctest::Approx(20 * (c_dens + c_nat)).epsilon(1e-12));
  lynx.density[7] += 0.15;
  CHECK(lv_loglik(p, init, lynx) - 20 * c_dens == doctest::Approx(-0.5).epsilon(1e-9));
}

TEST_CASE("lv_loglik matches an independent normal-density sum") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0.3, 1.0);
  std::normal_distribution<double> noise(0.0, 0.3);
  for (int rep = 0; rep < 10; ++rep) {
    LvParams p{u(rng), u(rng) * 0.6, u(rng) * 0.3, u(rng), u(rng)};
    LvInitial init{u(rng) * 2, u(rng) * 2};
    const auto t = annual(15);
    const LvTrajectory traj = lv_simulate(p, init, t);
    LvDataset hare{LvObservation::Hare, t, {}, {}};
    double oracle = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      hare.density.push_back(traj.x[i] + noise(rng));
      hare.natality.push_back(traj.natality[i] + 5 * noise(rng));
      oracle += normal_oracle(hare.density[i], traj.x[i], 0.15) + normal_oracle(hare.natality[i], traj.natality[i], 2.0);
    }
    CHECK(lv_loglik(p, init, hare) == doctest::Approx(oracle).epsilon(1e-10));
  }
}

TEST_CASE("synthetic LV data") {
  LvSyntheticOptions opts;
  opts.noise_scale = 0.0;
  const LvSynthetic clean = make_lv_synthetic(opts, 1);
  const LvTrajectory lt = lv_simulate(opts.truth, opts.lynx_init, clean.lynx.t);
  const LvTrajectory ht = lv_simulate(opts.truth, opts.hare_init, clean.hare.t);
  REQUIRE(clean.lynx.t.size() == 20);
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK(clean.lynx.density[i] == lt.y[i]);
    CHECK(clean.hare.density[i] == ht.x[i]);
    CHECK(clean.hare.natality[i] == ht.natality[i]);
  }
  opts.noise_scale = 1.0;
  const LvSynthetic a = make_lv_synthetic(opts, 1);
  const LvSynthetic b = make_lv_synthetic(opts, 2);
  const LvSynthetic a2 = make_lv_synthetic(opts, 1);
  CHECK(a.lynx.density != b.lynx.density);
  CHECK(a.lynx.density == a2.lynx.density);
  CHECK(a.hare.natality == a2.hare.natality);
  CHECK(a.metadata["seed"] == 1);
  CHECK(a.metadata["params"]["beta_stress"] == doctest::Approx(0.2));
}

TEST_CASE("synthetic residual spread matches the likelihood sigmas") {
  LvSyntheticOptions opts;
  opts.points = 10000;
  const LvSynthetic s = make_lv_synthetic(opts, 5);
  const LvTrajectory lt = lv_simulate(opts.truth, opts.lynx_init, s.lynx.t);
  const LvTrajectory ht = lv_simulate(opts.truth, opts.hare_init, s.hare.t);
  auto sd = [](const std::vector<double>& obs, const std::vector<double>& model) {
    double ss = 0.0;
    for (std::size_t i = 0; i < obs.size(); ++i) ss += (obs[i] - model[i]) * (obs[i] - model[i]);
    return std::sqrt(ss / static_cast<double>(obs.size()));
  };
  CHECK(std::abs(sd(s.lynx.density, lt.y) / 0.15 - 1.0) < 0.05);
  CHECK(std::abs(sd(s.hare.density, ht.x) / 0.15 - 1.0) < 0.05);
  CHECK(std::abs(sd(s.hare.natality, ht.natality) / 2.0 - 1.0) < 0.05);
}

TEST_CASE("synthetic data files") {
  const auto dir = std::filesystem::temp_directory_path() / "postapprox_lv_synth";
  std::filesystem::remove_all(dir);
  const LvSynthetic s = make_lv_synthetic({}, 3);
  write_lv_synthetic(s, dir.string());
  std::ifstream js(dir / "synthetic.json");
  const auto meta = nlohmann::json::parse(js);
  CHECK(meta["seed"] == 3);
  std::ifstream csv(dir / "hare.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "t,hare,natality");
  std::size_t rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  CHECK(rows == 20);
  std::filesystem::remove_all(dir);
}

TEST_CASE("LV posterior specification") {
  const LvSynthetic data = make_lv_synthetic({}, 8);
  LvPriorConfig prior;
  const PosteriorSpec stage = lv_posterior({data.lynx}, prior);
  const PosteriorSpec joint = lv_posterior({data.lynx, data.hare}, prior);
  CHECK(lv_parameter_names(1).size() == 7);
  CHECK(lv_parameter_names(2).size() == 9);
  CHECK(lv_parameter_names(2)[8] == "y0_2");
  Rng rng(1);
  const Vector draw = joint.prior_sampler(rng);
  CHECK(draw.size() == 9);

  const LvParams truth;
  Vector theta(7);
  theta << std::log(0.6), std::log(0.4), std::log(0.2), std::log(0.6), std::log(0.6), std::log(0.5), std::log(1.2);
  CHECK(stage.log_likelihood(theta) == doctest::Approx(lv_loglik(truth, {0.5, 1.2}, data.lynx)).epsilon(1e-12));
  double lp = 0.0;
  const Vector c = (Vector(7) << 0.6, 0.4, 0.2, 0.6, 0.6, 1.0, 1.0).finished();
  for (int i = 0; i < 7; ++i) lp += normal_oracle(theta(i), std::log(c(i)), 0.5);
  CHECK(stage.log_prior(theta) == doctest::Approx(lp).epsilon(1e-12));

  prior.scale = ParamScale::Natural;
  const PosteriorSpec nat = lv_posterior({data.hare}, prior);
  CHECK(nat.bounds.upper(0) == doctest::Approx(2.5 * 0.6));
  CHECK(nat.bounds.upper(6) == doctest::Approx(3.0));
  for (int i = 0; i < 200; ++i) CHECK(nat.bounds.contains(nat.prior_sampler(rng)));
  Vector x(7);
  x << 0.6, 0.4, 0.2, 0.6, 0.6, 1.6, 0.6;
  CHECK(nat.log_prior(x) == doctest::Approx(-std::log(1.5 * 1.0 * 0.5 * 1.5 * 1.5 * 3.0 * 3.0)).epsilon(1e-12));
  x(2) = 0.6;
  CHECK(std::isinf(nat.log_posterior(x)));
}

TEST_CASE("signaling building blocks") {
  CHECK(signaling_activation(0.5) == 0.5);
  for (double w : {0.0, 0.3, 1.0, 5.0}) CHECK(signaling_drug_response(1.0, 2.0, 0.4, w) == 1.0);
  double prev_f = -1.0;
  double prev_g = 2.0;
  for (double x = -2.0; x <= 3.0; x += 0.01) {
    const double f = signaling_activation(x);
    CHECK(f > prev_f);
    prev_f = f;
    const double g = signaling_drug_response(0.2, 1.5, 0.3, x);
    CHECK(g < prev_g);
    prev_g = g;
  }
  CHECK(signaling_parameter_names().size() == 10);
}

TEST_CASE("signaling chain matches a direct re-evaluation") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int rep = 0; rep < 100; ++rep) {
    std::array<double, 10> v{};
    for (auto& e : v) e = u(rng);
    const SignalingParams p = SignalingParams::from_span(v);
    const double m = rep % 2;
    const double n = (rep / 2) % 2;
    const double w = rep % 3 == 0 ? 0.0 : 1.0;
    auto f = [](double x) { return 1.0 / (1.0 + std::exp(-9.19024 * (x - 0.5))); };
    const double g = v[7] + (1.0 - v[7]) / (std::pow(10.0, v[8] * (w - v[9])) + 1.0);
    const double x = f(v[0] + v[3] * m + v[4] * n) * g;
    const double y = f(v[1] + v[5] * x);
    const double z = f(v[2] + v[6] * y);
    const SignalingPrediction pred = signaling_predict(p, m, n, w);
    CHECK(std::abs(pred.p - y) <= 1e-12);
    CHECK(std::abs(pred.q - z) <= 1e-12);
  }
}

TEST_CASE("signaling likelihood") {
  const double mode = std::log(std::tgamma(2.0) / (std::tgamma(1.5) * std::sqrt(3 * std::numbers::pi) * 0.2));
  CHECK(student_t_log_pdf(0.3, 0.3, 0.2, 3.0) == doctest::Approx(mode).epsilon(1e-14));
  CHECK(student_t_log_pdf(0.3 + 0.17, 0.3, 0.2, 3.0) == doctest::Approx(student_t_log_pdf(0.3 - 0.17, 0.3, 0.2, 3.0)));

  std::mt19937_64 rng(37);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  const boost::math::students_t t3(3.0);
  for (int rep = 0; rep < 20; ++rep) {
    std::array<double, 10> v{};
    for (auto& e : v) e = u(rng);
    const SignalingParams p = SignalingParams::from_span(v);
    std::vector<SignalingObservation> data;
    double oracle_p = 0.0;
    double oracle_q = 0.0;
    for (int i = 0; i < 8; ++i) {
      SignalingObservation o{static_cast<double>(i % 2), static_cast<double>(i / 4), i % 3 == 0 ? 1.0 : 0.0, u(rng), u(rng)};
      data.push_back(o);
      const SignalingPrediction pred = signaling_predict(p, o.m, o.n, o.w);
      oracle_p += std::log(boost::math::pdf(t3, (o.p - pred.p) / 0.2) / 0.2);
      oracle_q += std::log(boost::math::pdf(t3, (o.q - pred.q) / 0.2) / 0.2);
    }
    CHECK(signaling_loglik(p, data) == doctest::Approx(oracle_p + oracle_q).epsilon(1e-12));
    CHECK(signaling_loglik(p, data, SignalingTerms::POnly) == doctest::Approx(oracle_p).epsilon(1e-12));
    CHECK(signaling_loglik(p, data, SignalingTerms::QOnly) == doctest::Approx(oracle_q).epsilon(1e-12));
  }
}

TEST_CASE("signaling synthetic data") {
  const SignalingParams truth{0.2, 0.1, 0.0, 0.6, 0.3, 1.0, 1.0, 0.2, 2.0, 0.0};
  const std::vector<std::array<double, 3>> design{{1, 0, 0}, {0, 1, 0}, {1, 1, 1}, {0, 0, 1}};
  const auto clean = make_signaling_synthetic(truth, design, 0.0, 4);
  for (const auto& o : clean) {
    const auto pred = signaling_predict(truth, o.m, o.n, o.w);
    CHECK(o.p == pred.p);
    CHECK(o.q == pred.q);
  }
  const auto a = make_signaling_synthetic(truth, design, 1.0, 4);
  const auto b = make_signaling_synthetic(truth, design, 1.0, 4);
  const auto c = make_signaling_synthetic(truth, design, 1.0, 5);
  CHECK(a[2].p == b[2].p);
  CHECK(a[2].p != c[2].p);
}
