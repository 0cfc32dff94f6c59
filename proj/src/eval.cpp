#include "postapprox/eval.hpp"

#include "postapprox/error.hpp"
#include "postapprox/inference.hpp"
#include "postapprox/numerics.hpp"
#include "postapprox/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

namespace postapprox {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_pair(std::span<const double> a, std::span<const double> b, std::size_t min_n) {
  if (a.size() != b.size()) throw Error(ErrorCode::InvalidInput, "metric inputs differ in length");
  if (a.size() < min_n) throw Error(ErrorCode::InvalidInput, "too few values for the metric");
}

double pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
    sab += (a[i] - ma) * (b[i] - mb);
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) throw Error(ErrorCode::DegenerateInput, "correlation of a constant vector");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

struct WeightedSorted {
  std::vector<double> x;
  std::vector<double> w;
};

WeightedSorted weighted_sorted(std::span<const double> x, std::span<const double> w) {
  if (x.empty()) throw Error(ErrorCode::InvalidInput, "KS statistic needs non-empty samples");
  if (!w.empty() && w.size() != x.size()) throw Error(ErrorCode::InvalidWeight, "weights and samples differ in length");
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return x[i] < x[j]; });
  WeightedSorted s;
  double total = 0.0;
  for (std::size_t i : idx) {
    if (!std::isfinite(x[i])) throw Error(ErrorCode::InvalidSample, "non-finite sample in KS statistic");
    const double wi = w.empty() ? 1.0 : w[i];
    if (!(wi >= 0.0) || !std::isfinite(wi)) throw Error(ErrorCode::InvalidWeight, "negative or non-finite weight");
    s.x.push_back(x[i]);
    s.w.push_back(wi);
    total += wi;
  }
  if (!(total > 0.0)) throw Error(ErrorCode::InvalidWeight, "weights sum to zero");
  for (double& v : s.w) v /= total;
  return s;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  check_pair(a, b, 3);
  const std::vector<double> ra = average_ranks(a);
  const std::vector<double> rb = average_ranks(b);
  return pearson(ra, rb);
}

double rmse(std::span<const double> a, std::span<const double> b) {
  check_pair(a, b, 1);
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(ss / static_cast<double>(a.size()));
}

double ks_statistic(std::span<const double> x1, std::span<const double> w1, std::span<const double> x2,
                    std::span<const double> w2) {
  const WeightedSorted a = weighted_sorted(x1, w1);
  const WeightedSorted b = weighted_sorted(x2, w2);
  std::size_t i = 0, j = 0;
  double fa = 0.0, fb = 0.0, d = 0.0;
  while (i < a.x.size() || j < b.x.size()) {
    const double v = j == b.x.size() || (i < a.x.size() && a.x[i] <= b.x[j]) ? a.x[i] : b.x[j];
    while (i < a.x.size() && a.x[i] == v) fa += a.w[i++];
    while (j < b.x.size() && b.x[j] == v) fb += b.w[j++];
    d = std::max(d, std::abs(fa - fb));
  }
  return std::min(d, 1.0);
}

double ks_statistic(std::span<const double> x1, std::span<const double> x2) { return ks_statistic(x1, {}, x2, {}); }

NormalizationResult check_normalization(const BatchDensityFn& pdf, const Bounds& region, const NormalizationOptions& opts) {
  const auto d = static_cast<Eigen::Index>(region.dim());
  if (d == 0) throw Error(ErrorCode::InvalidInput, "empty integration region");
  for (Eigen::Index j = 0; j < d; ++j) {
    if (!std::isfinite(region.lower(j)) || !std::isfinite(region.upper(j)) || !(region.upper(j) > region.lower(j)))
      throw Error(ErrorCode::InvalidInput, "integration region must be a finite non-empty box");
  }
  // faces that are support bounds carry legitimate density
  std::vector<char> open_lo(static_cast<std::size_t>(d), 1), open_hi(static_cast<std::size_t>(d), 1);
  if (opts.support) {
    for (Eigen::Index j = 0; j < d; ++j) {
      const double tol_lo = 1e-9 * (1.0 + std::abs(region.lower(j)));
      const double tol_hi = 1e-9 * (1.0 + std::abs(region.upper(j)));
      if (std::isfinite(opts.support->lower(j)) && region.lower(j) <= opts.support->lower(j) + tol_lo)
        open_lo[static_cast<std::size_t>(j)] = 0;
      if (std::isfinite(opts.support->upper(j)) && region.upper(j) >= opts.support->upper(j) - tol_hi)
        open_hi[static_cast<std::size_t>(j)] = 0;
    }
  }
  const Vector width = region.upper - region.lower;
  const double volume = width.prod();

  auto clean = [](double p) {
    if (std::isnan(p)) throw Error(ErrorCode::InvalidInput, "density evaluation returned NaN");
    return p;
  };

  NormalizationResult res;
  if (opts.method == IntegrationMethod::Grid) {
    if (d > 3) throw Error(ErrorCode::InvalidInput, "grid quadrature supports at most 3 dimensions");
    // midpoint rule; returns the integral and the outer-layer share
    auto grid = [&](std::size_t n, double* boundary) {
      const Vector h = width / static_cast<double>(n);
      std::size_t total = 1;
      for (Eigen::Index j = 0; j < d; ++j) total *= n;
      const std::size_t chunk = std::size_t{1} << 16;
      double sum = 0.0, edge = 0.0;
      std::vector<std::size_t> digits(static_cast<std::size_t>(d));
      for (std::size_t start = 0; start < total; start += chunk) {
        const std::size_t m = std::min(chunk, total - start);
        Matrix pts(static_cast<Eigen::Index>(m), d);
        std::vector<char> is_edge(m, 0);
        for (std::size_t r = 0; r < m; ++r) {
          std::size_t k = start + r;
          for (Eigen::Index j = 0; j < d; ++j) {
            const std::size_t idx = k % n;
            k /= n;
            pts(static_cast<Eigen::Index>(r), j) = region.lower(j) + (static_cast<double>(idx) + 0.5) * h(j);
            if ((idx == 0 && open_lo[static_cast<std::size_t>(j)]) || (idx == n - 1 && open_hi[static_cast<std::size_t>(j)]))
              is_edge[r] = 1;
          }
        }
        const Vector p = pdf(pts);
        for (std::size_t r = 0; r < m; ++r) {
          const double v = clean(p(static_cast<Eigen::Index>(r)));
          sum += v;
          if (is_edge[r]) edge += v;
        }
      }
      const double cell = h.prod();
      if (boundary) *boundary = edge * cell;
      res.evaluations += total;
      return sum * cell;
    };
    const std::size_t n = std::max<std::size_t>(opts.grid_points, 3);
    double edge = 0.0;
    res.integral = grid(n, &edge);
    const double coarse = grid((n + 1) / 2, nullptr);
    res.std_error = std::abs(res.integral - coarse);
    res.boundary_fraction = res.integral > 0.0 ? edge / res.integral : 0.0;
  } else {
    const auto n = static_cast<Eigen::Index>(std::max<std::size_t>(opts.mc_points, 2));
    Rng rng(opts.seed);
    Matrix pts(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < d; ++j) pts(i, j) = region.lower(j) + width(j) * uniform01(rng);
    const Vector p = pdf(pts);
    const Vector layer = width / static_cast<double>(std::max<std::size_t>(opts.grid_points, 3));
    double sum = 0.0, sq = 0.0, edge = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double v = clean(p(i));
      sum += v;
      sq += v * v;
      for (Eigen::Index j = 0; j < d; ++j) {
        if ((open_lo[static_cast<std::size_t>(j)] && pts(i, j) < region.lower(j) + layer(j)) ||
            (open_hi[static_cast<std::size_t>(j)] && pts(i, j) > region.upper(j) - layer(j))) {
          edge += v;
          break;
        }
      }
    }
    const double nn = static_cast<double>(n);
    const double mean = sum / nn;
    const double var = std::max(0.0, sq / nn - mean * mean);
    res.integral = volume * mean;
    res.std_error = volume * std::sqrt(var / (nn - 1.0));
    res.boundary_fraction = sum > 0.0 ? edge / sum : 0.0;
    res.evaluations = static_cast<std::size_t>(n);
  }
  res.region_too_small = res.boundary_fraction > 1e-4;
  return res;
}

NormalizationResult check_normalization(const DensityModel& model, const Bounds& region, const NormalizationOptions& opts) {
  if (model.dim() != region.dim()) throw Error(ErrorCode::InvalidInput, "model and region differ in dimension");
  return check_normalization([&](const Matrix& x) { return Vector(model.log_pdf_batch(x).array().exp()); }, region, opts);
}

double median(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }), v.end());
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace {

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

void summarize(CvResult& res) {
  std::vector<double> s, r;
  for (const auto& rep : res.repeats) {
    if (rep.failed) {
      ++res.failures;
      continue;
    }
    s.push_back(rep.spearman);
    r.push_back(rep.rmse);
  }
  res.median_spearman = median(s);
  res.median_rmse = median(r);
}

template <class Body>
CvResult run_repeats(const std::string& method, const CvOptions& opts, Body body) {
  CvResult res;
  res.method = method;
  res.train_size = opts.train_size;
  res.repeats.resize(opts.n_repeats);
  const auto n = static_cast<long>(opts.n_repeats);
#pragma omp parallel for schedule(dynamic) if (opts.parallel)
  for (long r = 0; r < n; ++r) {
    CvRepeat& rep = res.repeats[static_cast<std::size_t>(r)];
    rep.repeat = static_cast<std::size_t>(r);
    try {
      body(static_cast<std::uint64_t>(r), rep);
    } catch (const std::exception& e) {
      rep.failed = true;
      rep.error = e.what();
      rep.spearman = rep.rmse = rep.rmse_unnormalized = kNaN;
    }
  }
  summarize(res);
  return res;
}

}  // namespace

CvResult cross_validate(const DensityModel& target, const Fitter& fit, const std::string& method, const CvOptions& opts) {
  if (opts.test_size < 3) throw Error(ErrorCode::InvalidInput, "test set must hold at least 3 points");
  return run_repeats(method, opts, [&](std::uint64_t r, CvRepeat& rep) {
    const Matrix train = target.sample(opts.train_size, derive_seed(opts.seed, 3 * r));
    const Matrix test = target.sample(opts.test_size, derive_seed(opts.seed, 3 * r + 1));
    const SampleSet ts = SampleSet::validate(train, target.log_pdf_batch(train));
    const DensityPtr model = fit(ts, derive_seed(opts.seed, 3 * r + 2));
    const std::vector<double> approx = to_std(model->log_pdf_batch(test).array().exp());
    const std::vector<double> truth = to_std(target.log_pdf_batch(test).array().exp());
    rep.spearman = spearman(approx, truth);
    rep.rmse = rmse(approx, truth);
    rep.rmse_unnormalized = kNaN;
  });
}

CvResult cross_validate(const SampleSet& samples, const Fitter& fit, const std::string& method, const CvOptions& opts) {
  if (!samples.log_post()) throw Error(ErrorCode::MissingDensities, "posterior-sample validation needs log posterior values");
  if (samples.size() < opts.train_size + opts.test_size)
    throw Error(ErrorCode::InsufficientSamples, "fewer samples than train_size + test_size");
  if (opts.test_size < 10) throw Error(ErrorCode::InvalidInput, "test set must hold at least 10 points");
  return run_repeats(method, opts, [&](std::uint64_t r, CvRepeat& rep) {
    std::vector<std::size_t> perm(samples.size());
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(derive_seed(opts.seed, 3 * r));
    std::shuffle(perm.begin(), perm.end(), rng);
    const std::span<const std::size_t> all(perm);
    const SampleSet train = samples.subset(all.subspan(0, opts.train_size));
    const SampleSet test = samples.subset(all.subspan(opts.train_size, opts.test_size));
    const DensityPtr model = fit(train, derive_seed(opts.seed, 3 * r + 2));
    const Vector lq = model->log_pdf_batch(test.positions());
    const Vector& lp = *test.log_post();
    const std::vector<double> approx = to_std(lq.array().exp());
    const std::vector<double> unnorm = to_std(lp.array().exp());
    rep.spearman = spearman(approx, unnorm);
    const double log_z = estimate_log_evidence(*model, test).fixed_slope_log_z;
    const double lp_max = lp.maxCoeff();
    rep.rmse = rmse(approx, to_std((lp.array() - log_z).exp()));
    rep.rmse_unnormalized = rmse(to_std((lq.array() + log_z - lp_max).exp()), to_std((lp.array() - lp_max).exp()));
  });
}

void write_cv_csv(std::ostream& out, std::span<const CvResult> results) {
  out << "method,train_size,repeat,spearman,rmse\n";
  out.precision(17);
  for (const auto& res : results) {
    for (const auto& rep : res.repeats)
      out << res.method << ',' << res.train_size << ',' << rep.repeat << ',' << rep.spearman << ',' << rep.rmse << '\n';
  }
}

}  // namespace postapprox
