#include "postapprox/vine.hpp"

#include "postapprox/error.hpp"
#include "postapprox/numerics.hpp"
#include "postapprox/random.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <set>

namespace postapprox {

namespace {

constexpr double kClamp = 1e-12;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double clamp_unit(double u) { return std::clamp(u, kClamp, 1.0 - kClamp); }

// log(1 + e^t) without overflow
double softplus(double t) { return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

// log(e^a + e^b - 1) for a, b >= 0
double log_sum_exp_minus_one(double a, double b) {
  const double m = std::max(a, b);
  const double n = std::min(a, b);
  return m + std::log1p(std::exp(n - m) - std::exp(-m));
}

// Unrotated families; h is dC(u, v)/dv. All arguments already clamped.

double base_log_pdf(CopulaFamily f, double th, double u, double v) {
  switch (f) {
    case CopulaFamily::Independence:
      return 0.0;
    case CopulaFamily::Gaussian: {
      const double x = norm_quantile(u);
      const double y = norm_quantile(v);
      const double r2 = 1.0 - th * th;
      return -0.5 * std::log(r2) - (th * th * (x * x + y * y) - 2.0 * th * x * y) / (2.0 * r2);
    }
    case CopulaFamily::Clayton: {
      const double lu = std::log(u);
      const double lv = std::log(v);
      const double l = log_sum_exp_minus_one(-th * lu, -th * lv);
      return std::log1p(th) - (1.0 + th) * (lu + lv) - (2.0 + 1.0 / th) * l;
    }
    case CopulaFamily::Gumbel: {
      const double lu = -std::log(u);
      const double lv = -std::log(v);
      const double la = std::log(lu);
      const double lb = std::log(lv);
      const double m = std::max(th * la, th * lb);
      const double log_a = m + std::log(std::exp(th * la - m) + std::exp(th * lb - m));
      const double a_inv_th = std::exp(log_a / th);
      return -a_inv_th + lu + lv + (-2.0 + 2.0 / th) * log_a + (th - 1.0) * (la + lb) +
             std::log1p((th - 1.0) / a_inv_th);
    }
    case CopulaFamily::Frank: {
      const double e = -std::expm1(-th);
      const double d = e - std::expm1(-th * u) * std::expm1(-th * v);
      return std::log(th * e) - th * (u + v) - 2.0 * std::log(std::abs(d));
    }
  }
  return 0.0;
}

double base_h(CopulaFamily f, double th, double u, double v) {
  switch (f) {
    case CopulaFamily::Independence:
      return u;
    case CopulaFamily::Gaussian:
      return norm_cdf((norm_quantile(u) - th * norm_quantile(v)) / std::sqrt(1.0 - th * th));
    case CopulaFamily::Clayton: {
      const double lu = std::log(u);
      const double lv = std::log(v);
      const double l = log_sum_exp_minus_one(-th * lu, -th * lv);
      return std::exp(-(th + 1.0) * lv - (1.0 + 1.0 / th) * l);
    }
    case CopulaFamily::Gumbel: {
      const double lu = -std::log(u);
      const double lv = -std::log(v);
      const double la = std::log(lu);
      const double lb = std::log(lv);
      const double m = std::max(th * la, th * lb);
      const double log_a = m + std::log(std::exp(th * la - m) + std::exp(th * lb - m));
      return std::exp(-std::exp(log_a / th) + (1.0 / th - 1.0) * log_a + (th - 1.0) * lb + lv);
    }
    case CopulaFamily::Frank: {
      const double eu = std::expm1(-th * u);
      const double ev = std::expm1(-th * v);
      return std::exp(-th * v) * eu / (std::expm1(-th) + eu * ev);
    }
  }
  return u;
}

double base_hinv(CopulaFamily f, double th, double w, double v) {
  switch (f) {
    case CopulaFamily::Independence:
      return w;
    case CopulaFamily::Gaussian:
      return norm_cdf(th * norm_quantile(v) + std::sqrt(1.0 - th * th) * norm_quantile(w));
    case CopulaFamily::Clayton: {
      const double b = -th * std::log(v);
      const double c = std::expm1(-th / (th + 1.0) * std::log(w));
      const double log_inner = softplus(b + std::log(c));
      return std::exp(-log_inner / th);
    }
    case CopulaFamily::Gumbel: {
      auto g = [&](double u) { return base_h(f, th, u, v) - w; };
      if (g(kClamp) >= 0.0) return kClamp;
      if (g(1.0 - kClamp) <= 0.0) return 1.0 - kClamp;
      return find_root(g, kClamp, 1.0 - kClamp);
    }
    case CopulaFamily::Frank: {
      const double x = w * std::expm1(-th) / (w + (1.0 - w) * std::exp(-th * v));
      return -std::log1p(x) / th;
    }
  }
  return w;
}

double debye1(double theta) {
  if (std::abs(theta) < 1e-10) return 1.0;
  auto f = [](double t) { return std::abs(t) < 1e-12 ? 1.0 : t / std::expm1(t); };
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, 0.0, theta, 10, 1e-12) / theta;
}

bool rotatable(CopulaFamily f) { return f == CopulaFamily::Clayton || f == CopulaFamily::Gumbel; }

}  // namespace

const char* to_string(CopulaFamily f) {
  switch (f) {
    case CopulaFamily::Independence:
      return "independence";
    case CopulaFamily::Gaussian:
      return "gaussian";
    case CopulaFamily::Clayton:
      return "clayton";
    case CopulaFamily::Gumbel:
      return "gumbel";
    case CopulaFamily::Frank:
      return "frank";
  }
  return "independence";
}

CopulaFamily copula_family_from_string(const std::string& name) {
  for (auto f : {CopulaFamily::Independence, CopulaFamily::Gaussian, CopulaFamily::Clayton, CopulaFamily::Gumbel,
                 CopulaFamily::Frank}) {
    if (name == to_string(f)) return f;
  }
  throw Error(ErrorCode::InvalidInput, "unknown copula family '" + name + "'");
}

void BicopModel::validate() const {
  if (rotation != 0 && rotation != 90 && rotation != 180 && rotation != 270)
    throw Error(ErrorCode::InvalidInput, "copula rotation must be 0, 90, 180 or 270");
  if (rotation != 0 && !rotatable(family)) throw Error(ErrorCode::InvalidInput, "family has no rotations");
  bool ok = std::isfinite(theta) || family == CopulaFamily::Independence;
  switch (family) {
    case CopulaFamily::Independence:
      break;
    case CopulaFamily::Gaussian:
      ok = ok && std::abs(theta) < 1.0;
      break;
    case CopulaFamily::Clayton:
      ok = ok && theta > 0.0;
      break;
    case CopulaFamily::Gumbel:
      ok = ok && theta >= 1.0;
      break;
    case CopulaFamily::Frank:
      ok = ok && theta != 0.0;
      break;
  }
  if (!ok) throw Error(ErrorCode::InvalidInput, std::string("invalid parameter for ") + to_string(family) + " copula");
}

double BicopModel::log_pdf(double u, double v) const {
  u = clamp_unit(u);
  v = clamp_unit(v);
  switch (rotation) {
    case 90:
      return base_log_pdf(family, theta, 1.0 - u, v);
    case 180:
      return base_log_pdf(family, theta, 1.0 - u, 1.0 - v);
    case 270:
      return base_log_pdf(family, theta, u, 1.0 - v);
    default:
      return base_log_pdf(family, theta, u, v);
  }
}

double BicopModel::pdf(double u, double v) const { return std::exp(log_pdf(u, v)); }

double BicopModel::hfunc(double u, double v) const {
  u = clamp_unit(u);
  v = clamp_unit(v);
  double h = 0.0;
  switch (rotation) {
    case 90:
      h = 1.0 - base_h(family, theta, 1.0 - u, v);
      break;
    case 180:
      h = 1.0 - base_h(family, theta, 1.0 - u, 1.0 - v);
      break;
    case 270:
      h = base_h(family, theta, u, 1.0 - v);
      break;
    default:
      h = base_h(family, theta, u, v);
  }
  return clamp_unit(h);
}

double BicopModel::hfunc_first(double u, double v) const {
  u = clamp_unit(u);
  v = clamp_unit(v);
  // all base families are exchangeable
  double h = 0.0;
  switch (rotation) {
    case 90:
      h = base_h(family, theta, v, 1.0 - u);
      break;
    case 180:
      h = 1.0 - base_h(family, theta, 1.0 - v, 1.0 - u);
      break;
    case 270:
      h = 1.0 - base_h(family, theta, 1.0 - v, u);
      break;
    default:
      h = base_h(family, theta, v, u);
  }
  return clamp_unit(h);
}

double BicopModel::hinv(double w, double v) const {
  w = clamp_unit(w);
  v = clamp_unit(v);
  double u = 0.0;
  switch (rotation) {
    case 90:
      u = 1.0 - base_hinv(family, theta, 1.0 - w, v);
      break;
    case 180:
      u = 1.0 - base_hinv(family, theta, 1.0 - w, 1.0 - v);
      break;
    case 270:
      u = base_hinv(family, theta, w, 1.0 - v);
      break;
    default:
      u = base_hinv(family, theta, w, v);
  }
  return clamp_unit(u);
}

double BicopModel::hinv_first(double u, double w) const {
  u = clamp_unit(u);
  w = clamp_unit(w);
  double v = 0.0;
  switch (rotation) {
    case 90:
      v = base_hinv(family, theta, w, 1.0 - u);
      break;
    case 180:
      v = 1.0 - base_hinv(family, theta, 1.0 - w, 1.0 - u);
      break;
    case 270:
      v = 1.0 - base_hinv(family, theta, 1.0 - w, u);
      break;
    default:
      v = base_hinv(family, theta, w, u);
  }
  return clamp_unit(v);
}

double copula_tau(CopulaFamily family, int rotation, double theta) {
  double tau = 0.0;
  switch (family) {
    case CopulaFamily::Independence:
      tau = 0.0;
      break;
    case CopulaFamily::Gaussian:
      tau = 2.0 / std::numbers::pi * std::asin(theta);
      break;
    case CopulaFamily::Clayton:
      tau = theta / (theta + 2.0);
      break;
    case CopulaFamily::Gumbel:
      tau = 1.0 - 1.0 / theta;
      break;
    case CopulaFamily::Frank:
      tau = 1.0 - 4.0 / theta * (1.0 - debye1(theta));
      break;
  }
  return rotation == 90 || rotation == 270 ? -tau : tau;
}

double kendall_tau(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw Error(ErrorCode::InvalidInput, "kendall_tau: length mismatch");
  const std::size_t n = u.size();
  if (n < 2) throw Error(ErrorCode::InvalidInput, "kendall_tau needs at least two pairs");

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return u[a] < u[b] || (u[a] == u[b] && v[a] < v[b]);
  });

  auto tied_pairs = [](auto begin, auto end, auto eq) {
    double t = 0.0;
    double run = 1.0;
    for (auto it = begin + 1; it <= end; ++it) {
      if (it != end && eq(*(it - 1), *it)) {
        run += 1.0;
      } else {
        t += run * (run - 1.0) / 2.0;
        run = 1.0;
      }
    }
    return t;
  };
  const double ties_u = tied_pairs(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return u[a] == u[b]; });
  const double ties_uv = tied_pairs(idx.begin(), idx.end(),
                                    [&](std::size_t a, std::size_t b) { return u[a] == u[b] && v[a] == v[b]; });

  // merge sort on v counting inversions
  std::vector<double> a(n);
  for (std::size_t i = 0; i < n; ++i) a[i] = v[idx[i]];
  std::vector<double> buf(n);
  double swaps = 0.0;
  for (std::size_t width = 1; width < n; width *= 2) {
    for (std::size_t lo = 0; lo < n; lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, n);
      const std::size_t hi = std::min(lo + 2 * width, n);
      std::size_t i = lo;
      std::size_t j = mid;
      std::size_t k = lo;
      while (i < mid && j < hi) {
        if (a[j] < a[i]) {
          buf[k++] = a[j++];
          swaps += static_cast<double>(mid - i);
        } else {
          buf[k++] = a[i++];
        }
      }
      while (i < mid) buf[k++] = a[i++];
      while (j < hi) buf[k++] = a[j++];
    }
    std::swap(a, buf);
  }
  std::vector<std::size_t> sorted_idx(n);
  std::iota(sorted_idx.begin(), sorted_idx.end(), 0);
  const double ties_v =
      tied_pairs(sorted_idx.begin(), sorted_idx.end(), [&](std::size_t x, std::size_t y) { return a[x] == a[y]; });

  const double pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  const double concordant_minus_discordant = pairs - ties_u - ties_v + ties_uv - 2.0 * swaps;
  return concordant_minus_discordant / pairs;
}

namespace {

struct BicopData {
  std::span<const double> u;
  std::span<const double> v;
  std::vector<double> x;  // normal scores for the gaussian family
  std::vector<double> y;
};

double bicop_loglik(const BicopModel& m, const BicopData& d) {
  double ll = 0.0;
  const std::size_t n = d.u.size();
  if (m.family == CopulaFamily::Independence) return 0.0;
  if (m.family == CopulaFamily::Gaussian) {
    const double r = m.theta;
    const double r2 = 1.0 - r * r;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = d.x[i];
      const double y = d.y[i];
      ll += -0.5 * std::log(r2) - (r * r * (x * x + y * y) - 2.0 * r * x * y) / (2.0 * r2);
    }
    return ll;
  }
  for (std::size_t i = 0; i < n; ++i) ll += m.log_pdf(d.u[i], d.v[i]);
  return std::isfinite(ll) ? ll : kNegInf;
}

struct ParamMap {
  double lo;
  double hi;
  double (*to_theta)(double);
  double (*from_theta)(double);
};

ParamMap param_map(CopulaFamily f) {
  switch (f) {
    case CopulaFamily::Gaussian:
      return {-0.999, 0.999, [](double t) { return t; }, [](double th) { return th; }};
    case CopulaFamily::Clayton:
      return {std::log(1e-4), std::log(50.0), [](double t) { return std::exp(t); },
              [](double th) { return std::log(th); }};
    case CopulaFamily::Gumbel:
      return {0.0, std::log(50.0), [](double t) { return std::exp(t); }, [](double th) { return std::log(th); }};
    case CopulaFamily::Frank:
      return {-50.0, 50.0, [](double t) { return std::abs(t) < 1e-8 ? (t < 0.0 ? -1e-8 : 1e-8) : t; },
              [](double th) { return th; }};
    case CopulaFamily::Independence:
      break;
  }
  return {0.0, 0.0, [](double t) { return t; }, [](double th) { return th; }};
}

std::optional<double> tau_start(CopulaFamily f, int rotation, double tau) {
  const double t = (rotation == 90 || rotation == 270) ? -tau : tau;
  switch (f) {
    case CopulaFamily::Gaussian:
      return std::sin(std::numbers::pi * tau / 2.0);
    case CopulaFamily::Clayton:
      if (t <= 0.0) return std::nullopt;
      return 2.0 * t / (1.0 - t);
    case CopulaFamily::Gumbel:
      if (t <= 0.0) return std::nullopt;
      return 1.0 / (1.0 - t);
    default:
      return std::nullopt;
  }
}

BicopModel fit_candidate(CopulaFamily f, int rotation, const BicopData& d, double tau) {
  BicopModel m;
  m.family = f;
  m.rotation = rotation;
  if (f == CopulaFamily::Independence) {
    m.loglik = 0.0;
    m.aic = 0.0;
    return m;
  }
  const ParamMap pm = param_map(f);
  auto neg_ll = [&](double t) {
    BicopModel c = m;
    c.theta = pm.to_theta(t);
    const double ll = bicop_loglik(c, d);
    return std::isfinite(ll) ? -ll : std::numeric_limits<double>::max();
  };
  Minimum best = golden_section_minimize(neg_ll, pm.lo, pm.hi, 1e-6);
  if (auto th0 = tau_start(f, rotation, tau)) {
    const double t0 = std::clamp(pm.from_theta(*th0), pm.lo, pm.hi);
    const double v0 = neg_ll(t0);
    if (v0 < best.value) {
      // local refinement around the tau-inversion start
      const double w = 0.05 * (pm.hi - pm.lo);
      Minimum local = golden_section_minimize(neg_ll, std::max(pm.lo, t0 - w), std::min(pm.hi, t0 + w), 1e-6);
      best = local.value < v0 ? local : Minimum{t0, v0};
    }
  }
  m.theta = pm.to_theta(best.x);
  m.loglik = -best.value;
  m.aic = 2.0 - 2.0 * m.loglik;
  return m;
}

}  // namespace

BicopModel fit_bicop(std::span<const double> u, std::span<const double> v, const BicopFitOptions& opts) {
  if (u.size() != v.size()) throw Error(ErrorCode::InvalidInput, "fit_bicop: length mismatch");
  if (u.size() < 30) throw Error(ErrorCode::InsufficientSamples, "fit_bicop needs at least 30 pairs");
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (!(u[i] > 0.0 && u[i] < 1.0 && v[i] > 0.0 && v[i] < 1.0))
      throw Error(ErrorCode::InvalidPIT, "copula data must lie strictly inside (0,1)");
  }
  const double tau = kendall_tau(u, v);
  BicopModel best;  // independence
  if (opts.independence_level > 0.0) {
    const double n = static_cast<double>(u.size());
    const double z = std::abs(tau) / std::sqrt(2.0 * (2.0 * n + 5.0) / (9.0 * n * (n - 1.0)));
    if (z < norm_quantile(1.0 - opts.independence_level / 2.0)) return best;
  }
  BicopData d{u, v, {}, {}};
  d.x.resize(u.size());
  d.y.resize(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    d.x[i] = norm_quantile(clamp_unit(u[i]));
    d.y[i] = norm_quantile(clamp_unit(v[i]));
  }
  for (auto f : {CopulaFamily::Gaussian, CopulaFamily::Clayton, CopulaFamily::Gumbel, CopulaFamily::Frank}) {
    for (int rot : {0, 90, 180, 270}) {
      if (rot != 0 && !rotatable(f)) continue;
      BicopModel c = fit_candidate(f, rot, d, tau);
      if (c.aic < best.aic) best = c;
    }
  }
  return best;
}

std::size_t VineStructure::table_size() const {
  std::size_t edges = 0;
  for (const auto& level : levels) edges += level.size();
  return static_cast<std::size_t>(dim) + 2 * edges;
}

namespace {

void evaluate_edge(const VineEdge& e, std::vector<double>& table) {
  const double u = table[static_cast<std::size_t>(e.in_a)];
  const double v = table[static_cast<std::size_t>(e.in_b)];
  table[static_cast<std::size_t>(e.out_a)] = e.copula.hfunc(u, v);
  table[static_cast<std::size_t>(e.out_b)] = e.copula.hfunc_first(u, v);
}

std::vector<int> edge_vars(const VineEdge& e) {
  std::vector<int> vars = e.cond;
  vars.push_back(e.a);
  vars.push_back(e.b);
  std::sort(vars.begin(), vars.end());
  return vars;
}

}  // namespace

VineModel::VineModel(std::vector<MarginalModel> marginals, VineStructure structure)
    : marginals_(std::move(marginals)), structure_(std::move(structure)) {
  const int d = static_cast<int>(marginals_.size());
  if (d < 2 || structure_.dim != d || static_cast<int>(structure_.levels.size()) != d - 1)
    throw Error(ErrorCode::InvalidInput, "vine structure does not match the number of marginals");
  for (int l = 0; l < d - 1; ++l) {
    if (static_cast<int>(structure_.levels[static_cast<std::size_t>(l)].size()) != d - 1 - l)
      throw Error(ErrorCode::InvalidInput, "vine level has the wrong number of edges");
    for (const auto& e : structure_.levels[static_cast<std::size_t>(l)]) e.copula.validate();
  }
  build_sampling_order();
}

std::string VineModel::method() const {
  switch (marginals_.front().kind()) {
    case MarginalKind::EcdfKd:
      return "vine-ecdf";
    case MarginalKind::ParetoTail:
      return "vine-pareto";
    case MarginalKind::ParamMixture:
      return "vine-mixture";
  }
  return "vine";
}

void VineModel::build_sampling_order() {
  std::vector<const VineEdge*> remaining;
  for (const auto& level : structure_.levels)
    for (const auto& e : level) remaining.push_back(&e);
  std::set<int> vars_left;
  for (int j = 0; j < structure_.dim; ++j) vars_left.insert(j);

  std::vector<SampleStep> removal;
  while (vars_left.size() > 1) {
    const VineEdge* top = nullptr;
    int top_level = -1;
    for (const VineEdge* e : remaining) {
      const int l = static_cast<int>(e->cond.size());
      if (l > top_level) {
        top_level = l;
        top = e;
      }
    }
    const int x = top->a;
    SampleStep step{x, {}, {}};
    std::vector<const VineEdge*> keep;
    for (const VineEdge* e : remaining) {
      if (e->a == x || e->b == x) {
        step.chain.push_back(e);
      } else {
        keep.push_back(e);
      }
    }
    std::sort(step.chain.begin(), step.chain.end(),
              [](const VineEdge* p, const VineEdge* q) { return p->cond.size() < q->cond.size(); });
    if (static_cast<int>(step.chain.size()) != top_level + 1)
      throw Error(ErrorCode::InvalidInput, "vine structure is not a regular vine");
    for (std::size_t l = 0; l < step.chain.size(); ++l) {
      const VineEdge* e = step.chain[l];
      if (e->cond.size() != l) throw Error(ErrorCode::InvalidInput, "vine structure is not a regular vine");
      if (l > 0) {
        const VineEdge* prev = step.chain[l - 1];
        const int in_x = e->a == x ? e->in_a : e->in_b;
        const int prev_out = prev->a == x ? prev->out_a : prev->out_b;
        if (in_x != prev_out) throw Error(ErrorCode::InvalidInput, "vine structure is not a regular vine");
      } else {
        const int in_x = e->a == x ? e->in_a : e->in_b;
        if (in_x != x) throw Error(ErrorCode::InvalidInput, "vine structure is not a regular vine");
      }
    }
    remaining = std::move(keep);
    vars_left.erase(x);
    removal.push_back(std::move(step));
  }
  removal.push_back(SampleStep{*vars_left.begin(), {}, {}});
  steps_.assign(removal.rbegin(), removal.rend());

  std::vector<char> done_var(static_cast<std::size_t>(structure_.dim), 0);
  std::vector<const VineEdge*> pending;
  for (const auto& level : structure_.levels)
    for (const auto& e : level) pending.push_back(&e);
  for (auto& step : steps_) {
    done_var[static_cast<std::size_t>(step.var)] = 1;
    std::vector<const VineEdge*> still;
    for (const VineEdge* e : pending) {
      const auto vars = edge_vars(*e);
      const bool ready = std::all_of(vars.begin(), vars.end(), [&](int j) { return done_var[static_cast<std::size_t>(j)]; });
      (ready ? step.ready : still).push_back(e);
    }
    pending = std::move(still);
  }
}

double VineModel::copula_log_pdf(std::span<const double> u) const {
  std::vector<double> table(structure_.table_size());
  for (int j = 0; j < structure_.dim; ++j) table[static_cast<std::size_t>(j)] = clamp_unit(u[static_cast<std::size_t>(j)]);
  double lp = 0.0;
  for (const auto& level : structure_.levels) {
    for (const auto& e : level) {
      lp += e.copula.log_pdf(table[static_cast<std::size_t>(e.in_a)], table[static_cast<std::size_t>(e.in_b)]);
      evaluate_edge(e, table);
    }
  }
  return lp;
}

double VineModel::log_pdf(const Vector& x) const {
  const std::size_t d = dim();
  if (static_cast<std::size_t>(x.size()) != d) throw Error(ErrorCode::InvalidInput, "vine log_pdf: dimension mismatch");
  std::vector<double> u(d);
  double lp = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double lf = marginals_[j].log_pdf(x[static_cast<Eigen::Index>(j)]);
    if (!(lf > kNegInf)) return kNegInf;
    lp += lf;
    u[j] = marginals_[j].cdf(x[static_cast<Eigen::Index>(j)]);
  }
  return lp + copula_log_pdf(u);
}

Matrix VineModel::sample_uniform(std::size_t n, std::uint64_t seed) const {
  const std::size_t d = dim();
  Matrix w(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = uniform01(rng);

  Matrix out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  const auto rows = static_cast<std::int64_t>(n);
#pragma omp parallel
  {
    std::vector<double> table(structure_.table_size());
#pragma omp for schedule(static)
    for (std::int64_t i = 0; i < rows; ++i) {
      for (std::size_t k = 0; k < steps_.size(); ++k) {
        const SampleStep& step = steps_[k];
        double t = clamp_unit(w(i, step.var));
        for (std::size_t l = step.chain.size(); l-- > 0;) {
          const VineEdge* e = step.chain[l];
          if (e->a == step.var) {
            t = e->copula.hinv(t, table[static_cast<std::size_t>(e->in_b)]);
          } else {
            t = e->copula.hinv_first(table[static_cast<std::size_t>(e->in_a)], t);
          }
        }
        table[static_cast<std::size_t>(step.var)] = t;
        for (const VineEdge* e : step.ready) evaluate_edge(*e, table);
      }
      for (std::size_t j = 0; j < d; ++j) out(i, static_cast<Eigen::Index>(j)) = table[j];
    }
  }
  return out;
}

Matrix VineModel::sample(std::size_t n, std::uint64_t seed) const {
  Matrix u = sample_uniform(n, seed);
  for (Eigen::Index i = 0; i < u.rows(); ++i)
    for (Eigen::Index j = 0; j < u.cols(); ++j)
      u(i, j) = marginals_[static_cast<std::size_t>(j)].quantile(clamp_unit(u(i, j)));
  return u;
}

namespace {

struct TreeNode {
  std::vector<int> vars;     // sorted variable set
  std::vector<int> parents;  // node indices in the previous tree (empty for tree 1)
  int edge = -1;             // index into the previous level's edges
};

// Prim maximum spanning tree; ties go to the lexicographically smaller (i, j).
std::vector<std::pair<int, int>> max_spanning_tree(int n, const std::map<std::pair<int, int>, double>& weights) {
  std::vector<char> in_tree(static_cast<std::size_t>(n), 0);
  in_tree[0] = 1;
  std::vector<std::pair<int, int>> tree;
  for (int step = 1; step < n; ++step) {
    std::optional<std::pair<int, int>> best;
    double best_w = -1.0;
    for (const auto& [edge, w] : weights) {
      const bool a_in = in_tree[static_cast<std::size_t>(edge.first)] != 0;
      const bool b_in = in_tree[static_cast<std::size_t>(edge.second)] != 0;
      if (a_in == b_in) continue;
      if (w > best_w) {
        best_w = w;
        best = edge;
      }
    }
    if (!best) throw Error(ErrorCode::InvalidInput, "vine tree candidate graph is disconnected");
    in_tree[static_cast<std::size_t>(best->first)] = 1;
    in_tree[static_cast<std::size_t>(best->second)] = 1;
    tree.push_back(*best);
  }
  return tree;
}

std::vector<double> systematic_resample_rows(const Vector& weights, std::uint64_t seed) {
  const std::size_t n = static_cast<std::size_t>(weights.size());
  std::vector<double> rows;
  rows.reserve(n);
  Rng rng(seed);
  const double start = uniform01(rng) / static_cast<double>(n);
  double cum = 0.0;
  std::size_t i = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double target = start + static_cast<double>(k) / static_cast<double>(n);
    while (i + 1 < n && cum + weights[static_cast<Eigen::Index>(i)] < target) {
      cum += weights[static_cast<Eigen::Index>(i)];
      ++i;
    }
    rows.push_back(static_cast<double>(i));
  }
  return rows;
}

}  // namespace

VineModel fit_vine(const SampleSet& samples, const Bounds& bounds, const VineFitOptions& opts) {
  const std::size_t n = samples.size();
  const std::size_t d = samples.dim();
  if (n < 30 || d < 2) throw Error(ErrorCode::InsufficientSamples, "vine fit needs N >= 30 and D >= 2");
  if (bounds.dim() != d) throw Error(ErrorCode::InvalidInput, "bounds dimension does not match the samples");

  Matrix x = samples.positions();
  if (samples.weights()) {
    const Vector& w = *samples.weights();
    if ((w.array() - w.mean()).abs().maxCoeff() > 1e-12) {
      // weighted samples: equal-weight systematic resample
      const auto rows = systematic_resample_rows(w, derive_seed(opts.seed, 77));
      Matrix r(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
      for (std::size_t i = 0; i < n; ++i) r.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
      x = std::move(r);
    }
  }

  std::vector<std::optional<MarginalModel>> fitted(d);
  std::vector<std::exception_ptr> errors(d);
  const auto dims = static_cast<std::int64_t>(d);
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t j = 0; j < dims; ++j) {
    try {
      Vector col = x.col(j);
      fitted[static_cast<std::size_t>(j)] =
          fit_marginal(opts.marginal, std::span<const double>(col.data(), n), bounds.lower[j], bounds.upper[j],
                       derive_seed(opts.seed, static_cast<std::uint64_t>(j)));
    } catch (...) {
      errors[static_cast<std::size_t>(j)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<MarginalModel> marginals;
  for (auto& m : fitted) marginals.push_back(std::move(*m));

  VineStructure vs;
  vs.dim = static_cast<int>(d);
  const std::size_t total_edges = d * (d - 1) / 2;
  std::vector<std::vector<double>> table(d + 2 * total_edges, std::vector<double>(n));
  // ranks of the ECDF kinds map to k/(N+1)
  const double pit_scale = opts.marginal == MarginalKind::ParamMixture ? 1.0 : static_cast<double>(n) / (n + 1.0);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t i = 0; i < n; ++i)
      table[j][i] = clamp_unit(marginals[j].cdf(x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) * pit_scale);

  std::vector<TreeNode> nodes(d);
  for (std::size_t j = 0; j < d; ++j) nodes[j].vars = {static_cast<int>(j)};
  int next_slot = static_cast<int>(d);

  for (std::size_t level = 0; level + 1 < d; ++level) {
    const int m = static_cast<int>(nodes.size());
    // candidate edges: input slots for (node i, node j)
    struct Candidate {
      int a, b;
      std::vector<int> cond;
      int in_a, in_b;
    };
    std::map<std::pair<int, int>, Candidate> cands;
    std::map<std::pair<int, int>, double> weights;
    const std::vector<VineEdge>* prev = level == 0 ? nullptr : &vs.levels[level - 1];
    for (int i = 0; i < m; ++i) {
      for (int k = i + 1; k < m; ++k) {
        const TreeNode& p = nodes[static_cast<std::size_t>(i)];
        const TreeNode& q = nodes[static_cast<std::size_t>(k)];
        Candidate c{};
        if (level == 0) {
          c = {i, k, {}, i, k};
        } else {
          const bool adjacent = std::any_of(p.parents.begin(), p.parents.end(), [&](int t) {
            return std::find(q.parents.begin(), q.parents.end(), t) != q.parents.end();
          });
          if (!adjacent) continue;
          std::vector<int> only_p, only_q;
          std::set_difference(p.vars.begin(), p.vars.end(), q.vars.begin(), q.vars.end(), std::back_inserter(only_p));
          std::set_difference(q.vars.begin(), q.vars.end(), p.vars.begin(), p.vars.end(), std::back_inserter(only_q));
          std::set_intersection(p.vars.begin(), p.vars.end(), q.vars.begin(), q.vars.end(), std::back_inserter(c.cond));
          if (only_p.size() != 1 || only_q.size() != 1) continue;
          const VineEdge& ep = (*prev)[static_cast<std::size_t>(p.edge)];
          const VineEdge& eq = (*prev)[static_cast<std::size_t>(q.edge)];
          const int xp = only_p[0];
          const int xq = only_q[0];
          const int slot_p = ep.a == xp ? ep.out_a : ep.out_b;
          const int slot_q = eq.a == xq ? eq.out_a : eq.out_b;
          if (xp < xq) {
            c.a = xp, c.b = xq, c.in_a = slot_p, c.in_b = slot_q;
          } else {
            c.a = xq, c.b = xp, c.in_a = slot_q, c.in_b = slot_p;
          }
        }
        weights[{i, k}] = std::abs(kendall_tau(table[static_cast<std::size_t>(c.in_a)], table[static_cast<std::size_t>(c.in_b)]));
        cands.emplace(std::pair<int, int>{i, k}, std::move(c));
      }
    }
    const auto tree = max_spanning_tree(m, weights);

    std::vector<VineEdge> edges(tree.size());
    for (std::size_t t = 0; t < tree.size(); ++t) {
      const Candidate& c = cands.at(tree[t]);
      VineEdge& e = edges[t];
      e.a = c.a;
      e.b = c.b;
      e.cond = c.cond;
      e.in_a = c.in_a;
      e.in_b = c.in_b;
      e.out_a = next_slot++;
      e.out_b = next_slot++;
    }
    const auto ne = static_cast<std::int64_t>(edges.size());
    std::vector<std::exception_ptr> fit_errors(edges.size());
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t t = 0; t < ne; ++t) {
      try {
        VineEdge& e = edges[static_cast<std::size_t>(t)];
        const auto& u = table[static_cast<std::size_t>(e.in_a)];
        const auto& v = table[static_cast<std::size_t>(e.in_b)];
        e.copula = fit_bicop(u, v, opts.bicop);
        auto& oa = table[static_cast<std::size_t>(e.out_a)];
        auto& ob = table[static_cast<std::size_t>(e.out_b)];
        for (std::size_t i = 0; i < n; ++i) {
          oa[i] = e.copula.hfunc(u[i], v[i]);
          ob[i] = e.copula.hfunc_first(u[i], v[i]);
        }
      } catch (...) {
        fit_errors[static_cast<std::size_t>(t)] = std::current_exception();
      }
    }
    for (auto& e : fit_errors)
      if (e) std::rethrow_exception(e);

    std::vector<TreeNode> next(edges.size());
    for (std::size_t t = 0; t < edges.size(); ++t) {
      const auto& [i, k] = tree[t];
      std::set_union(nodes[static_cast<std::size_t>(i)].vars.begin(), nodes[static_cast<std::size_t>(i)].vars.end(),
                     nodes[static_cast<std::size_t>(k)].vars.begin(), nodes[static_cast<std::size_t>(k)].vars.end(),
                     std::back_inserter(next[t].vars));
      next[t].parents = {i, k};
      next[t].edge = static_cast<int>(t);
    }
    vs.levels.push_back(std::move(edges));
    nodes = std::move(next);
  }
  return VineModel(std::move(marginals), std::move(vs));
}

}  // namespace postapprox
