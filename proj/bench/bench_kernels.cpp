#include "postapprox/kernels.hpp"
#include "postapprox/random.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace postapprox;
using kernels::Exec;

namespace {

Matrix normal_rows(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> z;
  Matrix m(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = z(rng);
  return m;
}

kernels::GaussianComponents mixture(std::size_t g, Eigen::Index d) {
  std::vector<Vector> means;
  std::vector<Matrix> covs;
  const Matrix centres = normal_rows(static_cast<Eigen::Index>(g), d, 7);
  for (std::size_t k = 0; k < g; ++k) {
    means.push_back(3.0 * centres.row(static_cast<Eigen::Index>(k)).transpose());
    const Matrix a = normal_rows(d, d, 100 + k);
    covs.push_back(a * a.transpose() / static_cast<double>(d) + Matrix::Identity(d, d));
  }
  return kernels::make_components(Vector::Constant(static_cast<Eigen::Index>(g), 1.0 / static_cast<double>(g)), means, covs);
}

Exec exec_of(const benchmark::State& state) { return state.range(0) == 0 ? Exec::Serial : Exec::Parallel; }

void BM_MixtureLogDensity(benchmark::State& state) {
  const auto comps = mixture(6, 5);
  const Matrix x = normal_rows(state.range(1), 5, 1);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::mixture_log_density(comps, x, exec_of(state)));
  state.SetItemsProcessed(state.iterations() * state.range(1));
}

void BM_KdeLogDensity(benchmark::State& state) {
  const Matrix train = normal_rows(state.range(1), 3, 2);
  const Matrix q = normal_rows(1000, 3, 3);
  const Matrix chol = Matrix::Identity(3, 3);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::kde_log_density(train, chol, 0.0, q, exec_of(state)));
  state.SetItemsProcessed(state.iterations() * 1000);
}

void BM_KernelMatrix(benchmark::State& state) {
  const Matrix x = normal_rows(state.range(1), 4, 4);
  for (auto _ : state)
    benchmark::DoNotOptimize(kernels::kernel_matrix(x, kernels::KernelKind::Matern32, 0.8, exec_of(state)));
}

void BM_KernelPredict(benchmark::State& state) {
  const Matrix train = normal_rows(state.range(1), 4, 5);
  const Vector alpha = normal_rows(state.range(1), 1, 6).col(0);
  const Matrix q = normal_rows(2000, 4, 7);
  for (auto _ : state)
    benchmark::DoNotOptimize(
        kernels::kernel_predict(q, train, alpha, kernels::KernelKind::SquaredExponential, 0.8, exec_of(state)));
  state.SetItemsProcessed(state.iterations() * 2000);
}

}  // namespace

// first argument: 0 = serial reference, 1 = OpenMP
BENCHMARK(BM_MixtureLogDensity)->ArgsProduct({{0, 1}, {1000, 100000}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_KdeLogDensity)->ArgsProduct({{0, 1}, {500, 5000}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_KernelMatrix)->ArgsProduct({{0, 1}, {200, 800}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_KernelPredict)->ArgsProduct({{0, 1}, {200, 800}})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
