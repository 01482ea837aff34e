// OpenMP kernels against the serial reference loops.
#include <benchmark/benchmark.h>

#include <random>

#include "cfsm/kernels.hpp"

namespace {

cfsm::Matrix random_matrix(std::size_t r, std::size_t c, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  cfsm::Matrix m(r, c);
  for (double& v : m.values()) v = u(rng);
  return m;
}

void BM_matmul_omp(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const auto a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : st) benchmark::DoNotOptimize(cfsm::kernels::matmul(a, b));
  st.counters["threads"] = cfsm::kernels::max_threads();
}

void BM_matmul_serial(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const auto a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : st) benchmark::DoNotOptimize(cfsm::kernels::serial::matmul(a, b));
}

void BM_matmul_nt_omp(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const auto a = random_matrix(n, 784, 1), b = random_matrix(128, 784, 2);
  for (auto _ : st) benchmark::DoNotOptimize(cfsm::kernels::matmul_nt(a, b));
}

void BM_matmul_nt_serial(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const auto a = random_matrix(n, 784, 1), b = random_matrix(128, 784, 2);
  for (auto _ : st) benchmark::DoNotOptimize(cfsm::kernels::serial::matmul_nt(a, b));
}

void BM_pairwise_omp(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const auto x = random_matrix(n, 64, 3);
  for (auto _ : st) benchmark::DoNotOptimize(cfsm::kernels::pairwise_sq_dists(x));
}

void BM_pairwise_serial(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const auto x = random_matrix(n, 64, 3);
  for (auto _ : st) benchmark::DoNotOptimize(cfsm::kernels::serial::pairwise_sq_dists(x));
}

}  // namespace

BENCHMARK(BM_matmul_omp)->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_matmul_serial)->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_matmul_nt_omp)->Arg(64)->Arg(256);
BENCHMARK(BM_matmul_nt_serial)->Arg(64)->Arg(256);
BENCHMARK(BM_pairwise_omp)->Arg(64)->Arg(512);
BENCHMARK(BM_pairwise_serial)->Arg(64)->Arg(512);

BENCHMARK_MAIN();
