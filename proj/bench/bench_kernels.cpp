// Serial reference vs OpenMP kernels on the shapes the toy models actually
// hit, plus a square-matmul scaling series.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mdx/kernels.hpp"

using namespace mdx;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return v;
}

void bm_matmul_serial(benchmark::State& state) {
    const std::int64_t n = state.range(0);
    const auto a = random_vec(static_cast<std::size_t>(n * n), 1);
    const auto b = random_vec(static_cast<std::size_t>(n * n), 2);
    std::vector<double> c(static_cast<std::size_t>(n * n));
    for (auto _ : state) {
        kernels::serial::matmul(a.data(), b.data(), c.data(), n, n, n);
        benchmark::DoNotOptimize(c.data());
        benchmark::ClobberMemory();
    }
    state.SetItemsProcessed(state.iterations() * n * n * n);
}

void bm_matmul_parallel(benchmark::State& state) {
    const std::int64_t n = state.range(0);
    const auto a = random_vec(static_cast<std::size_t>(n * n), 1);
    const auto b = random_vec(static_cast<std::size_t>(n * n), 2);
    std::vector<double> c(static_cast<std::size_t>(n * n));
    for (auto _ : state) {
        kernels::parallel::matmul(a.data(), b.data(), c.data(), n, n, n);
        benchmark::DoNotOptimize(c.data());
        benchmark::ClobberMemory();
    }
    state.SetItemsProcessed(state.iterations() * n * n * n);
}

// 3x3 same-size convolution at the toy-model channel widths.
void bm_conv2d_serial(benchmark::State& state) {
    const std::int64_t side = state.range(0), ch = state.range(1);
    const auto x = random_vec(static_cast<std::size_t>(side * side * ch), 3);
    const auto w = random_vec(static_cast<std::size_t>(9 * ch * ch), 4);
    const auto bias = random_vec(static_cast<std::size_t>(ch), 5);
    std::vector<double> y(static_cast<std::size_t>(side * side * ch));
    for (auto _ : state) {
        kernels::serial::conv2d(x.data(), w.data(), bias.data(), y.data(), side, side, ch, ch, 3, 1);
        benchmark::DoNotOptimize(y.data());
        benchmark::ClobberMemory();
    }
    state.SetItemsProcessed(state.iterations() * side * side * ch * ch * 9);
}

void bm_conv2d_parallel(benchmark::State& state) {
    const std::int64_t side = state.range(0), ch = state.range(1);
    const auto x = random_vec(static_cast<std::size_t>(side * side * ch), 3);
    const auto w = random_vec(static_cast<std::size_t>(9 * ch * ch), 4);
    const auto bias = random_vec(static_cast<std::size_t>(ch), 5);
    std::vector<double> y(static_cast<std::size_t>(side * side * ch));
    for (auto _ : state) {
        kernels::parallel::conv2d(x.data(), w.data(), bias.data(), y.data(), side, side, ch, ch, 3, 1);
        benchmark::DoNotOptimize(y.data());
        benchmark::ClobberMemory();
    }
    state.SetItemsProcessed(state.iterations() * side * side * ch * ch * 9);
}

void bm_conv2d_grad_input_serial(benchmark::State& state) {
    const std::int64_t side = state.range(0), ch = state.range(1);
    const auto dy = random_vec(static_cast<std::size_t>(side * side * ch), 6);
    const auto w = random_vec(static_cast<std::size_t>(9 * ch * ch), 7);
    std::vector<double> dx(static_cast<std::size_t>(side * side * ch));
    for (auto _ : state) {
        kernels::serial::conv2d_grad_input(dy.data(), w.data(), dx.data(), side, side, ch, ch, 3, 1);
        benchmark::DoNotOptimize(dx.data());
        benchmark::ClobberMemory();
    }
}

void bm_conv2d_grad_input_parallel(benchmark::State& state) {
    const std::int64_t side = state.range(0), ch = state.range(1);
    const auto dy = random_vec(static_cast<std::size_t>(side * side * ch), 6);
    const auto w = random_vec(static_cast<std::size_t>(9 * ch * ch), 7);
    std::vector<double> dx(static_cast<std::size_t>(side * side * ch));
    for (auto _ : state) {
        kernels::parallel::conv2d_grad_input(dy.data(), w.data(), dx.data(), side, side, ch, ch, 3, 1);
        benchmark::DoNotOptimize(dx.data());
        benchmark::ClobberMemory();
    }
}

}  // namespace

BENCHMARK(bm_matmul_serial)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_matmul_parallel)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_conv2d_serial)->Args({32, 8})->Args({128, 8});
BENCHMARK(bm_conv2d_parallel)->Args({32, 8})->Args({128, 8});
BENCHMARK(bm_conv2d_grad_input_serial)->Args({128, 8});
BENCHMARK(bm_conv2d_grad_input_parallel)->Args({128, 8});

BENCHMARK_MAIN();
