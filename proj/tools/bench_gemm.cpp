// Quick GEMM throughput probe for sizing desk-scale experiment defaults.
#include <chrono>
#include <cstdio>
#include <vector>

#include "surge/kernels.hpp"
#include "surge/rng.hpp"

using namespace surge;

static double bench(std::int64_t M, std::int64_t N, std::int64_t K, int iters) {
  Rng rng(1);
  std::vector<double> a(M * K), b(K * N), c(M * N, 0.0);
  for (auto& v : a) v = rng.uniform(-1, 1);
  for (auto& v : b) v = rng.uniform(-1, 1);
  kern::gemm_nn(M, N, K, a.data(), K, b.data(), N, c.data(), N, false);  // warm
  auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < iters; ++i) {
    kern::gemm_nn(M, N, K, a.data(), K, b.data(), N, c.data(), N, false);
  }
  auto t1 = std::chrono::steady_clock::now();
  double s = std::chrono::duration<double>(t1 - t0).count();
  double gflops = 2.0 * M * N * K * iters / s / 1e9;
  std::printf("gemm_nn M=%5lld N=%4lld K=%5lld: %7.2f GFLOP/s\n", (long long)M, (long long)N,
              (long long)K, gflops);
  return gflops;
}

static double bench_tn(std::int64_t M, std::int64_t N, std::int64_t K, int iters) {
  Rng rng(1);
  std::vector<double> a(M * K), b(M * N), c(K * N, 0.0);
  for (auto& v : a) v = rng.uniform(-1, 1);
  for (auto& v : b) v = rng.uniform(-1, 1);
  kern::gemm_tn(M, N, K, a.data(), K, b.data(), N, c.data(), N, false);
  auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < iters; ++i) {
    kern::gemm_tn(M, N, K, a.data(), K, b.data(), N, c.data(), N, false);
  }
  auto t1 = std::chrono::steady_clock::now();
  double s = std::chrono::duration<double>(t1 - t0).count();
  double gflops = 2.0 * M * N * K * iters / s / 1e9;
  std::printf("gemm_tn M=%5lld N=%4lld K=%5lld: %7.2f GFLOP/s\n", (long long)M, (long long)N,
              (long long)K, gflops);
  return gflops;
}

int main() {
  // conv2d shapes (per sample, T=12): cols(12*225, 27)->32, (2700, 288)->16
  bench(2700, 32, 27, 400);
  bench(2700, 16, 288, 200);
  // conv3d shapes: cols(2700, 81)->64, (2700, 1728)->32
  bench(2700, 64, 81, 100);
  bench(2700, 32, 1728, 20);
  // lstm shapes: (64, 675)x(675, 512), (64,128)x(128,512)
  bench(64, 512, 675, 200);
  bench(64, 512, 128, 600);
  // dense bottleneck: (64*12, 3600)x(3600,16)
  bench(768, 16, 3600, 40);
  // weight-gradient shapes
  bench_tn(2700, 32, 1728, 20);
  bench_tn(2700, 16, 288, 200);
  return 0;
}
