#include "histoprog/gradcore/kernels.hpp"

#include <algorithm>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace histoprog::gradcore::kernels {

namespace {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelThreshold = 1 << 16;

void gemm_nn(const double* a, const double* b, double* c, std::int64_t m,
             std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static) if (static_cast<std::size_t>(m) * k * n > kParallelThreshold)
  for (std::int64_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt(const double* a, const double* b, double* c, std::int64_t m,
             std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static) if (static_cast<std::size_t>(m) * k * n > kParallelThreshold)
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c, std::int64_t m,
             std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static) if (static_cast<std::size_t>(m) * k * n > kParallelThreshold)
  for (std::int64_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p * m + i];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_tt(const double* a, const double* b, double* c, std::int64_t m,
             std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static) if (static_cast<std::size_t>(m) * k * n > kParallelThreshold)
  for (std::int64_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[j * k + p];
      crow[j] += acc;
    }
  }
}

}  // namespace

void gemm(std::span<const double> a, std::span<const double> b,
          std::span<double> c, std::size_t m, std::size_t k, std::size_t n,
          Trans ta, Trans tb, bool accumulate) {
  if (!accumulate) std::fill(c.begin(), c.begin() + m * n, 0.0);
  const auto rows = static_cast<std::int64_t>(m);
  if (ta == Trans::no && tb == Trans::no) {
    gemm_nn(a.data(), b.data(), c.data(), rows, k, n);
  } else if (ta == Trans::no) {
    gemm_nt(a.data(), b.data(), c.data(), rows, k, n);
  } else if (tb == Trans::no) {
    gemm_tn(a.data(), b.data(), c.data(), rows, k, n);
  } else {
    gemm_tt(a.data(), b.data(), c.data(), rows, k, n);
  }
}

void gemm_batched(std::span<const double> a, std::span<const double> b,
                  std::span<double> c, std::size_t batch, std::size_t m,
                  std::size_t k, std::size_t n, Trans ta, Trans tb,
                  bool accumulate) {
  const std::size_t sa = m * k;
  const std::size_t sb = k * n;
  const std::size_t sc = m * n;
  for (std::size_t i = 0; i < batch; ++i) {
    gemm(a.subspan(i * sa, sa), b.subspan(i * sb, sb), c.subspan(i * sc, sc), m,
         k, n, ta, tb, accumulate);
  }
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace reference {

void gemm(std::span<const double> a, std::span<const double> b,
          std::span<double> c, std::size_t m, std::size_t k, std::size_t n,
          Trans ta, Trans tb, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ta == Trans::no ? a[i * k + p] : a[p * m + i];
        const double bv = tb == Trans::no ? b[p * n + j] : b[j * k + p];
        acc += av * bv;
      }
      c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
    }
  }
}

}  // namespace reference

}  // namespace histoprog::gradcore::kernels
