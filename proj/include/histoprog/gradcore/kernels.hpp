#pragma once

#include <cstddef>
#include <span>

namespace histoprog::gradcore::kernels {

enum class Trans { no, yes };

/// C (m x n) = op(A) * op(B), or C += op(A) * op(B) when `accumulate`.
///
/// op(A) is m x k; A is stored m x k when `ta == no` and k x m otherwise.
/// op(B) is k x n; B is stored k x n when `tb == no` and n x k otherwise.
/// Rows of C are distributed over OpenMP threads; every element is reduced
/// in a fixed order, so results do not depend on the thread count.
void gemm(std::span<const double> a, std::span<const double> b,
          std::span<double> c, std::size_t m, std::size_t k, std::size_t n,
          Trans ta, Trans tb, bool accumulate = false);

/// Batched gemm over `batch` independent, contiguously stored problems.
void gemm_batched(std::span<const double> a, std::span<const double> b,
                  std::span<double> c, std::size_t batch, std::size_t m,
                  std::size_t k, std::size_t n, Trans ta, Trans tb,
                  bool accumulate = false);

/// Number of threads the OpenMP kernels will use (1 without OpenMP).
int max_threads();

namespace reference {

// Textbook triple loop, single-threaded. Kept as the oracle for the tuned
// kernels above and as the baseline in the benchmark target.
void gemm(std::span<const double> a, std::span<const double> b,
          std::span<double> c, std::size_t m, std::size_t k, std::size_t n,
          Trans ta, Trans tb, bool accumulate = false);

}  // namespace reference

}  // namespace histoprog::gradcore::kernels
