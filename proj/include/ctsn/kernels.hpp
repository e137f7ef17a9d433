#pragma once

// Dense inner loops used by the autodiff engine, skinning and smoothing.
//
// Every kernel exists twice: a serial reference and an OpenMP version that
// splits work over output rows. Each output element is reduced in the same
// order by both, so results are bitwise identical for any thread count.

#include <cstddef>
#include <cstdint>
#include <span>

namespace ctsn::kernels {

struct GemmShape {
  std::size_t m;  // rows of op(A) and C
  std::size_t k;  // inner dimension
  std::size_t n;  // cols of op(B) and C
  bool trans_a = false;  // A stored k x m
  bool trans_b = false;  // B stored n x k
};

namespace serial {

// C (+)= op(A) op(B)
void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c, bool accumulate);

// out[seg[e], :] += values[e, :]; out is zeroed first.
void segment_sum(std::span<const double> values, std::size_t cols,
                 std::span<const std::uint32_t> segment, std::span<double> out);

// out_i = v_i + sum_j w_ij ((A_j - I) v_i + t_j), which is sum_j w_ij (A_j v_i + t_j)
// for unit-sum weight rows; transforms are row-major 3x4 blocks.
void lbs(std::span<const double> vertices, std::span<const double> weights, std::size_t joints,
         std::span<const double> transforms, std::span<double> out);

// One uniform Laplacian step over CSR adjacency.
void laplacian_step(std::span<const double> in, std::span<const std::uint32_t> offsets,
                    std::span<const std::uint32_t> neighbors, double lambda, std::span<double> out);

}  // namespace serial

namespace parallel {

void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c, bool accumulate);

// Segments given as CSR offsets over rows sorted by segment id.
void segment_sum(std::span<const double> values, std::size_t cols,
                 std::span<const std::uint32_t> offsets, std::span<double> out);

void lbs(std::span<const double> vertices, std::span<const double> weights, std::size_t joints,
         std::span<const double> transforms, std::span<double> out);

void laplacian_step(std::span<const double> in, std::span<const std::uint32_t> offsets,
                    std::span<const std::uint32_t> neighbors, double lambda, std::span<double> out);

}  // namespace parallel

// Dispatchers: parallel above a work threshold, serial otherwise.
void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c, bool accumulate);

// Applies the CTSN_THREADS cap (if set) to the OpenMP runtime. Idempotent.
void apply_thread_cap();
int max_threads();

}  // namespace ctsn::kernels
