#include "ctsn/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cstdlib>
#include <string>

namespace ctsn::kernels {
namespace {

inline double a_at(const GemmShape& s, std::span<const double> a, std::size_t i, std::size_t p) {
  return s.trans_a ? a[p * s.m + i] : a[i * s.k + p];
}

// Row i of C. Shared by both variants so the reduction order is identical.
inline void gemm_row(const GemmShape& s, std::span<const double> a, std::span<const double> b,
                     std::span<double> c, std::size_t i, bool accumulate) {
  double* crow = c.data() + i * s.n;
  if (!accumulate) std::fill(crow, crow + s.n, 0.0);
  if (s.trans_b) {
    for (std::size_t j = 0; j < s.n; ++j) {
      const double* brow = b.data() + j * s.k;
      double acc = 0.0;
      for (std::size_t p = 0; p < s.k; ++p) acc += a_at(s, a, i, p) * brow[p];
      crow[j] += acc;
    }
  } else {
    for (std::size_t p = 0; p < s.k; ++p) {
      const double av = a_at(s, a, i, p);
      if (av == 0.0) continue;
      const double* brow = b.data() + p * s.n;
      for (std::size_t j = 0; j < s.n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Displacement form v + sum_j w_ij ((R_j - I) v + t_j): equal to
// sum_j w_ij (R_j v + t_j) for unit-sum rows, and exact for identity poses.
inline void lbs_vertex(std::span<const double> v, std::span<const double> w, std::size_t joints,
                       std::span<const double> t, std::span<double> out, std::size_t i) {
  const double x = v[3 * i], y = v[3 * i + 1], z = v[3 * i + 2];
  double ox = 0.0, oy = 0.0, oz = 0.0;
  for (std::size_t j = 0; j < joints; ++j) {
    const double wij = w[i * joints + j];
    if (wij == 0.0) continue;
    const double* m = t.data() + 12 * j;
    ox += wij * ((m[0] - 1.0) * x + m[1] * y + m[2] * z + m[3]);
    oy += wij * (m[4] * x + (m[5] - 1.0) * y + m[6] * z + m[7]);
    oz += wij * (m[8] * x + m[9] * y + (m[10] - 1.0) * z + m[11]);
  }
  out[3 * i] = x + ox;
  out[3 * i + 1] = y + oy;
  out[3 * i + 2] = z + oz;
}

inline void laplacian_vertex(std::span<const double> in, std::span<const std::uint32_t> offsets,
                             std::span<const std::uint32_t> nb, double lambda,
                             std::span<double> out, std::size_t i) {
  const std::uint32_t b = offsets[i], e = offsets[i + 1];
  double sx = 0.0, sy = 0.0, sz = 0.0;
  for (std::uint32_t q = b; q < e; ++q) {
    sx += in[3 * nb[q]];
    sy += in[3 * nb[q] + 1];
    sz += in[3 * nb[q] + 2];
  }
  const double inv = 1.0 / static_cast<double>(e - b);
  out[3 * i] = (1.0 - lambda) * in[3 * i] + lambda * (sx * inv);
  out[3 * i + 1] = (1.0 - lambda) * in[3 * i + 1] + lambda * (sy * inv);
  out[3 * i + 2] = (1.0 - lambda) * in[3 * i + 2] + lambda * (sz * inv);
}

}  // namespace

namespace serial {

void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c, bool accumulate) {
  for (std::size_t i = 0; i < s.m; ++i) gemm_row(s, a, b, c, i, accumulate);
}

void segment_sum(std::span<const double> values, std::size_t cols,
                 std::span<const std::uint32_t> segment, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t e = 0; e < segment.size(); ++e) {
    double* o = out.data() + static_cast<std::size_t>(segment[e]) * cols;
    const double* v = values.data() + e * cols;
    for (std::size_t c = 0; c < cols; ++c) o[c] += v[c];
  }
}

void lbs(std::span<const double> vertices, std::span<const double> weights, std::size_t joints,
         std::span<const double> transforms, std::span<double> out) {
  const std::size_t n = vertices.size() / 3;
  for (std::size_t i = 0; i < n; ++i) lbs_vertex(vertices, weights, joints, transforms, out, i);
}

void laplacian_step(std::span<const double> in, std::span<const std::uint32_t> offsets,
                    std::span<const std::uint32_t> neighbors, double lambda,
                    std::span<double> out) {
  const std::size_t n = offsets.size() - 1;
  for (std::size_t i = 0; i < n; ++i) laplacian_vertex(in, offsets, neighbors, lambda, out, i);
}

}  // namespace serial

namespace parallel {

void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c, bool accumulate) {
  const auto m = static_cast<std::int64_t>(s.m);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < m; ++i) gemm_row(s, a, b, c, static_cast<std::size_t>(i), accumulate);
}

void segment_sum(std::span<const double> values, std::size_t cols,
                 std::span<const std::uint32_t> offsets, std::span<double> out) {
  const auto n = static_cast<std::int64_t>(offsets.size()) - 1;
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    double* o = out.data() + static_cast<std::size_t>(i) * cols;
    std::fill(o, o + cols, 0.0);
    for (std::uint32_t e = offsets[i]; e < offsets[i + 1]; ++e) {
      const double* v = values.data() + static_cast<std::size_t>(e) * cols;
      for (std::size_t c = 0; c < cols; ++c) o[c] += v[c];
    }
  }
}

void lbs(std::span<const double> vertices, std::span<const double> weights, std::size_t joints,
         std::span<const double> transforms, std::span<double> out) {
  const auto n = static_cast<std::int64_t>(vertices.size() / 3);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i)
    lbs_vertex(vertices, weights, joints, transforms, out, static_cast<std::size_t>(i));
}

void laplacian_step(std::span<const double> in, std::span<const std::uint32_t> offsets,
                    std::span<const std::uint32_t> neighbors, double lambda,
                    std::span<double> out) {
  const auto n = static_cast<std::int64_t>(offsets.size()) - 1;
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i)
    laplacian_vertex(in, offsets, neighbors, lambda, out, static_cast<std::size_t>(i));
}

}  // namespace parallel

void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c, bool accumulate) {
  constexpr std::size_t kParallelFlops = 1u << 18;
  if (s.m > 1 && s.m * s.k * s.n >= kParallelFlops && max_threads() > 1 && !omp_in_parallel())
    parallel::gemm(s, a, b, c, accumulate);
  else
    serial::gemm(s, a, b, c, accumulate);
}

void apply_thread_cap() {
  static const bool applied = [] {
    if (const char* env = std::getenv("CTSN_THREADS")) {
      try {
        const int cap = std::stoi(env);
        if (cap >= 1) omp_set_num_threads(std::min(cap, omp_get_num_procs()));
      } catch (const std::exception&) {
      }
    }
    return true;
  }();
  (void)applied;
}

int max_threads() {
  apply_thread_cap();
  return omp_get_max_threads();
}

}  // namespace ctsn::kernels
