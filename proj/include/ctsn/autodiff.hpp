#pragma once

// Reverse-mode differentiation over a closed set of dense primitives.
//
// A Tape records every primitive in creation order; backward() walks it in
// reverse. Values must stay finite: a primitive producing NaN/Inf throws
// NumericError naming itself.

#include "ctsn/tensor.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <vector>

namespace ctsn::ad {

class Tape;

class Var {
 public:
  Var() = default;
  Tape& tape() const { return *tape_; }
  std::uint32_t id() const noexcept { return id_; }
  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, std::uint32_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Row grouping for graph aggregation: ids[e] is the segment of row e. Rows
/// must be sorted by segment so the reduction order is fixed.
struct Segments {
  std::vector<std::uint32_t> ids;
  std::vector<std::uint32_t> offsets;  // CSR, size count + 1
  std::size_t count = 0;

  static std::shared_ptr<const Segments> from_sorted_ids(std::vector<std::uint32_t> ids, std::size_t count);
};
using SegmentsPtr = std::shared_ptr<const Segments>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Differentiable input; its gradient is available after backward().
  Var leaf(Tensor value);

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  /// Gradient of the last backward() target w.r.t. v (zeros if unreached).
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  /// Requires a 1 x 1 loss.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }

  // Used by primitive implementations.
  using BackwardFn = std::function<void(Tape&, Var self, const Tensor& grad_out)>;
  Var record(Tensor value, bool requires_grad, BackwardFn fn, const char* op);
  Tensor& grad_buffer(Var v);

  /// Smallest distance of any input to a non-differentiable point (ReLU at 0,
  /// the weight clamp at 0, a norm at the origin) seen on this tape.
  double kink_margin() const noexcept { return kink_margin_; }
  void note_kink_distance(double d) noexcept { kink_margin_ = d < kink_margin_ ? d : kink_margin_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  double kink_margin_ = std::numeric_limits<double>::infinity();
};

// ---- the primitive set ----------------------------------------------------

Var matmul(Var a, Var b);                  // (r x k)(k x c)
Var add(Var a, Var b);                     // same shape, or b is 1 x c (row broadcast)
Var sub(Var a, Var b);                     // same shape
Var scale(Var a, double s);
Var mul(Var a, Var b);                     // elementwise, same shape
Var relu(Var a);
Var sigmoid(Var a);
Var softmax_rows(Var a);
/// Per-row standardisation (eps 1e-5) followed by per-feature scale/shift,
/// both 1 x c.
Var layer_norm_rows(Var x, Var scale, Var shift, double eps = 1e-5);
Var concat_cols(const std::vector<Var>& parts);
Var gather_rows(Var a, std::shared_ptr<const std::vector<std::uint32_t>> index);
/// out[s] = sum of rows in segment s (count x c).
Var segment_sum_rows(Var a, SegmentsPtr segments);
/// Softmax of each column within each segment.
Var segment_softmax(Var a, SegmentsPtr segments);
Var l2_norm_rows(Var a);                   // r x 1
Var mean_all(Var a);                       // 1 x 1
/// Each column repeated `times` times in place: [a b] -> [a a b b] for times 2.
Var repeat_cols(Var a, std::size_t times);
/// Sums consecutive blocks of `width` columns: out[:, j] = sum_b a[:, b*width + j].
Var fold_cols(Var a, std::size_t width);
/// Skinning-weight fusion: clamp(initial + residual, 0) renormalised per row;
/// a row clamping to all zeros falls back to its initial row.
Var fuse_weights(const Tensor& initial, Var residual);

}  // namespace ctsn::ad
