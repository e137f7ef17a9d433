#include "ctsn/autodiff.hpp"

#include "ctsn/errors.hpp"
#include "ctsn/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace ctsn::ad {

const Tensor& Var::value() const { return tape_->value(*this); }

std::shared_ptr<const Segments> Segments::from_sorted_ids(std::vector<std::uint32_t> ids, std::size_t count) {
  auto s = std::make_shared<Segments>();
  s->count = count;
  s->offsets.assign(count + 1, 0);
  for (std::size_t e = 0; e < ids.size(); ++e) {
    if (ids[e] >= count) throw ValidationError("segment id out of range");
    if (e > 0 && ids[e] < ids[e - 1]) throw ValidationError("segment ids must be sorted");
    ++s->offsets[ids[e] + 1];
  }
  for (std::size_t i = 0; i < count; ++i) s->offsets[i + 1] += s->offsets[i];
  s->ids = std::move(ids);
  return s;
}

Var Tape::constant(Tensor value) { return record(std::move(value), false, nullptr, "constant"); }

Var Tape::leaf(Tensor value) { return record(std::move(value), true, nullptr, "leaf"); }

Var Tape::record(Tensor value, bool requires_grad, BackwardFn fn, const char* op) {
  if (!value.all_finite()) throw NumericError(std::string("non-finite output from primitive '") + op + "'");
  nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, false, requires_grad ? std::move(fn) : nullptr});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id()];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  return n.has_grad ? n.grad : Tensor(n.value.rows(), n.value.cols());
}

void Tape::backward(Var loss) {
  if (loss.tape_ != this) throw ValidationError("loss belongs to a different tape");
  if (value(loss).size() != 1)
    throw ValidationError("backward needs a scalar loss, got " + value(loss).shape_string());
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  grad_buffer(loss)[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, Var(this, static_cast<std::uint32_t>(i)), n.grad);
  }
}

namespace {

void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw ValidationError(std::string(op) + ": " + detail);
}

bool any_grad(Var a) { return a.tape().requires_grad(a); }
bool any_grad(Var a, Var b) { return any_grad(a) || any_grad(b); }

void same_tape(Var a, Var b, const char* op) {
  require(&a.tape() == &b.tape(), op, "operands on different tapes");
}

void add_into(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Var matmul(Var a, Var b) {
  same_tape(a, b, "matmul");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.cols() == B.rows(), "matmul", A.shape_string() + " x " + B.shape_string());
  Tensor C(A.rows(), B.cols());
  kernels::gemm({A.rows(), A.cols(), B.cols()}, A.span(), B.span(), C.span(), false);
  return a.tape().record(std::move(C), any_grad(a, b), [a, b](Tape& t, Var, const Tensor& g) {
    const Tensor& A = t.value(a);
    const Tensor& B = t.value(b);
    if (t.requires_grad(a)) {
      // dA = G B^T
      kernels::gemm({A.rows(), B.cols(), A.cols(), false, true}, g.span(), B.span(), t.grad_buffer(a).span(), true);
    }
    if (t.requires_grad(b)) {
      // dB = A^T G
      kernels::gemm({B.rows(), A.rows(), B.cols(), true, false}, A.span(), g.span(), t.grad_buffer(b).span(), true);
    }
  }, "matmul");
}

Var add(Var a, Var b) {
  same_tape(a, b, "add");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const bool broadcast = !A.same_shape(B);
  require(!broadcast || (B.rows() == 1 && B.cols() == A.cols()), "add",
          A.shape_string() + " + " + B.shape_string());
  Tensor C = A;
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = 0; c < A.cols(); ++c) C(r, c) += broadcast ? B(0, c) : B(r, c);
  return a.tape().record(std::move(C), any_grad(a, b), [a, b, broadcast](Tape& t, Var, const Tensor& g) {
    if (t.requires_grad(a)) add_into(t.grad_buffer(a), g);
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      if (!broadcast) {
        add_into(gb, g);
      } else {
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
      }
    }
  }, "add");
}

Var sub(Var a, Var b) {
  same_tape(a, b, "sub");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.same_shape(B), "sub", A.shape_string() + " - " + B.shape_string());
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] -= B[i];
  return a.tape().record(std::move(C), any_grad(a, b), [a, b](Tape& t, Var, const Tensor& g) {
    if (t.requires_grad(a)) add_into(t.grad_buffer(a), g);
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  }, "sub");
}

Var scale(Var a, double s) {
  Tensor C = a.value();
  for (std::size_t i = 0; i < C.size(); ++i) C[i] *= s;
  return a.tape().record(std::move(C), any_grad(a), [a, s](Tape& t, Var, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  }, "scale");
}

Var mul(Var a, Var b) {
  same_tape(a, b, "mul");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.same_shape(B), "mul", A.shape_string() + " * " + B.shape_string());
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] *= B[i];
  return a.tape().record(std::move(C), any_grad(a, b), [a, b](Tape& t, Var, const Tensor& g) {
    const Tensor& A = t.value(a);
    const Tensor& B = t.value(b);
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
    }
  }, "mul");
}

Var relu(Var a) {
  Tensor C = a.value();
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < C.size(); ++i) {
    margin = std::min(margin, std::abs(C[i]));
    C[i] = C[i] > 0.0 ? C[i] : 0.0;
  }
  a.tape().note_kink_distance(margin);
  return a.tape().record(std::move(C), any_grad(a), [a](Tape& t, Var, const Tensor& g) {
    const Tensor& A = t.value(a);
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (A[i] > 0.0) ga[i] += g[i];
  }, "relu");
}

Var sigmoid(Var a) {
  Tensor C = a.value();
  for (std::size_t i = 0; i < C.size(); ++i) C[i] = 1.0 / (1.0 + std::exp(-C[i]));
  return a.tape().record(std::move(C), any_grad(a), [a](Tape& t, Var self, const Tensor& g) {
    const Tensor& Y = t.value(self);
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * Y[i] * (1.0 - Y[i]);
  }, "sigmoid");
}

Var softmax_rows(Var a) {
  Tensor C = a.value();
  const auto cols = C.cols();
  for (std::size_t r = 0; r < C.rows(); ++r) {
    double* row = C.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sum += (row[c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) row[c] /= sum;
  }
  return a.tape().record(std::move(C), any_grad(a), [a](Tape& t, Var self, const Tensor& g) {
    const Tensor& Y = t.value(self);
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t r = 0; r < Y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < Y.cols(); ++c) dot += g(r, c) * Y(r, c);
      for (std::size_t c = 0; c < Y.cols(); ++c) ga(r, c) += Y(r, c) * (g(r, c) - dot);
    }
  }, "softmax_rows");
}

Var layer_norm_rows(Var x, Var gain, Var shift, double eps) {
  same_tape(x, gain, "layer_norm_rows");
  same_tape(x, shift, "layer_norm_rows");
  const Tensor& X = x.value();
  const auto rows = X.rows(), cols = X.cols();
  require(gain.rows() == 1 && gain.cols() == cols && shift.rows() == 1 && shift.cols() == cols,
          "layer_norm_rows", "scale/shift must be 1x" + std::to_string(cols));
  auto xhat = std::make_shared<Tensor>(rows, cols);
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  Tensor Y(rows, cols);
  const Tensor& G = gain.value();
  const Tensor& B = shift.value();
  for (std::size_t r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += X(r, c);
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (X(r, c) - mean) * (X(r, c) - mean);
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      (*xhat)(r, c) = (X(r, c) - mean) * is;
      Y(r, c) = (*xhat)(r, c) * G(0, c) + B(0, c);
    }
  }
  const bool rg = any_grad(x) || any_grad(gain) || any_grad(shift);
  return x.tape().record(std::move(Y), rg, [x, gain, shift, xhat, inv_std](Tape& t, Var, const Tensor& g) {
    const auto rows = g.rows(), cols = g.cols();
    const Tensor& G = t.value(gain);
    if (t.requires_grad(shift)) {
      Tensor& gs = t.grad_buffer(shift);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gs(0, c) += g(r, c);
    }
    if (t.requires_grad(gain)) {
      Tensor& gg = t.grad_buffer(gain);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gg(0, c) += g(r, c) * (*xhat)(r, c);
    }
    if (t.requires_grad(x)) {
      Tensor& gx = t.grad_buffer(x);
      const double inv_n = 1.0 / static_cast<double>(cols);
      for (std::size_t r = 0; r < rows; ++r) {
        double sum_d = 0.0, sum_dx = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          const double d = g(r, c) * G(0, c);
          sum_d += d;
          sum_dx += d * (*xhat)(r, c);
        }
        for (std::size_t c = 0; c < cols; ++c) {
          const double d = g(r, c) * G(0, c);
          gx(r, c) += (*inv_std)[r] * (d - sum_d * inv_n - (*xhat)(r, c) * sum_dx * inv_n);
        }
      }
    }
  }, "layer_norm_rows");
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols", "no inputs");
  const auto rows = parts[0].rows();
  std::size_t cols = 0;
  bool rg = false;
  for (const auto& p : parts) {
    same_tape(parts[0], p, "concat_cols");
    require(p.rows() == rows, "concat_cols", "row counts differ");
    cols += p.cols();
    rg = rg || any_grad(p);
  }
  Tensor C(rows, cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Tensor& P = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(P.data() + r * P.cols(), P.cols(), C.data() + r * cols + off);
    off += P.cols();
  }
  return parts[0].tape().record(std::move(C), rg, [parts](Tape& t, Var, const Tensor& g) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      const auto pc = t.value(p).cols();
      if (t.requires_grad(p)) {
        Tensor& gp = t.grad_buffer(p);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < pc; ++c) gp(r, c) += g(r, off + c);
      }
      off += pc;
    }
  }, "concat_cols");
}

Var gather_rows(Var a, std::shared_ptr<const std::vector<std::uint32_t>> index) {
  const Tensor& A = a.value();
  const auto cols = A.cols();
  Tensor C(index->size(), cols);
  for (std::size_t e = 0; e < index->size(); ++e) {
    const auto src = (*index)[e];
    require(src < A.rows(), "gather_rows", "index " + std::to_string(src) + " out of range");
    std::copy_n(A.data() + src * cols, cols, C.data() + e * cols);
  }
  return a.tape().record(std::move(C), any_grad(a), [a, index](Tape& t, Var, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    const auto cols = g.cols();
    for (std::size_t e = 0; e < index->size(); ++e) {
      double* dst = ga.data() + (*index)[e] * cols;
      const double* src = g.data() + e * cols;
      for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
  }, "gather_rows");
}

Var segment_sum_rows(Var a, SegmentsPtr seg) {
  const Tensor& A = a.value();
  require(A.rows() == seg->ids.size(), "segment_sum_rows", "row count does not match segment ids");
  Tensor C(seg->count, A.cols());
  kernels::parallel::segment_sum(A.span(), A.cols(), seg->offsets, C.span());
  return a.tape().record(std::move(C), any_grad(a), [a, seg](Tape& t, Var, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    const auto cols = g.cols();
    for (std::size_t e = 0; e < seg->ids.size(); ++e) {
      const double* src = g.data() + seg->ids[e] * cols;
      double* dst = ga.data() + e * cols;
      for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
  }, "segment_sum_rows");
}

Var segment_softmax(Var a, SegmentsPtr seg) {
  const Tensor& A = a.value();
  require(A.rows() == seg->ids.size(), "segment_softmax", "row count does not match segment ids");
  const auto cols = A.cols();
  Tensor C = A;
  for (std::size_t s = 0; s < seg->count; ++s) {
    const auto b = seg->offsets[s], e = seg->offsets[s + 1];
    if (b == e) continue;
    for (std::size_t c = 0; c < cols; ++c) {
      double mx = C(b, c);
      for (auto r = b + 1; r < e; ++r) mx = std::max(mx, C(r, c));
      double sum = 0.0;
      for (auto r = b; r < e; ++r) sum += (C(r, c) = std::exp(C(r, c) - mx));
      for (auto r = b; r < e; ++r) C(r, c) /= sum;
    }
  }
  return a.tape().record(std::move(C), any_grad(a), [a, seg](Tape& t, Var self, const Tensor& g) {
    const Tensor& Y = t.value(self);
    Tensor& ga = t.grad_buffer(a);
    const auto cols = g.cols();
    for (std::size_t s = 0; s < seg->count; ++s) {
      const auto b = seg->offsets[s], e = seg->offsets[s + 1];
      for (std::size_t c = 0; c < cols; ++c) {
        double dot = 0.0;
        for (auto r = b; r < e; ++r) dot += g(r, c) * Y(r, c);
        for (auto r = b; r < e; ++r) ga(r, c) += Y(r, c) * (g(r, c) - dot);
      }
    }
  }, "segment_softmax");
}

Var l2_norm_rows(Var a) {
  const Tensor& A = a.value();
  Tensor C(A.rows(), 1);
  for (std::size_t r = 0; r < A.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < A.cols(); ++c) s += A(r, c) * A(r, c);
    C(r, 0) = std::sqrt(s);
    a.tape().note_kink_distance(C(r, 0));
  }
  return a.tape().record(std::move(C), any_grad(a), [a](Tape& t, Var self, const Tensor& g) {
    const Tensor& A = t.value(a);
    const Tensor& Y = t.value(self);
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t r = 0; r < A.rows(); ++r) {
      if (Y(r, 0) == 0.0) continue;  // subgradient 0 at the origin
      const double f = g(r, 0) / Y(r, 0);
      for (std::size_t c = 0; c < A.cols(); ++c) ga(r, c) += f * A(r, c);
    }
  }, "l2_norm_rows");
}

Var mean_all(Var a) {
  const Tensor& A = a.value();
  require(A.size() > 0, "mean_all", "empty tensor");
  double s = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) s += A[i];
  const double inv = 1.0 / static_cast<double>(A.size());
  return a.tape().record(Tensor::scalar(s * inv), any_grad(a), [a, inv](Tape& t, Var, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    const double v = g[0] * inv;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += v;
  }, "mean_all");
}

Var repeat_cols(Var a, std::size_t times) {
  require(times >= 1, "repeat_cols", "times must be >= 1");
  const Tensor& A = a.value();
  Tensor C(A.rows(), A.cols() * times);
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = 0; c < A.cols(); ++c)
      for (std::size_t k = 0; k < times; ++k) C(r, c * times + k) = A(r, c);
  return a.tape().record(std::move(C), any_grad(a), [a, times](Tape& t, Var, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (std::size_t c = 0; c < ga.cols(); ++c) {
        double s = 0.0;
        for (std::size_t k = 0; k < times; ++k) s += g(r, c * times + k);
        ga(r, c) += s;
      }
  }, "repeat_cols");
}

Var fold_cols(Var a, std::size_t width) {
  const Tensor& A = a.value();
  require(width >= 1 && A.cols() % width == 0, "fold_cols",
          std::to_string(A.cols()) + " columns not divisible by " + std::to_string(width));
  const auto blocks = A.cols() / width;
  Tensor C(A.rows(), width);
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t b = 0; b < blocks; ++b)
      for (std::size_t j = 0; j < width; ++j) C(r, j) += A(r, b * width + j);
  return a.tape().record(std::move(C), any_grad(a), [a, width, blocks](Tape& t, Var, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t b = 0; b < blocks; ++b)
        for (std::size_t j = 0; j < width; ++j) ga(r, b * width + j) += g(r, j);
  }, "fold_cols");
}

Var fuse_weights(const Tensor& initial, Var residual) {
  const Tensor& R = residual.value();
  require(initial.same_shape(R), "fuse_weights", initial.shape_string() + " vs " + R.shape_string());
  const auto rows = R.rows(), cols = R.cols();
  Tensor Y(rows, cols);
  auto row_sum = std::make_shared<std::vector<double>>(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      s += std::max(initial(r, c) + R(r, c), 0.0);
      if (R(r, c) != 0.0) residual.tape().note_kink_distance(std::abs(initial(r, c) + R(r, c)));
    }
    (*row_sum)[r] = s;
    bool untouched = true;
    for (std::size_t c = 0; c < cols; ++c) untouched = untouched && R(r, c) == 0.0;
    // an unmodified row is already stochastic; keep it bit for bit
    for (std::size_t c = 0; c < cols; ++c)
      Y(r, c) = untouched || !(s > 0.0) ? initial(r, c) : std::max(initial(r, c) + R(r, c), 0.0) / s;
  }
  auto init = std::make_shared<Tensor>(initial);
  return residual.tape().record(std::move(Y), any_grad(residual),
                                [residual, init, row_sum](Tape& t, Var self, const Tensor& g) {
    const Tensor& Y = t.value(self);
    const Tensor& R = t.value(residual);
    Tensor& gr = t.grad_buffer(residual);
    for (std::size_t r = 0; r < Y.rows(); ++r) {
      const double s = (*row_sum)[r];
      if (!(s > 0.0)) continue;  // fallback row is constant
      double dot = 0.0;
      for (std::size_t c = 0; c < Y.cols(); ++c) dot += g(r, c) * Y(r, c);
      for (std::size_t c = 0; c < Y.cols(); ++c)
        if ((*init)(r, c) + R(r, c) > 0.0) gr(r, c) += (g(r, c) - dot) / s;
    }
  }, "fuse_weights");
}

}  // namespace ctsn::ad
