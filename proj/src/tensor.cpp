#include "ctsn/tensor.hpp"

#include "ctsn/errors.hpp"

#include <cmath>

namespace ctsn {

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols)
    throw ValidationError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                          shape_string());
}

double Tensor::item() const {
  if (data_.size() != 1) throw ValidationError("item() on a " + shape_string() + " tensor");
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor uniform_tensor(std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng) {
  // Mapping raw 64-bit draws by hand keeps the stream identical across
  // standard library implementations.
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0, 1)
    t[i] = (2.0 * u - 1.0) * bound;
  }
  return t;
}

}  // namespace ctsn
