#pragma once

#include "ctsn/autodiff.hpp"
#include "ctsn/tensor.hpp"

#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace ctsn {

/// Named tensors in insertion order. Used for parameters and their gradients.
class ParamSet {
 public:
  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  const std::vector<std::string>& names() const noexcept { return names_; }
  std::size_t size() const noexcept { return names_.size(); }
  std::size_t scalar_count() const;

  friend bool operator==(const ParamSet& a, const ParamSet& b);

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct AdamMoments {
  Tensor m, v;
  long long t = 0;
};

/// Adam with bias correction. Moments and step counts are tracked per
/// parameter so disjoint parameter groups can share one state.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long long step = 0;
  std::map<std::string, AdamMoments> moments;
};

/// Updates every parameter named in `grads`; others are left untouched.
void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, double lr);

/// Scalar function of a list of tensors, built on a fresh tape.
using ScalarFn = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<double> per_tensor;  // max relative error per input tensor
  std::size_t worst_tensor = 0, worst_element = 0;
  double worst_analytic = 0.0, worst_numeric = 0.0;
};

/// Central differences with h = 1e-6 * max(1, |p|); relative error per element
/// is |a - n| / max(|a|, |n|, 1e-8).
GradCheckReport finite_diff_check(const ScalarFn& fn, const std::vector<Tensor>& params);

}  // namespace ctsn
