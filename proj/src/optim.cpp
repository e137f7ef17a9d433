#include "ctsn/optim.hpp"

#include "ctsn/errors.hpp"

#include <algorithm>
#include <cmath>

namespace ctsn {

void ParamSet::add(const std::string& name, Tensor value) {
  if (contains(name)) throw ValidationError("duplicate parameter name '" + name + "'");
  index_.emplace(name, values_.size());
  names_.push_back(name);
  values_.push_back(std::move(value));
}

Tensor& ParamSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return values_[it->second];
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return values_[it->second];
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

bool operator==(const ParamSet& a, const ParamSet& b) { return a.names_ == b.names_ && a.values_ == b.values_; }

void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, double lr) {
  ++state.step;
  for (const auto& name : grads.names()) {
    Tensor& p = params.at(name);
    const Tensor& g = grads.at(name);
    if (!p.same_shape(g))
      throw ValidationError("gradient for '" + name + "' is " + g.shape_string() + ", parameter is " +
                            p.shape_string());
    auto& mom = state.moments[name];
    if (mom.m.size() == 0) {
      mom.m = Tensor(p.rows(), p.cols());
      mom.v = Tensor(p.rows(), p.cols());
    } else if (!mom.m.same_shape(p)) {
      throw ValidationError("optimizer moments for '" + name + "' do not match the parameter shape");
    }
    ++mom.t;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(mom.t));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(mom.t));
    for (std::size_t i = 0; i < p.size(); ++i) {
      mom.m[i] = state.beta1 * mom.m[i] + (1.0 - state.beta1) * g[i];
      mom.v[i] = state.beta2 * mom.v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = mom.m[i] / c1;
      const double vhat = mom.v[i] / c2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

GradCheckReport finite_diff_check(const ScalarFn& fn, const std::vector<Tensor>& params) {
  auto evaluate = [&](const std::vector<Tensor>& ps) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& p : ps) vars.push_back(tape.constant(p));
    return fn(tape, vars).value().item();
  };

  std::vector<Tensor> analytic;
  {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& p : params) vars.push_back(tape.leaf(p));
    const ad::Var loss = fn(tape, vars);
    tape.backward(loss);
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
  }

  GradCheckReport rep;
  rep.per_tensor.assign(params.size(), 0.0);
  std::vector<Tensor> work = params;
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double x = params[t][i];
      const double h = 1e-6 * std::max(1.0, std::abs(x));
      work[t][i] = x + h;
      const double fp = evaluate(work);
      work[t][i] = x - h;
      const double fm = evaluate(work);
      work[t][i] = x;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[t][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > rep.per_tensor[t]) rep.per_tensor[t] = rel;
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst_tensor = t;
        rep.worst_element = i;
        rep.worst_analytic = a;
        rep.worst_numeric = numeric;
      }
    }
  }
  return rep;
}

}  // namespace ctsn
