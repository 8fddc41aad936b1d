#include "metsk/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace metsk {

ParamSet::ParamSet(std::vector<NamedTensor> entries) : entries_(std::move(entries)) {}

void ParamSet::add(std::string name, Tensor value) {
  if (contains(name)) throw ValidationError("duplicate parameter name: " + name);
  entries_.push_back({std::move(name), std::move(value)});
}

const Tensor& ParamSet::at(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.value;
  throw ValidationError("unknown parameter: " + name);
}

Tensor& ParamSet::at(const std::string& name) {
  return const_cast<Tensor&>(static_cast<const ParamSet&>(*this).at(name));
}

bool ParamSet::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const NamedTensor& e) { return e.name == name; });
}

std::vector<Tensor> ParamSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.value);
  return out;
}

std::uint64_t ParamSet::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& e : entries_) h = hash_bytes(e.value, h);
  return h;
}

bool ParamSet::bitwise_equal(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name || !entries_[i].value.bitwise_equal(other.entries_[i].value))
      return false;
  }
  return true;
}

void require_matching(const ParamSet& params, const ParamSet& grads, const char* what) {
  if (params.size() != grads.size()) {
    throw ValidationError(std::string(what) + ": " + std::to_string(params.size()) + " parameters but " +
                          std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != grads[i].name) {
      throw ValidationError(std::string(what) + ": entry " + std::to_string(i) + " is '" + params[i].name +
                            "' but gradient is '" + grads[i].name + "'");
    }
    if (params[i].value.shape() != grads[i].value.shape()) {
      throw ValidationError(std::string(what) + ": shape mismatch for '" + params[i].name + "' " +
                            shape_string(params[i].value.shape()) + " vs " + shape_string(grads[i].value.shape()));
    }
  }
}

namespace {

void check_lr(double lr, const char* what) {
  if (!std::isfinite(lr) || lr < 0.0) {
    throw ValidationError(std::string(what) + ": learning rate must be finite and non-negative, got " +
                          std::to_string(lr));
  }
}

}  // namespace

ParamSet sgd_step(const ParamSet& params, const ParamSet& grads, double lr) {
  require_matching(params, grads, "sgd_step");
  check_lr(lr, "sgd_step");
  ParamSet out = params;
  if (lr == 0.0) return out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    Tensor& p = out[i].value;
    const Tensor& g = grads[i].value;
    for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * g[j];
  }
  return out;
}

AdamResult adam_step(AdamState state, const ParamSet& params, const ParamSet& grads, double lr) {
  require_matching(params, grads, "adam_step");
  check_lr(lr, "adam_step");
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.add(p.name, Tensor(p.value.shape(), 0.0));
      state.second_moment.add(p.name, Tensor(p.value.shape(), 0.0));
    }
  }
  require_matching(params, state.first_moment, "adam_step first moment");
  require_matching(params, state.second_moment, "adam_step second moment");

  state.step += 1;
  const auto t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);

  ParamSet out = params;
  for (std::size_t i = 0; i < out.size(); ++i) {
    Tensor& p = out[i].value;
    Tensor& m = state.first_moment[i].value;
    Tensor& v = state.second_moment[i].value;
    const Tensor& g = grads[i].value;
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      if (lr == 0.0) continue;
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      p[j] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
  return {std::move(state), std::move(out)};
}

std::vector<Tensor> grad(const LossFunction& loss_fn, std::span<const Tensor> params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Tensor& p : params) vars.push_back(tape.leaf(p, true));
  Var loss = loss_fn(tape, vars);
  return tape.gradient(loss, vars);
}

ParamSet grad(const LossFunction& loss_fn, const ParamSet& params) {
  const auto tensors = params.tensors();
  auto grads = grad(loss_fn, tensors);
  ParamSet out;
  for (std::size_t i = 0; i < params.size(); ++i) out.add(params[i].name, std::move(grads[i]));
  return out;
}

namespace {

struct Probe {
  double value;
  std::uint64_t signature;
  bool at_kink;
};

Probe evaluate(const LossFunction& loss_fn, const std::vector<Tensor>& params) {
  Tape tape;
  tape.track_relu_kinks(true);
  std::vector<Var> vars;
  for (const Tensor& p : params) vars.push_back(tape.constant(p));
  Var loss = loss_fn(tape, vars);
  if (loss.value().size() != 1) throw ValidationError("finite_diff_check: loss is not scalar");
  const double v = loss.value()[0];
  if (!std::isfinite(v)) throw std::domain_error("finite_diff_check: loss is not finite");
  return {v, tape.relu_signature(), tape.relu_at_kink()};
}

}  // namespace

FiniteDiffReport finite_diff_check(const LossFunction& loss_fn, std::span<const Tensor> params, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw ValidationError("finite_diff_check: eps must lie in [1e-7, 1e-3], got " + std::to_string(eps));
  }
  FiniteDiffReport report;
  std::vector<Tensor> point(params.begin(), params.end());
  const Probe base = evaluate(loss_fn, point);
  report.base_point_at_kink = base.at_kink;
  const auto analytic = grad(loss_fn, params);

  for (std::size_t p = 0; p < point.size(); ++p) {
    for (std::size_t j = 0; j < point[p].size(); ++j) {
      const double orig = point[p][j];
      point[p][j] = orig + eps;
      const Probe plus = evaluate(loss_fn, point);
      point[p][j] = orig - eps;
      const Probe minus = evaluate(loss_fn, point);
      point[p][j] = orig;
      if (plus.signature != base.signature || minus.signature != base.signature) {
        ++report.skipped_at_kinks;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * eps);
      const double a = analytic[p][j];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      report.max_relative_error = std::max(report.max_relative_error, err);
      ++report.checked;
    }
  }
  return report;
}

}  // namespace metsk
