#include "acenet/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "acenet/error.hpp"

namespace acenet {

double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / scale;
}

namespace {

void check_eps(double eps) { require(eps >= 1e-7 && eps <= 1e-3, "grad_check: eps must lie in [1e-7, 1e-3]"); }

double evaluate(const ScalarFunction& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  return f(tape, vars).value().item();
}

}  // namespace

double grad_check(const ScalarFunction& f, const std::vector<Tensor>& inputs, double eps) {
  check_eps(eps);
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.leaf(t));
    Var out = f(tape, vars);
    Gradients grads = tape.backward(out);
    for (const auto& v : vars) analytic.push_back(grads.has(v) ? grads.of(v) : Tensor(v.shape(), 0.0));
  }

  double worst = 0.0;
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    for (std::size_t i = 0; i < probe[k].size(); ++i) {
      const double orig = probe[k][i];
      probe[k][i] = orig + eps;
      const double up = evaluate(f, probe);
      probe[k][i] = orig - eps;
      const double down = evaluate(f, probe);
      probe[k][i] = orig;
      worst = std::max(worst, relative_error(analytic[k][i], (up - down) / (2.0 * eps)));
    }
  }
  return worst;
}

ParameterCheckResult grad_check_parameters(const std::function<Var(Tape&)>& loss,
                                           std::span<const NamedTensor> params,
                                           const ParameterCheckOptions& options) {
  check_eps(options.eps);
  std::vector<Tensor> analytic;
  std::uint64_t base_signature = 0;
  {
    Tape tape;
    for (const auto& p : params) tape.parameter(p.tensor);
    Var out = loss(tape);
    base_signature = tape.branch_signature();
    Gradients grads = tape.backward(out);
    for (const auto& p : params) {
      const Tensor* g = grads.of_parameter(p.tensor);
      analytic.push_back(g ? *g : Tensor(p.tensor->shape(), 0.0));
    }
  }

  struct Eval {
    double value;
    bool same_branch;
  };
  const auto eval = [&] {
    Tape tape;
    const double v = loss(tape).value().item();
    return Eval{v, tape.branch_signature() == base_signature};
  };

  std::mt19937_64 rng(options.seed);
  ParameterCheckResult result;
  for (const auto& a : analytic)
    for (std::size_t i = 0; i < a.size(); ++i) result.max_abs_gradient = std::max(result.max_abs_gradient, std::abs(a[i]));
  const double floor = std::max(1e-8, options.gradient_floor * result.max_abs_gradient);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k].tensor;
    const auto& a = analytic[k];
    // Candidate order: the largest analytic gradient first, then random entries.
    // Small tensors are walked exhaustively.
    std::vector<std::size_t> order(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) order[i] = i;
    if (p.size() > options.entries_per_tensor) {
      std::shuffle(order.begin(), order.end(), rng);
      const auto best = std::max_element(order.begin(), order.end(),
                                         [&](std::size_t x, std::size_t y) { return std::abs(a[x]) < std::abs(a[y]); });
      std::iter_swap(order.begin(), best);
    }
    std::size_t checked = 0;
    for (std::size_t i : order) {
      if (checked == options.entries_per_tensor) break;
      const double orig = p[i];
      p[i] = orig + options.eps;
      const Eval up = eval();
      p[i] = orig - options.eps;
      const Eval down = eval();
      p[i] = orig;
      if (!up.same_branch || !down.same_branch) {
        // A relu, maxpool or maximum decision flips inside [x-eps, x+eps]:
        // the loss is not differentiable there, so probe another entry.
        ++result.entries_skipped;
        continue;
      }
      const double numeric = (up.value - down.value) / (2.0 * options.eps);
      const double err = std::abs(a[i] - numeric) / std::max({std::abs(a[i]), std::abs(numeric), floor});
      ++checked;
      ++result.entries_checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_tensor = params[k].name + "[" + std::to_string(i) + "]";
      }
    }
    if (checked == 0 && p.size() > 0) result.tensors_unchecked.push_back(params[k].name);
  }
  return result;
}

}  // namespace acenet
