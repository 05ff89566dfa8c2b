#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "rng.hpp"

namespace uvf {

GradReport gradcheck(const std::string& op_name,
                     const std::function<Var(const std::vector<Var>&)>& fn,
                     const std::vector<Tensor>& inputs, double eps,
                     int64_t max_coords_per_input, uint64_t sample_seed) {
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(make_leaf(t, true));

  Var loss = fn(leaves);
  if (loss->value.numel() != 1)
    throw ContractError("gradcheck: function must return a scalar");
  {
    // Determinism probe: re-evaluate without grad and compare bit-exactly.
    NoGradGuard ng;
    std::vector<Var> again;
    for (const auto& t : inputs) again.push_back(make_leaf(t, false));
    Var y2 = fn(again);
    if (y2->value[0] != loss->value[0])
      throw ContractError("gradcheck: non-deterministic function detected (" +
                          std::to_string(loss->value[0]) + " vs " +
                          std::to_string(y2->value[0]) + ")");
  }
  backward(loss);

  auto eval = [&](const std::vector<Tensor>& pts) {
    NoGradGuard ng;
    std::vector<Var> vs;
    for (const auto& t : pts) vs.push_back(make_leaf(t, false));
    return fn(vs)->value[0];
  };

  GradReport rep;
  rep.op_name = op_name;
  Rng rng(sample_seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<Tensor> work = inputs;
  for (size_t q = 0; q < inputs.size(); ++q) {
    int64_t n = inputs[q].numel();
    std::vector<int64_t> coords;
    if (max_coords_per_input > 0 && n > max_coords_per_input)
      coords = rng.sample_without_replacement(n, max_coords_per_input);
    else {
      coords.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    }
    for (int64_t i : coords) {
      double orig = work[q][i];
      work[q][i] = orig + eps;
      double fp = eval(work);
      work[q][i] = orig - eps;
      double fm = eval(work);
      work[q][i] = orig;
      double numeric = (fp - fm) / (2.0 * eps);
      double analytic = leaves[q]->grad_ready ? leaves[q]->grad[i] : 0.0;
      double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
      double rel = std::abs(analytic - numeric) / denom;
      ++rep.coords_checked;
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst_index = i;
        rep.worst_input = static_cast<int>(q);
        rep.analytic = analytic;
        rep.numeric = numeric;
      }
    }
  }
  return rep;
}

GradReport gradcheck_leaves(const std::string& op_name, const std::function<Var()>& loss_fn,
                            const std::vector<Var>& leaves, double eps,
                            int64_t max_coords_per_input, uint64_t sample_seed) {
  Var loss = loss_fn();
  if (loss->value.numel() != 1)
    throw ContractError("gradcheck_leaves: function must return a scalar");
  {
    NoGradGuard ng;
    Var y2 = loss_fn();
    if (y2->value[0] != loss->value[0])
      throw ContractError("gradcheck_leaves: non-deterministic function detected");
  }
  for (const Var& l : leaves) l->zero_grad();
  backward(loss);
  std::vector<Tensor> analytic;
  for (const Var& l : leaves)
    analytic.push_back(l->grad_ready ? l->grad : Tensor(l->value.shape(), 0.0));

  auto eval = [&]() {
    NoGradGuard ng;
    return loss_fn()->value[0];
  };

  GradReport rep;
  rep.op_name = op_name;
  Rng rng(sample_seed ^ 0x9e3779b97f4a7c15ull);
  for (size_t q = 0; q < leaves.size(); ++q) {
    Tensor& val = leaves[q]->value;
    int64_t n = val.numel();
    std::vector<int64_t> coords;
    if (max_coords_per_input > 0 && n > max_coords_per_input)
      coords = rng.sample_without_replacement(n, max_coords_per_input);
    else {
      coords.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    }
    for (int64_t i : coords) {
      double orig = val[i];
      val[i] = orig + eps;
      double fp = eval();
      val[i] = orig - eps;
      double fm = eval();
      val[i] = orig;
      double numeric = (fp - fm) / (2.0 * eps);
      double a = analytic[q][i];
      double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      double rel = std::abs(a - numeric) / denom;
      ++rep.coords_checked;
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst_index = i;
        rep.worst_input = static_cast<int>(q);
        rep.analytic = a;
        rep.numeric = numeric;
      }
    }
  }
  return rep;
}

}  // namespace uvf
