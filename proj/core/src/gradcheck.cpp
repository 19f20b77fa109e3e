#include "resmtl/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "resmtl/error.hpp"
#include "resmtl/rng.hpp"

namespace resmtl {

namespace {

struct Problem {
  Matrix inputs;
  BatchTargets targets;
  LossSettings settings;
  TaskWeights weights;
};

Problem make_problem(const GradcheckOptions& o, Rng& rng) {
  Problem p;
  p.inputs = Matrix(o.batch, o.input_dim);
  for (double& v : p.inputs.values()) v = rng.normal();

  for (Task t : kAllTasks) {
    p.settings.num_classes[t] = is_classification(t) ? o.num_classes : 0;
  }
  p.settings.num_classes[Task::state] = 2;
  p.settings.assignment = default_loss_assignment(p.settings.num_classes);
  p.settings.alpha = o.alpha;

  for (Task t : kAllTasks) {
    auto& tt = p.targets[t];
    tt.mask.assign(o.batch, 1);
    if (is_classification(t)) {
      tt.classes.resize(o.batch);
      for (auto& c : tt.classes) c = rng.uniform_index(p.settings.num_classes[t]);
    } else {
      tt.values.resize(o.batch);
      for (double& v : tt.values) v = rng.uniform01();
    }
    // One missing target per optional task.
    if (t != Task::state) tt.mask[rng.uniform_index(o.batch)] = 0;
    p.weights.lambda[t] = 0.5 + rng.uniform01();
  }
  return p;
}

double objective(const MultiTaskNet& net, const Problem& p) {
  auto fwd = forward(net, p.inputs);
  return total_loss(compute_task_losses(fwd.outputs, p.targets, p.settings), p.weights);
}

}  // namespace

GradcheckResult run_gradcheck(const GradcheckOptions& o) {
  if (o.batch == 0 || o.input_dim == 0 || o.hidden == 0 || o.num_classes < 2) {
    throw ValidationError("gradcheck: invalid toy problem dimensions");
  }
  GradcheckResult result;
  for (std::uint64_t seed : o.seeds) {
    Rng rng(seed);
    Problem prob = make_problem(o, rng);
    MultiTaskNet net(make_net_config(o.input_dim, o.hidden, 0.0, prob.settings.num_classes,
                                     prob.settings.assignment),
                     rng);
    // Non-zero biases so the bias paths are exercised away from symmetry.
    for (auto& p : net.parameters())
      if (p.name.ends_with(".bias"))
        for (double& v : p.value->values()) v = rng.normal(0.0, 0.1);

    auto fwd = forward(net, prob.inputs);
    auto bundle = compute_task_losses(fwd.outputs, prob.targets, prob.settings);
    auto grads = backward(net, fwd.cache, weighted_head_grads(bundle, prob.weights));
    if (o.corrupt_backward) scale_in_place(grads.values[2], 1.5);

    auto params = net.parameters();
    if (result.per_layer.empty())
      for (const auto& p : params) result.per_layer.push_back({p.name, 0.0, 0});

    for (std::size_t k = 0; k < params.size(); ++k) {
      auto w = params[k].value->values();
      auto analytic = grads.values[k].values();
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double saved = w[j];
        w[j] = saved + o.step;
        const double plus = objective(net, prob);
        w[j] = saved - o.step;
        const double minus = objective(net, prob);
        w[j] = saved;
        const double numeric = (plus - minus) / (2.0 * o.step);

        const double scale = std::max({std::abs(analytic[j]), std::abs(numeric), o.abs_floor});
        const double err = std::abs(analytic[j] - numeric) / scale;
        auto& layer = result.per_layer[k];
        layer.max_error = std::max(layer.max_error, err);
        ++layer.entries;
        if (err > result.max_error) {
          result.max_error = err;
          result.worst_param = params[k].name;
          result.worst_index = j;
          result.worst_seed = seed;
        }
      }
    }
  }
  result.passed = result.max_error <= o.tolerance;
  return result;
}

}  // namespace resmtl
