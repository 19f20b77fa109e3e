#include "resmtl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "resmtl/error.hpp"

namespace resmtl {

namespace {

bool is_valid(MaskView mask, std::size_t i) { return mask.empty() || mask[i] != 0; }

void require_mask(MaskView mask, std::size_t rows, const char* op) {
  if (!mask.empty() && mask.size() != rows) {
    throw ShapeError(std::string(op) + ": mask has " + std::to_string(mask.size()) +
                     " entries for " + std::to_string(rows) + " samples");
  }
}

std::size_t count_valid(MaskView mask, std::size_t rows) {
  if (mask.empty()) return rows;
  std::size_t n = 0;
  for (auto m : mask) n += m != 0;
  return n;
}

}  // namespace

void LabelSmoothingConfig::validate() const {
  if (!(alpha >= 0.0 && alpha < 1.0)) {
    throw ValidationError("label smoothing: alpha must lie in [0, 1), got " +
                          std::to_string(alpha));
  }
  if (num_classes < 2) throw ValidationError("label smoothing: need at least 2 classes");
}

LossResult label_smoothing_ce(const Matrix& logits, std::span<const std::size_t> targets,
                              const LabelSmoothingConfig& cfg, MaskView mask) {
  cfg.validate();
  const std::size_t n = logits.rows();
  const std::size_t c = cfg.num_classes;
  if (logits.cols() != c) {
    throw ShapeError("label_smoothing_ce: logits " + logits.shape_string() + " for " +
                     std::to_string(c) + " classes");
  }
  if (targets.size() != n) throw ShapeError("label_smoothing_ce: target count != batch rows");
  require_mask(mask, n, "label_smoothing_ce");

  LossResult r;
  r.grad = Matrix(n, c);
  r.valid = count_valid(mask, n);
  if (r.valid == 0) return r;

  const double inv_n = 1.0 / static_cast<double>(r.valid);
  const double off = cfg.alpha / static_cast<double>(c);
  const double on = 1.0 - cfg.alpha + off;
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_valid(mask, i)) continue;
    const std::size_t t = targets[i];
    if (t >= c) {
      throw ValidationError("label_smoothing_ce: target " + std::to_string(t) +
                            " out of range for " + std::to_string(c) + " classes");
    }
    auto z = logits.row(i);
    double m = z[0];
    for (double v : z) m = std::max(m, v);
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - m);
    const double log_sum = m + std::log(sum);

    auto g = r.grad.row(i);
    if (cfg.literal_printed_form) {
      r.loss += (1.0 - cfg.alpha) * (log_sum - z[t]) - cfg.alpha;
      for (std::size_t k = 0; k < c; ++k) {
        const double p = std::exp(z[k] - log_sum);
        g[k] = (1.0 - cfg.alpha) * (p - (k == t ? 1.0 : 0.0)) * inv_n;
      }
      continue;
    }
    for (std::size_t k = 0; k < c; ++k) {
      const double log_p = z[k] - log_sum;
      const double q = k == t ? on : off;
      r.loss -= q * log_p;
      g[k] = (std::exp(log_p) - q) * inv_n;
    }
  }
  r.loss *= inv_n;
  return r;
}

LossResult mse(const Matrix& pred, const Matrix& target, MaskView mask) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw ShapeError("mse: shape mismatch " + pred.shape_string() + " vs " +
                     target.shape_string());
  }
  const std::size_t n = pred.rows();
  require_mask(mask, n, "mse");
  LossResult r;
  r.grad = Matrix(n, pred.cols());
  r.valid = count_valid(mask, n);
  if (r.valid == 0) return r;
  const double inv_n = 1.0 / static_cast<double>(r.valid);
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_valid(mask, i)) continue;
    for (std::size_t j = 0; j < pred.cols(); ++j) {
      const double d = pred(i, j) - target(i, j);
      r.loss += d * d;
      r.grad(i, j) = 2.0 * d * inv_n;
    }
  }
  r.loss *= inv_n;
  return r;
}

LossResult bce_with_logits(const Matrix& logits, const Matrix& targets, MaskView mask) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols()) {
    throw ShapeError("bce_with_logits: shape mismatch " + logits.shape_string() + " vs " +
                     targets.shape_string());
  }
  const std::size_t n = logits.rows();
  require_mask(mask, n, "bce_with_logits");
  LossResult r;
  r.grad = Matrix(n, logits.cols());
  r.valid = count_valid(mask, n);
  if (r.valid == 0) return r;
  const double inv_n = 1.0 / static_cast<double>(r.valid);
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_valid(mask, i)) continue;
    for (std::size_t j = 0; j < logits.cols(); ++j) {
      const double z = logits(i, j);
      const double t = targets(i, j);
      if (t != 0.0 && t != 1.0) {
        throw ValidationError("bce_with_logits: target must be 0 or 1, got " + std::to_string(t));
      }
      r.loss += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
      const double sigma = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      r.grad(i, j) = (sigma - t) * inv_n;
    }
  }
  r.loss *= inv_n;
  return r;
}

TaskWeights TaskWeights::uniform(double value) {
  TaskWeights w;
  for (double& l : w.lambda) l = value;
  return w;
}

void TaskWeights::validate() const {
  for (Task t : kAllTasks) {
    if (!(lambda[t] >= 0.0) || !std::isfinite(lambda[t])) {
      throw ValidationError("task weight for '" + std::string(task_name(t)) +
                            "' must be finite and >= 0");
    }
  }
}

double total_loss(const TaskLossBundle& bundle, const TaskWeights& weights) {
  double total = 0.0;
  for (Task t : kAllTasks) total += weights.lambda[t] * bundle.loss[t];
  return total;
}

TaskArray<Matrix> weighted_head_grads(const TaskLossBundle& bundle, const TaskWeights& weights) {
  TaskArray<Matrix> out;
  for (Task t : kAllTasks) out[t] = scale(bundle.grad[t], weights.lambda[t]);
  return out;
}

void LossSettings::validate() const {
  if (!(alpha >= 0.0 && alpha < 1.0)) {
    throw ValidationError("label smoothing alpha must lie in [0, 1), got " + std::to_string(alpha));
  }
  for (Task t : kAllTasks) {
    const std::string name(task_name(t));
    const LossKind k = assignment[t];
    if (!is_classification(t)) {
      if (k != LossKind::mse) throw ValidationError("task '" + name + "' is regression; use mse");
      continue;
    }
    if (num_classes[t] < 2) throw ValidationError("task '" + name + "' needs >= 2 classes");
    if (k == LossKind::bce_with_logits && num_classes[t] != 2) {
      throw ValidationError("task '" + name + "' uses bce_with_logits but has " +
                            std::to_string(num_classes[t]) + " classes");
    }
  }
}

TaskArray<LossKind> default_loss_assignment(const TaskArray<std::size_t>& num_classes) {
  TaskArray<LossKind> a;
  for (Task t : kAllTasks) a[t] = is_classification(t) ? LossKind::label_smoothing : LossKind::mse;
  if (num_classes[Task::state] == 2) a[Task::state] = LossKind::bce_with_logits;
  return a;
}

double class_to_unit(std::size_t cls, std::size_t num_classes) noexcept {
  return num_classes > 1 ? static_cast<double>(cls) / static_cast<double>(num_classes - 1) : 0.0;
}

TaskLossBundle compute_task_losses(const TaskArray<Matrix>& outputs, const BatchTargets& targets,
                                   const LossSettings& settings) {
  TaskLossBundle b;
  for (Task t : kAllTasks) {
    const Matrix& out = outputs[t];
    const TaskTargets& tt = targets[t];
    const std::size_t n = out.rows();
    if (tt.mask.size() != n) {
      throw ShapeError("task '" + std::string(task_name(t)) + "': " +
                       std::to_string(tt.mask.size()) + " targets for " + std::to_string(n) +
                       " outputs");
    }
    LossResult r;
    switch (settings.assignment[t]) {
      case LossKind::label_smoothing: {
        LabelSmoothingConfig cfg{settings.alpha, settings.num_classes[t],
                                 settings.literal_label_smoothing};
        r = label_smoothing_ce(out, tt.classes, cfg, tt.mask);
        break;
      }
      case LossKind::bce_with_logits: {
        Matrix target(n, 1);
        for (std::size_t i = 0; i < n; ++i)
          if (tt.mask[i]) target(i, 0) = static_cast<double>(tt.classes[i]);
        r = bce_with_logits(out, target, tt.mask);
        break;
      }
      case LossKind::mse: {
        Matrix target(n, 1);
        for (std::size_t i = 0; i < n; ++i) {
          if (!tt.mask[i]) continue;
          target(i, 0) = is_classification(t)
                             ? class_to_unit(tt.classes[i], settings.num_classes[t])
                             : tt.values[i];
        }
        r = mse(out, target, tt.mask);
        break;
      }
    }
    b.loss[t] = r.loss;
    b.grad[t] = std::move(r.grad);
    b.valid[t] = r.valid;
  }
  return b;
}

}  // namespace resmtl
