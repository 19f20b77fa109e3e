#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "resmtl/matrix.hpp"
#include "resmtl/tasks.hpp"

namespace resmtl {

/// Per-sample validity flags: nonzero = target present. An empty span means
/// every sample is valid.
using MaskView = std::span<const std::uint8_t>;

struct LabelSmoothingConfig {
  double alpha = 0.1;
  std::size_t num_classes = 2;
  /// Use the loss exactly as commonly misprinted, -Σ[(1-α)·y·log p + α/C],
  /// whose smoothing term is a constant. Kept for comparison runs only.
  bool literal_printed_form = false;

  void validate() const;
};

/// Loss value, gradient with respect to the loss input, and the number of
/// samples that contributed.
struct LossResult {
  double loss = 0.0;
  Matrix grad;
  std::size_t valid = 0;
};

/// Cross-entropy of softmax(logits) against q = (1-α)·onehot + α/C, averaged
/// over valid samples. Gradient is (p - q) / N.
LossResult label_smoothing_ce(const Matrix& logits, std::span<const std::size_t> targets,
                              const LabelSmoothingConfig& cfg, MaskView mask = {});

/// Mean squared error over valid rows. N = 0 gives loss 0 and a zero gradient.
LossResult mse(const Matrix& pred, const Matrix& target, MaskView mask = {});

/// Stable binary cross-entropy on logits: max(z,0) - z·t + log(1 + e^{-|z|}).
LossResult bce_with_logits(const Matrix& logits, const Matrix& targets, MaskView mask = {});

/// λ coefficients of the weighted multi-task sum.
struct TaskWeights {
  TaskArray<double> lambda;

  static TaskWeights uniform(double value = 1.0);
  void validate() const;
};

struct TaskLossBundle {
  TaskArray<double> loss{};
  TaskArray<Matrix> grad{};
  TaskArray<std::size_t> valid{};
};

/// Σ_k λ_k · L_k.
double total_loss(const TaskLossBundle& bundle, const TaskWeights& weights);

/// Head gradients scaled by their λ, ready for backward().
TaskArray<Matrix> weighted_head_grads(const TaskLossBundle& bundle, const TaskWeights& weights);

/// Targets for one task over one batch. Classification tasks fill `classes`,
/// regression tasks fill `values`; `mask` always has one entry per sample.
struct TaskTargets {
  std::vector<std::size_t> classes;
  std::vector<double> values;
  std::vector<std::uint8_t> mask;
};
using BatchTargets = TaskArray<TaskTargets>;

struct LossSettings {
  TaskArray<LossKind> assignment{};
  TaskArray<std::size_t> num_classes{};
  double alpha = 0.1;
  bool literal_label_smoothing = false;

  void validate() const;
};

/// Label smoothing for subtlety, z and diagnosis; BCE for a binary state
/// (label smoothing otherwise); MSE for x, y and size.
TaskArray<LossKind> default_loss_assignment(const TaskArray<std::size_t>& num_classes);

/// Evaluates every task loss on the head outputs of one batch.
TaskLossBundle compute_task_losses(const TaskArray<Matrix>& outputs, const BatchTargets& targets,
                                   const LossSettings& settings);

/// Class target encoded as a scalar in [0, 1] for a classification task
/// trained with MSE.
double class_to_unit(std::size_t cls, std::size_t num_classes) noexcept;

}  // namespace resmtl
