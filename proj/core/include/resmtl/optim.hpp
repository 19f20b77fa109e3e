#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "resmtl/data.hpp"
#include "resmtl/losses.hpp"
#include "resmtl/network.hpp"

namespace resmtl {

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t t = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;

  void validate() const;
};

/// One bias-corrected Adam update. Moment buffers are created on the first
/// call and must keep matching `params` afterwards.
void adam_step(AdamState& state, std::span<const ParamRef> params, std::span<const Matrix> grads);

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  std::uint64_t seed = 42;
  TaskWeights weights = TaskWeights::uniform(1.0);
  LossSettings losses;
  AdamState adam;
  /// Early stopping on held-out total loss; needs a validation set.
  std::optional<std::size_t> patience;
  std::optional<std::filesystem::path> trace_path;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  /// Weighted total and per-task losses over the whole training set, eval mode,
  /// after the epoch's last update.
  double total_loss = 0.0;
  TaskArray<double> task_loss{};
  /// Mean of the train-mode minibatch totals seen during the epoch.
  double batch_loss = 0.0;
  std::optional<double> val_total_loss;
};

struct TrainTrace {
  std::vector<EpochRecord> epochs;
  std::size_t optimizer_steps = 0;
  bool stopped_early = false;
  std::size_t best_epoch = 0;
};

/// Mean task losses over a whole dataset in eval mode.
TaskLossBundle dataset_losses(const MultiTaskNet& net, const Dataset& ds,
                              const LossSettings& settings, std::size_t chunk = 256);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Minibatch training: per epoch, shuffle with the seeded generator, forward
/// in train mode, weight the task losses, backpropagate and take an Adam step.
/// Throws NumericError naming the task and epoch if a loss becomes non-finite.
TrainTrace train(MultiTaskNet& net, const Dataset& train_set, const TrainConfig& cfg,
                 const Dataset* validation = nullptr, const EpochCallback& on_epoch = {});

void write_trace_jsonl(std::ostream& out, const TrainTrace& trace);
void save_trace_jsonl(const std::filesystem::path& path, const TrainTrace& trace);

}  // namespace resmtl
