#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "resmtl/data.hpp"
#include "resmtl/eval.hpp"
#include "resmtl/gradcheck.hpp"
#include "resmtl/losses.hpp"
#include "resmtl/optim.hpp"
#include "resmtl/tasks.hpp"

namespace resmtl::cli {

inline constexpr int kRunConfigVersion = 1;

/// Loss choice in a config; `automatic` resolves by class count (see
/// default_loss_assignment).
struct LossChoice {
  bool automatic = true;
  LossKind kind = LossKind::label_smoothing;
};

/// Declarative description of a run. Every command reads the same document.
struct RunConfig {
  std::uint64_t seed = 42;
  std::string model_name = "multitask-net";

  struct Data {
    std::optional<std::filesystem::path> csv;
    std::optional<double> split_fraction;
    /// "auto" | "train" | "test" | "all" | "both"
    std::string eval_split = "auto";
  } data;

  NormalizationSpec normalization;
  SynthSpec synth;

  struct Network {
    std::size_t hidden = 512;
    double dropout_rate = 0.2;
    bool dropout_in_residual = false;
  } network;

  struct Train {
    std::size_t epochs = 200;
    std::size_t batch_size = 32;
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::optional<std::size_t> patience;
    double label_smoothing_alpha = 0.1;
    bool literal_label_smoothing = false;
    TaskWeights task_weights = TaskWeights::uniform(1.0);
    TaskArray<LossChoice> losses{};
  } train;

  struct Report {
    F1Averaging f1_averaging = F1Averaging::macro;
  } report;

  struct Gradcheck {
    std::vector<std::uint64_t> seeds{1, 2, 3};
    double step = 1e-5;
    double tolerance = 1e-4;
  } gradcheck;

  /// Throws ValidationError on any out-of-range field.
  void validate() const;

  /// Per-task loss kinds for a dataset with these class counts.
  TaskArray<LossKind> resolve_losses(const TaskArray<std::size_t>& num_classes) const;
  LossSettings loss_settings(const TaskArray<std::size_t>& num_classes) const;
  TrainConfig train_config() const;
  GradcheckOptions gradcheck_options() const;
};

/// Parses a config document. Missing fields take defaults; unknown keys and
/// a wrong `version` are rejected.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);

/// The effective config, with every default spelled out.
nlohmann::json to_json(const RunConfig& cfg);

}  // namespace resmtl::cli
