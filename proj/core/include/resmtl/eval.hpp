#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "resmtl/data.hpp"
#include "resmtl/losses.hpp"
#include "resmtl/network.hpp"

namespace resmtl {

// ---------------------------------------------------------------- scalar metrics

double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> truth);
/// Unweighted mean of per-class F1; a class with P + R = 0 scores 0.
double macro_f1(std::span<const std::size_t> preds, std::span<const std::size_t> truth,
                std::size_t num_classes);
/// Pooled F1 over all classes (equals accuracy for single-label data).
double micro_f1(std::span<const std::size_t> preds, std::span<const std::size_t> truth,
                std::size_t num_classes);
/// Masked mean squared error; throws when no sample is valid.
double mse_metric(std::span<const double> preds, std::span<const double> truth, MaskView mask = {});
double mae_metric(std::span<const double> preds, std::span<const double> truth, MaskView mask = {});

enum class F1Averaging { macro, micro };
std::string_view f1_averaging_name(F1Averaging a) noexcept;
std::optional<F1Averaging> parse_f1_averaging(std::string_view s) noexcept;

// ---------------------------------------------------------------- sufficient statistics

/// Confusion counts; rows are truth, columns are predictions. Mergeable.
struct ClassificationStats {
  std::size_t num_classes = 0;
  std::vector<std::size_t> counts;  // num_classes²

  ClassificationStats() = default;
  explicit ClassificationStats(std::size_t classes)
      : num_classes(classes), counts(classes * classes, 0) {}
  void add(std::size_t truth, std::size_t pred);
  void merge(const ClassificationStats& other);
  std::size_t total() const;
  std::size_t at(std::size_t truth, std::size_t pred) const {
    return counts[truth * num_classes + pred];
  }
};

/// Error sums in normalized units. Mergeable.
struct RegressionStats {
  double sum_sq = 0.0;
  double sum_abs = 0.0;
  std::size_t count = 0;

  void add(double pred, double truth);
  void merge(const RegressionStats& other);
};

// ---------------------------------------------------------------- reports

struct ClassificationReport {
  Task task = Task::subtlety;
  std::size_t samples = 0;
  double accuracy = 0.0;
  double f1 = 0.0;
  F1Averaging averaging = F1Averaging::macro;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> class_f1;
  std::vector<std::vector<std::size_t>> confusion;

  friend bool operator==(const ClassificationReport&, const ClassificationReport&) = default;
};

struct RegressionReport {
  Task task = Task::x;
  std::size_t samples = 0;
  double mse = 0.0;  // normalized units
  double mae = 0.0;
  double mse_raw = 0.0;  // pixels² / mm²
  double mae_raw = 0.0;
  double divisor = 1.0;

  friend bool operator==(const RegressionReport&, const RegressionReport&) = default;
};

ClassificationReport make_classification_report(Task task, const ClassificationStats& stats,
                                                F1Averaging averaging);
/// `divisor` converts normalized errors to raw units (MSE scales by divisor²).
RegressionReport make_regression_report(Task task, const RegressionStats& stats, double divisor);

/// Per-task reports; tasks without any valid sample are absent.
struct TaskReports {
  std::vector<ClassificationReport> classification;
  std::vector<RegressionReport> regression;

  const ClassificationReport* find(Task t) const;
  const RegressionReport* find_regression(Task t) const;

  friend bool operator==(const TaskReports&, const TaskReports&) = default;
};

enum class SizeBucket : std::size_t { under_10, from_10_to_20, from_20_to_30, from_30 };
inline constexpr std::size_t kSizeBucketCount = 4;
inline constexpr std::array<SizeBucket, kSizeBucketCount> kSizeBuckets = {
    SizeBucket::under_10, SizeBucket::from_10_to_20, SizeBucket::from_20_to_30,
    SizeBucket::from_30};

/// Half-open: <10, [10,20), [20,30), >=30 mm.
SizeBucket size_bucket(double size_mm) noexcept;
std::string_view size_bucket_label(SizeBucket b) noexcept;

struct SizeStratifiedReport {
  std::array<std::size_t, kSizeBucketCount> counts{};
  /// Empty buckets hold no report.
  std::array<std::optional<TaskReports>, kSizeBucketCount> buckets;

  friend bool operator==(const SizeStratifiedReport&, const SizeStratifiedReport&) = default;
};

// ---------------------------------------------------------------- predictions

/// Decoded head outputs for every record of a dataset.
struct Predictions {
  TaskArray<std::vector<std::size_t>> classes;  // classification tasks
  TaskArray<Matrix> probabilities;              // N x C per classification task
  TaskArray<std::vector<double>> values;        // normalized, regression tasks

  std::size_t size() const { return classes[Task::state].size(); }
};

/// Eval-mode forward over `ds` and decoding according to each task's loss:
/// softmax for label smoothing, sigmoid for BCE, rounding of the unit-scaled
/// class index for MSE.
Predictions predict(const MultiTaskNet& net, const Dataset& ds,
                    const TaskArray<LossKind>& assignment, std::size_t chunk = 256);

/// Metrics over the records listed in `indices` (all records when empty).
TaskReports evaluate(const Dataset& ds, const Predictions& preds, F1Averaging averaging,
                     std::span<const std::size_t> indices = {});

/// Buckets the records with a known size and evaluates each bucket.
SizeStratifiedReport stratify_by_size(const Dataset& ds, const Predictions& preds,
                                      F1Averaging averaging);

struct EvalReport {
  std::string model_name = "multitask-net";
  std::string split = "all";
  F1Averaging averaging = F1Averaging::macro;
  TaskReports global;
  std::optional<SizeStratifiedReport> stratified;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Full evaluation; the stratified part is present only when sizes exist.
EvalReport evaluate_report(const Dataset& ds, const Predictions& preds, F1Averaging averaging,
                           std::string model_name, std::string split);

// ---------------------------------------------------------------- rendering

inline constexpr int kReportSchemaVersion = 1;

enum class ReportFormat { json, text };

nlohmann::json report_to_json(std::span<const EvalReport> reports);
std::vector<EvalReport> reports_from_json(const nlohmann::json& doc);
/// Plain-text tables laid out like the classic classification / regression /
/// size-stratified comparison tables.
std::string render_text(std::span<const EvalReport> reports);
std::string emit_report(std::span<const EvalReport> reports, ReportFormat format);

}  // namespace resmtl
