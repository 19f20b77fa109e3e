#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "resmtl/losses.hpp"
#include "resmtl/matrix.hpp"
#include "resmtl/tasks.hpp"

namespace resmtl {

/// One example: a fused feature vector plus the seven raw targets. Missing
/// targets are empty optionals and are masked out of losses and metrics.
struct SampleRecord {
  std::string id;
  std::vector<double> features;
  std::optional<std::size_t> subtlety;
  std::optional<std::size_t> state;  // required unless CsvOptions::require_state is off
  std::optional<std::size_t> z;
  std::optional<std::size_t> diagnosis;
  std::optional<double> x_px;
  std::optional<double> y_px;
  std::optional<double> size_mm;

  // Filled by normalize_targets().
  std::optional<double> x_norm;
  std::optional<double> y_norm;
  std::optional<double> size_norm;

  /// Class index for a classification task.
  std::optional<std::size_t> label(Task t) const;
  /// Raw (pixel / millimetre) value for a regression task.
  std::optional<double> raw_target(Task t) const;
  /// Value in [0, 1] units for a regression task; empty before normalization.
  std::optional<double> normalized_target(Task t) const;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

/// Raw label strings per classification task. Index = position in the list.
struct LabelVocab {
  TaskArray<std::vector<std::string>> labels;

  std::size_t num_classes(Task t) const { return labels[t].size(); }
  TaskArray<std::size_t> class_counts() const;
  std::optional<std::size_t> find(Task t, std::string_view raw) const;
  const std::string& name(Task t, std::size_t index) const { return labels[t].at(index); }

  /// Sorted unique labels; numeric order when every label parses as a number,
  /// lexicographic otherwise.
  static std::vector<std::string> sorted_labels(std::vector<std::string> raw);

  friend bool operator==(const LabelVocab&, const LabelVocab&) = default;
};

void to_json(nlohmann::json& j, const LabelVocab& v);
void from_json(const nlohmann::json& j, LabelVocab& v);

/// Divisors that project x, y and size onto [0, 1].
struct NormalizationSpec {
  double image_width_px = 2048.0;
  double image_height_px = 2048.0;
  /// Unset means "use the largest size in the dataset".
  std::optional<double> size_divisor_mm;

  void validate() const;
  /// Divisor for a regression task; size requires a resolved divisor.
  double divisor(Task t) const;
  double normalize(Task t, double raw) const { return raw / divisor(t); }
  double denormalize(Task t, double unit) const { return unit * divisor(t); }

  friend bool operator==(const NormalizationSpec&, const NormalizationSpec&) = default;
};

void to_json(nlohmann::json& j, const NormalizationSpec& n);
void from_json(const nlohmann::json& j, NormalizationSpec& n);

struct Dataset {
  std::vector<SampleRecord> records;
  LabelVocab vocab;
  NormalizationSpec norm;
  std::size_t feature_dim = 0;
  bool normalized = false;
  std::vector<std::string> warnings;

  std::size_t size() const noexcept { return records.size(); }
  bool empty() const noexcept { return records.empty(); }
  /// Number of records carrying a target for `t`.
  std::size_t valid_count(Task t) const;
};

struct CsvOptions {
  /// When set, labels must come from this vocabulary (evaluation against a
  /// trained checkpoint); otherwise the vocabulary is built from the file.
  std::optional<LabelVocab> vocab;
  /// When set, the file's feature width must equal this.
  std::optional<std::size_t> expected_feature_dim;
  NormalizationSpec norm;
  /// Prediction inputs may leave every label empty, including state.
  bool require_state = true;
};

/// Reads the feature CSV:
///   id,f0,...,f{D-1},subtlety,state,z,diagnosis,x_px,y_px,size_mm
/// Lines starting with '#' before the header are comments. Empty cells are
/// missing values; `state` is required.
Dataset load_csv(const std::filesystem::path& path, const CsvOptions& options = {});
Dataset read_csv(std::istream& in, const CsvOptions& options = {});

/// Writes raw values in the same format. Doubles use the shortest decimal
/// form that parses back to the identical bits.
void save_csv(const std::filesystem::path& path, const Dataset& ds);
void write_csv(std::ostream& out, const Dataset& ds);

/// Resolves the size divisor if unset and fills the normalized targets.
/// Values landing outside [0, 1] are kept and counted as warnings.
Dataset normalize_targets(Dataset ds);

/// Seeded shuffle then partition; round(fraction * N) records go to train.
std::pair<Dataset, Dataset> split(const Dataset& ds, double fraction, std::uint64_t seed);

/// Recipe for the synthetic surrogate dataset.
///
/// Each record draws one class per classification task from that task's
/// priors and three latents u_x, u_y, u_size ~ U[0, 1]. A signal vector s
/// concatenates a scaled one-hot block per task with (u - 0.5)·regression_scale.
/// Features are s·R + noise·ε, where R has orthonormal rows drawn once from
/// the seed, so every target is a linear function of noiseless features.
/// Targets: x_px = u_x·width, y_px = u_y·height,
/// size_mm = size_min + u_size·(size_max - size_min).
///
/// A `non_nodule_fraction` of records are "no nodule": state class 0 and no
/// subtlety/z/diagnosis/x/y/size; nodule records draw state from classes
/// 1..C-1. `small_nodule_noise` adds latent noise that shrinks linearly from
/// the smallest to the largest size. Class labels are "1".."C".
struct SynthSpec {
  std::size_t samples = 64;
  std::size_t feature_dim = 32;
  TaskArray<std::size_t> num_classes{};  // defaults: subtlety 5, state 2, z 3, diagnosis 2
  /// Optional per-task class priors; empty = uniform.
  TaskArray<std::vector<double>> priors{};
  double noise = 0.1;
  double class_separation = 3.0;
  double regression_scale = 3.0;
  double non_nodule_fraction = 0.0;
  double small_nodule_noise = 0.0;
  double size_min_mm = 3.0;
  double size_max_mm = 60.0;
  NormalizationSpec norm;

  SynthSpec();
  std::size_t signal_dim() const;
  void validate() const;
};

Dataset synth_generate(const SynthSpec& spec, std::uint64_t seed);

/// Feature rows for the given record indices.
Matrix batch_features(const Dataset& ds, std::span<const std::size_t> indices);
/// Normalized targets and masks for the given record indices.
BatchTargets batch_targets(const Dataset& ds, std::span<const std::size_t> indices);

}  // namespace resmtl
