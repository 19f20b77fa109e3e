#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string_view>

namespace resmtl {

/// The seven prediction tasks, in loss-weight order: four classification
/// heads followed by three regression heads.
enum class Task : std::size_t { subtlety, state, z, diagnosis, x, y, size };

inline constexpr std::size_t kTaskCount = 7;

inline constexpr std::array<Task, kTaskCount> kAllTasks = {
    Task::subtlety, Task::state, Task::z, Task::diagnosis, Task::x, Task::y, Task::size};

inline constexpr std::array<Task, 4> kClassificationTasks = {Task::subtlety, Task::state, Task::z,
                                                             Task::diagnosis};
inline constexpr std::array<Task, 3> kRegressionTasks = {Task::x, Task::y, Task::size};

constexpr std::size_t index_of(Task t) noexcept { return static_cast<std::size_t>(t); }
constexpr bool is_classification(Task t) noexcept { return index_of(t) < 4; }

std::string_view task_name(Task t) noexcept;
std::optional<Task> parse_task(std::string_view name) noexcept;

/// Fixed-size per-task table indexed by Task.
template <typename T>
struct TaskArray {
  std::array<T, kTaskCount> items{};

  T& operator[](Task t) noexcept { return items[index_of(t)]; }
  const T& operator[](Task t) const noexcept { return items[index_of(t)]; }

  auto begin() noexcept { return items.begin(); }
  auto end() noexcept { return items.end(); }
  auto begin() const noexcept { return items.begin(); }
  auto end() const noexcept { return items.end(); }

  friend bool operator==(const TaskArray&, const TaskArray&) = default;
};

/// Loss applied to a head's raw output.
enum class LossKind {
  label_smoothing,  // softmax + smoothed cross-entropy, one logit per class
  bce_with_logits,  // binary tasks only, one logit
  mse,              // one output; for a classification task the class index scaled to [0, 1]
};

std::string_view loss_kind_name(LossKind k) noexcept;
std::optional<LossKind> parse_loss_kind(std::string_view name) noexcept;

/// Width of the head output for a task with `num_classes` classes (ignored for
/// regression tasks) trained under `kind`.
std::size_t head_width(Task t, std::size_t num_classes, LossKind kind) noexcept;

}  // namespace resmtl
