#include "resmtl/tasks.hpp"

namespace resmtl {

namespace {
constexpr std::array<std::string_view, kTaskCount> kNames = {
    "subtlety", "state", "z", "diagnosis", "x", "y", "size"};
}

std::string_view task_name(Task t) noexcept { return kNames[index_of(t)]; }

std::optional<Task> parse_task(std::string_view name) noexcept {
  for (Task t : kAllTasks)
    if (kNames[index_of(t)] == name) return t;
  return std::nullopt;
}

std::string_view loss_kind_name(LossKind k) noexcept {
  switch (k) {
    case LossKind::label_smoothing: return "label_smoothing";
    case LossKind::bce_with_logits: return "bce_with_logits";
    case LossKind::mse: return "mse";
  }
  return "unknown";
}

std::optional<LossKind> parse_loss_kind(std::string_view name) noexcept {
  if (name == "label_smoothing") return LossKind::label_smoothing;
  if (name == "bce_with_logits") return LossKind::bce_with_logits;
  if (name == "mse") return LossKind::mse;
  return std::nullopt;
}

std::size_t head_width(Task t, std::size_t num_classes, LossKind kind) noexcept {
  if (!is_classification(t)) return 1;
  return kind == LossKind::label_smoothing ? num_classes : 1;
}

}  // namespace resmtl
