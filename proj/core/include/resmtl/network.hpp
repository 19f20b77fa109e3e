#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "resmtl/matrix.hpp"
#include "resmtl/rng.hpp"
#include "resmtl/tasks.hpp"

namespace resmtl {

/// Affine layer y = x·W + b with W of shape (in, out) and b of shape (1, out).
struct DenseLayer {
  Matrix weights;
  Matrix bias;

  DenseLayer() = default;
  DenseLayer(std::size_t in_dim, std::size_t out_dim, Rng& rng);

  std::size_t in_dim() const noexcept { return weights.rows(); }
  std::size_t out_dim() const noexcept { return weights.cols(); }
  Matrix forward(const Matrix& x) const;
};

/// y = F(x) + x with F = fc2 ∘ relu ∘ fc1, both hidden → hidden.
struct ResidualBlock {
  DenseLayer fc1;
  DenseLayer fc2;

  std::size_t width() const noexcept { return fc1.in_dim(); }
  /// Zeroes every inner parameter, which turns the block into the identity map.
  void zero_inner();
};

struct TaskHead {
  Task task = Task::subtlety;
  std::size_t num_classes = 0;  // 0 for regression heads
  DenseLayer layer;
};

struct NetConfig {
  std::size_t input_dim = 0;
  std::size_t hidden = 512;
  double dropout_rate = 0.2;
  bool dropout_in_residual = false;
  /// Number of classes per classification task; regression entries are 0.
  TaskArray<std::size_t> num_classes{};
  /// Raw output width per head (see head_width()).
  TaskArray<std::size_t> output_width{};

  /// Throws ValidationError when a field is inconsistent.
  void validate() const;

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

/// Builds a config whose head widths follow the loss assigned to each task.
NetConfig make_net_config(std::size_t input_dim, std::size_t hidden, double dropout_rate,
                          const TaskArray<std::size_t>& num_classes,
                          const TaskArray<LossKind>& losses);

void to_json(nlohmann::json& j, const NetConfig& c);
void from_json(const nlohmann::json& j, NetConfig& c);

/// Named view of one parameter tensor. Ordering is documented on parameters().
struct ParamRef {
  std::string name;
  Matrix* value;
};
struct ConstParamRef {
  std::string name;
  const Matrix* value;
};

/// Shared trunk (dense → ReLU → dropout → residual block) plus seven task heads.
class MultiTaskNet {
 public:
  /// He-normal weights, zero biases. Draw order follows parameters().
  MultiTaskNet(NetConfig config, Rng& rng);

  const NetConfig& config() const noexcept { return config_; }

  DenseLayer& trunk() noexcept { return trunk_; }
  const DenseLayer& trunk() const noexcept { return trunk_; }
  ResidualBlock& residual() noexcept { return residual_; }
  const ResidualBlock& residual() const noexcept { return residual_; }
  TaskHead& head(Task t) noexcept { return heads_[t]; }
  const TaskHead& head(Task t) const noexcept { return heads_[t]; }

  /// Parameter order: trunk.weight, trunk.bias, residual.fc1.{weight,bias},
  /// residual.fc2.{weight,bias}, then head.<task>.{weight,bias} for every task
  /// in Task order. The optimizer state and checkpoint layout both follow it.
  std::vector<ParamRef> parameters();
  std::vector<ConstParamRef> parameters() const;
  std::size_t parameter_count() const;

  friend bool operator==(const MultiTaskNet& a, const MultiTaskNet& b);

 private:
  NetConfig config_;
  DenseLayer trunk_;
  ResidualBlock residual_;
  TaskArray<TaskHead> heads_;
};

/// Closed-form parameter count for a config.
std::size_t parameter_count(const NetConfig& config);

enum class Mode { train, eval };

/// Everything backward() needs from one forward pass. Masks are empty when
/// dropout was not applied.
struct ForwardCache {
  Matrix input;
  Matrix trunk_pre;
  Matrix trunk_mask;
  Matrix trunk_out;  // h0, input of the residual block
  Matrix res_pre;
  Matrix res_mask;
  Matrix res_hidden;  // relu(res_pre), masked when dropout_in_residual
  Matrix shared;      // residual block output, fed to every head
};

struct ForwardResult {
  TaskArray<Matrix> outputs;
  ForwardCache cache;
};

/// Train mode draws dropout masks from `rng`; eval mode never touches it.
ForwardResult forward(const MultiTaskNet& net, const Matrix& batch, Mode mode, Rng& rng);
/// Eval-mode forward.
ForwardResult forward(const MultiTaskNet& net, const Matrix& batch);

struct ParamGrads {
  std::vector<Matrix> values;  // same order and shapes as parameters()
  Matrix d_trunk_out;          // gradient w.r.t. the residual block input
  Matrix d_input;              // gradient w.r.t. the batch

  std::size_t size() const noexcept { return values.size(); }
};

/// Exact gradients of Σ_k <head_grads[k], outputs[k]>. An empty matrix in
/// head_grads stands for an all-zero gradient.
ParamGrads backward(const MultiTaskNet& net, const ForwardCache& cache,
                    const TaskArray<Matrix>& head_grads);

/// Zero-filled gradient container shaped like the net's parameters.
ParamGrads zero_grads(const MultiTaskNet& net);

}  // namespace resmtl
