#include "resmtl/optim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "resmtl/error.hpp"

namespace resmtl {

void AdamState::validate() const {
  if (!(lr > 0.0)) throw ValidationError("adam: learning rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("adam: beta1 and beta2 must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ValidationError("adam: epsilon must be > 0");
}

void adam_step(AdamState& state, std::span<const ParamRef> params, std::span<const Matrix> grads) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value->rows(), p.value->cols());
      state.v.emplace_back(p.value->rows(), p.value->cols());
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: moment buffers misaligned");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& p = *params[i].value;
    if (grads[i].rows() != p.rows() || grads[i].cols() != p.cols() ||
        state.m[i].rows() != p.rows() || state.m[i].cols() != p.cols()) {
      throw ShapeError("adam_step: '" + params[i].name + "' is " + p.shape_string() +
                       " but its gradient is " + grads[i].shape_string());
    }
  }

  ++state.t;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].value->values();
    auto g = grads[i].values();
    auto m = state.m[i].values();
    auto v = state.v[i].values();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      w[j] -= state.lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ValidationError("train: epochs must be >= 1");
  if (batch_size == 0) throw ValidationError("train: batch_size must be >= 1");
  if (patience && *patience == 0) throw ValidationError("train: patience must be >= 1");
  weights.validate();
  losses.validate();
  adam.validate();
}

TaskLossBundle dataset_losses(const MultiTaskNet& net, const Dataset& ds,
                              const LossSettings& settings, std::size_t chunk) {
  TaskLossBundle total;
  TaskArray<double> sums{};
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += chunk) {
    const std::size_t end = std::min(ds.size(), start + chunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    auto fwd = forward(net, batch_features(ds, idx));
    auto part = compute_task_losses(fwd.outputs, batch_targets(ds, idx), settings);
    for (Task t : kAllTasks) {
      sums[t] += part.loss[t] * static_cast<double>(part.valid[t]);
      total.valid[t] += part.valid[t];
    }
  }
  for (Task t : kAllTasks)
    total.loss[t] = total.valid[t] ? sums[t] / static_cast<double>(total.valid[t]) : 0.0;
  return total;
}

namespace {

void require_finite(const TaskLossBundle& b, std::size_t epoch) {
  for (Task t : kAllTasks) {
    if (!std::isfinite(b.loss[t])) {
      throw NumericError("non-finite loss for task '" + std::string(task_name(t)) +
                         "' in epoch " + std::to_string(epoch));
    }
  }
}

}  // namespace

TrainTrace train(MultiTaskNet& net, const Dataset& train_set, const TrainConfig& cfg,
                 const Dataset* validation, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw ValidationError("train: dataset is empty");
  if (train_set.feature_dim != net.config().input_dim) {
    throw ValidationError("train: dataset has " + std::to_string(train_set.feature_dim) +
                          " features, network expects " + std::to_string(net.config().input_dim));
  }
  if (validation && validation->feature_dim != net.config().input_dim) {
    throw ValidationError("train: validation set feature width mismatch");
  }

  Rng shuffle_rng(cfg.seed);
  Rng dropout_rng = shuffle_rng.fork(1);
  AdamState adam = cfg.adam;
  auto params = net.parameters();

  TrainTrace trace;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  std::optional<double> best_val;
  std::optional<MultiTaskNet> best_net;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order.begin(), order.end());
    double batch_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      auto fwd = forward(net, batch_features(train_set, idx), Mode::train, dropout_rng);
      auto bundle = compute_task_losses(fwd.outputs, batch_targets(train_set, idx), cfg.losses);
      require_finite(bundle, epoch);
      batch_sum += total_loss(bundle, cfg.weights);
      ++batches;
      auto grads = backward(net, fwd.cache, weighted_head_grads(bundle, cfg.weights));
      adam_step(adam, params, grads.values);
      ++trace.optimizer_steps;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    const auto full = dataset_losses(net, train_set, cfg.losses);
    require_finite(full, epoch);
    rec.task_loss = full.loss;
    rec.total_loss = total_loss(full, cfg.weights);
    rec.batch_loss = batch_sum / static_cast<double>(batches);
    if (validation && !validation->empty()) {
      rec.val_total_loss = total_loss(dataset_losses(net, *validation, cfg.losses), cfg.weights);
    }
    trace.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (cfg.patience && rec.val_total_loss) {
      if (!best_val || *rec.val_total_loss < *best_val) {
        best_val = rec.val_total_loss;
        best_net = net;
        trace.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= *cfg.patience) {
        trace.stopped_early = true;
        break;
      }
    }
  }
  if (trace.stopped_early && best_net) {
    net = *best_net;
  } else {
    trace.best_epoch = trace.epochs.size();
  }

  if (cfg.trace_path) save_trace_jsonl(*cfg.trace_path, trace);
  return trace;
}

void write_trace_jsonl(std::ostream& out, const TrainTrace& trace) {
  for (const auto& rec : trace.epochs) {
    nlohmann::json j;
    j["epoch"] = rec.epoch;
    j["total_loss"] = rec.total_loss;
    j["batch_loss"] = rec.batch_loss;
    auto& tl = j["task_loss"] = nlohmann::json::object();
    for (Task t : kAllTasks) tl[std::string(task_name(t))] = rec.task_loss[t];
    if (rec.val_total_loss) j["val_total_loss"] = *rec.val_total_loss;
    out << j.dump() << '\n';
  }
}

void save_trace_jsonl(const std::filesystem::path& path, const TrainTrace& trace) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("trace: cannot open '" + path.string() + "' for writing");
  write_trace_jsonl(out, trace);
}

}  // namespace resmtl
