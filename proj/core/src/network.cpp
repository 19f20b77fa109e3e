#include "resmtl/network.hpp"

#include <string>

#include "resmtl/error.hpp"

namespace resmtl {

DenseLayer::DenseLayer(std::size_t in_dim, std::size_t out_dim, Rng& rng)
    : weights(he_init(in_dim, out_dim, rng)), bias(1, out_dim) {}

Matrix DenseLayer::forward(const Matrix& x) const {
  Matrix out = matmul(x, weights);
  add_row_broadcast(out, bias);
  return out;
}

void ResidualBlock::zero_inner() {
  fc1.weights.fill(0.0);
  fc1.bias.fill(0.0);
  fc2.weights.fill(0.0);
  fc2.bias.fill(0.0);
}

void NetConfig::validate() const {
  if (input_dim == 0) throw ValidationError("network: input_dim must be >= 1");
  if (hidden == 0) throw ValidationError("network: hidden width must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ValidationError("network: dropout_rate must lie in [0, 1), got " +
                          std::to_string(dropout_rate));
  }
  for (Task t : kAllTasks) {
    const std::string name(task_name(t));
    if (is_classification(t)) {
      if (num_classes[t] < 2) {
        throw ValidationError("network: head '" + name + "' needs at least 2 classes");
      }
      if (output_width[t] != num_classes[t] && output_width[t] != 1) {
        throw ValidationError("network: head '" + name + "' must emit 1 or " +
                              std::to_string(num_classes[t]) + " values");
      }
    } else if (num_classes[t] != 0 || output_width[t] != 1) {
      throw ValidationError("network: regression head '" + name + "' must emit exactly 1 value");
    }
  }
}

NetConfig make_net_config(std::size_t input_dim, std::size_t hidden, double dropout_rate,
                          const TaskArray<std::size_t>& num_classes,
                          const TaskArray<LossKind>& losses) {
  NetConfig cfg;
  cfg.input_dim = input_dim;
  cfg.hidden = hidden;
  cfg.dropout_rate = dropout_rate;
  for (Task t : kAllTasks) {
    cfg.num_classes[t] = is_classification(t) ? num_classes[t] : 0;
    cfg.output_width[t] = head_width(t, num_classes[t], losses[t]);
  }
  return cfg;
}

void to_json(nlohmann::json& j, const NetConfig& c) {
  nlohmann::json heads = nlohmann::json::object();
  for (Task t : kAllTasks) {
    heads[std::string(task_name(t))] = {{"num_classes", c.num_classes[t]},
                                        {"output_width", c.output_width[t]}};
  }
  j = {{"input_dim", c.input_dim},
       {"hidden", c.hidden},
       {"dropout_rate", c.dropout_rate},
       {"dropout_in_residual", c.dropout_in_residual},
       {"heads", heads}};
}

void from_json(const nlohmann::json& j, NetConfig& c) {
  j.at("input_dim").get_to(c.input_dim);
  j.at("hidden").get_to(c.hidden);
  j.at("dropout_rate").get_to(c.dropout_rate);
  j.at("dropout_in_residual").get_to(c.dropout_in_residual);
  const auto& heads = j.at("heads");
  for (Task t : kAllTasks) {
    const auto& h = heads.at(std::string(task_name(t)));
    h.at("num_classes").get_to(c.num_classes[t]);
    h.at("output_width").get_to(c.output_width[t]);
  }
}

MultiTaskNet::MultiTaskNet(NetConfig config, Rng& rng) : config_(std::move(config)) {
  config_.validate();
  trunk_ = DenseLayer(config_.input_dim, config_.hidden, rng);
  residual_.fc1 = DenseLayer(config_.hidden, config_.hidden, rng);
  residual_.fc2 = DenseLayer(config_.hidden, config_.hidden, rng);
  for (Task t : kAllTasks) {
    heads_[t].task = t;
    heads_[t].num_classes = config_.num_classes[t];
    heads_[t].layer = DenseLayer(config_.hidden, config_.output_width[t], rng);
  }
}

namespace {

template <typename Ref, typename Net>
std::vector<Ref> collect_parameters(Net& net) {
  std::vector<Ref> out;
  out.reserve(6 + 2 * kTaskCount);
  auto push = [&](const std::string& prefix, auto& layer) {
    out.push_back({prefix + ".weight", &layer.weights});
    out.push_back({prefix + ".bias", &layer.bias});
  };
  push("trunk", net.trunk());
  push("residual.fc1", net.residual().fc1);
  push("residual.fc2", net.residual().fc2);
  for (Task t : kAllTasks) push("head." + std::string(task_name(t)), net.head(t).layer);
  return out;
}

}  // namespace

std::vector<ParamRef> MultiTaskNet::parameters() {
  return collect_parameters<ParamRef>(*this);
}

std::vector<ConstParamRef> MultiTaskNet::parameters() const {
  return collect_parameters<ConstParamRef>(*this);
}

std::size_t MultiTaskNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.value->size();
  return n;
}

bool operator==(const MultiTaskNet& a, const MultiTaskNet& b) {
  if (!(a.config_ == b.config_)) return false;
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!(*pa[i].value == *pb[i].value)) return false;
  return true;
}

std::size_t parameter_count(const NetConfig& c) {
  const std::size_t h = c.hidden;
  std::size_t n = c.input_dim * h + h + 2 * (h * h + h);
  for (Task t : kAllTasks) n += h * c.output_width[t] + c.output_width[t];
  return n;
}

namespace {

ForwardResult forward_impl(const MultiTaskNet& net, const Matrix& batch, Mode mode, Rng* rng) {
  const auto& cfg = net.config();
  if (batch.cols() != cfg.input_dim) {
    throw ShapeError("forward: batch has " + std::to_string(batch.cols()) +
                     " features, network expects " + std::to_string(cfg.input_dim));
  }
  const bool drop = mode == Mode::train && cfg.dropout_rate > 0.0;

  ForwardResult r;
  ForwardCache& c = r.cache;
  c.input = batch;
  c.trunk_pre = net.trunk().forward(batch);
  c.trunk_out = relu(c.trunk_pre);
  if (drop) {
    c.trunk_mask = dropout_mask(batch.rows(), cfg.hidden, cfg.dropout_rate, *rng);
    c.trunk_out = hadamard(c.trunk_out, c.trunk_mask);
  }

  c.res_pre = net.residual().fc1.forward(c.trunk_out);
  c.res_hidden = relu(c.res_pre);
  if (drop && cfg.dropout_in_residual) {
    c.res_mask = dropout_mask(batch.rows(), cfg.hidden, cfg.dropout_rate, *rng);
    c.res_hidden = hadamard(c.res_hidden, c.res_mask);
  }
  c.shared = net.residual().fc2.forward(c.res_hidden);
  add_in_place(c.shared, c.trunk_out);  // skip connection

  for (Task t : kAllTasks) r.outputs[t] = net.head(t).layer.forward(c.shared);
  return r;
}

}  // namespace

ForwardResult forward(const MultiTaskNet& net, const Matrix& batch, Mode mode, Rng& rng) {
  return forward_impl(net, batch, mode, &rng);
}

ForwardResult forward(const MultiTaskNet& net, const Matrix& batch) {
  return forward_impl(net, batch, Mode::eval, nullptr);
}

ParamGrads zero_grads(const MultiTaskNet& net) {
  ParamGrads g;
  for (const auto& p : net.parameters()) g.values.emplace_back(p.value->rows(), p.value->cols());
  return g;
}

ParamGrads backward(const MultiTaskNet& net, const ForwardCache& cache,
                    const TaskArray<Matrix>& head_grads) {
  const std::size_t n = cache.shared.rows();
  const std::size_t h = net.config().hidden;
  ParamGrads g = zero_grads(net);

  // Heads occupy slots 6.. in parameter order.
  Matrix d_shared(n, h);
  for (Task t : kAllTasks) {
    const Matrix& d_out = head_grads[t];
    if (d_out.empty()) continue;
    const auto& layer = net.head(t).layer;
    if (d_out.rows() != n || d_out.cols() != layer.out_dim()) {
      throw ShapeError("backward: gradient for head '" + std::string(task_name(t)) + "' is " +
                       d_out.shape_string() + ", expected " + std::to_string(n) + "x" +
                       std::to_string(layer.out_dim()));
    }
    const std::size_t slot = 6 + 2 * index_of(t);
    g.values[slot] = matmul_tn(cache.shared, d_out);
    g.values[slot + 1] = column_sums(d_out);
    add_in_place(d_shared, matmul_nt(d_out, layer.weights));
  }

  const auto& res = net.residual();
  g.values[4] = matmul_tn(cache.res_hidden, d_shared);
  g.values[5] = column_sums(d_shared);
  Matrix d_hidden = matmul_nt(d_shared, res.fc2.weights);
  if (!cache.res_mask.empty()) d_hidden = hadamard(d_hidden, cache.res_mask);
  Matrix d_res_pre = relu_backward(cache.res_pre, d_hidden);
  g.values[2] = matmul_tn(cache.trunk_out, d_res_pre);
  g.values[3] = column_sums(d_res_pre);

  // dy/dx = dF/dx + I
  g.d_trunk_out = matmul_nt(d_res_pre, res.fc1.weights);
  add_in_place(g.d_trunk_out, d_shared);

  Matrix d_act = cache.trunk_mask.empty() ? g.d_trunk_out : hadamard(g.d_trunk_out, cache.trunk_mask);
  Matrix d_trunk_pre = relu_backward(cache.trunk_pre, d_act);
  g.values[0] = matmul_tn(cache.input, d_trunk_pre);
  g.values[1] = column_sums(d_trunk_pre);
  g.d_input = matmul_nt(d_trunk_pre, net.trunk().weights);
  return g;
}

}  // namespace resmtl
