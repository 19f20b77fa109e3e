#include "resmtl/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <set>
#include <string_view>

#include "resmtl/error.hpp"

namespace resmtl::cli {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, std::string_view where,
                    std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw ValidationError("config: '" + std::string(where) + "' must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ValidationError("config: unknown key '" + std::string(where) + "." + key + "'");
    }
  }
}

template <typename T>
void read(const json& obj, const char* key, T& dst, std::string_view where) {
  if (!obj.contains(key)) return;
  try {
    obj.at(key).get_to(dst);
  } catch (const json::exception&) {
    throw ValidationError("config: '" + std::string(where) + "." + key + "' has the wrong type");
  }
}

template <typename T>
void read_optional(const json& obj, const char* key, std::optional<T>& dst, std::string_view where) {
  if (!obj.contains(key)) return;
  if (obj.at(key).is_null()) {
    dst.reset();
    return;
  }
  T value{};
  read(obj, key, value, where);
  dst = value;
}

std::string_view loss_choice_name(const LossChoice& c) {
  return c.automatic ? std::string_view("auto") : loss_kind_name(c.kind);
}

json task_object(auto&& value_of, bool classification_only = false) {
  json j = json::object();
  for (Task t : kAllTasks) {
    if (classification_only && !is_classification(t)) continue;
    j[std::string(task_name(t))] = value_of(t);
  }
  return j;
}

}  // namespace

void RunConfig::validate() const {
  if (data.split_fraction && !(*data.split_fraction > 0.0 && *data.split_fraction < 1.0)) {
    throw ValidationError("config: data.split_fraction must lie in (0, 1)");
  }
  static const std::set<std::string> kSplits = {"auto", "train", "test", "all", "both"};
  if (!kSplits.contains(data.eval_split)) {
    throw ValidationError("config: data.eval_split must be one of auto|train|test|all|both");
  }
  if (!data.split_fraction && (data.eval_split == "train" || data.eval_split == "test" ||
                               data.eval_split == "both")) {
    throw ValidationError("config: data.eval_split '" + data.eval_split +
                          "' needs data.split_fraction");
  }
  normalization.validate();
  synth.validate();
  if (network.hidden == 0) throw ValidationError("config: network.hidden must be >= 1");
  if (!(network.dropout_rate >= 0.0 && network.dropout_rate < 1.0)) {
    throw ValidationError("config: network.dropout_rate must lie in [0, 1)");
  }
  for (Task t : kRegressionTasks) {
    if (!train.losses[t].automatic && train.losses[t].kind != LossKind::mse) {
      throw ValidationError("config: regression task '" + std::string(task_name(t)) +
                            "' must use mse");
    }
  }
  if (train.epochs == 0) throw ValidationError("config: train.epochs must be >= 1");
  if (train.batch_size == 0) throw ValidationError("config: train.batch_size must be >= 1");
  if (train.patience && *train.patience == 0) {
    throw ValidationError("config: train.patience must be >= 1");
  }
  if (!(train.label_smoothing_alpha >= 0.0 && train.label_smoothing_alpha < 1.0)) {
    throw ValidationError("config: train.label_smoothing_alpha must lie in [0, 1)");
  }
  train.task_weights.validate();
  train_config().adam.validate();
  if (gradcheck.seeds.empty()) throw ValidationError("config: gradcheck.seeds must not be empty");
  if (!(gradcheck.step > 0.0) || !(gradcheck.tolerance > 0.0)) {
    throw ValidationError("config: gradcheck.step and gradcheck.tolerance must be > 0");
  }
}

TaskArray<LossKind> RunConfig::resolve_losses(const TaskArray<std::size_t>& num_classes) const {
  auto out = default_loss_assignment(num_classes);
  for (Task t : kAllTasks)
    if (!train.losses[t].automatic) out[t] = train.losses[t].kind;
  return out;
}

LossSettings RunConfig::loss_settings(const TaskArray<std::size_t>& num_classes) const {
  LossSettings s;
  s.num_classes = num_classes;
  s.assignment = resolve_losses(num_classes);
  s.alpha = train.label_smoothing_alpha;
  s.literal_label_smoothing = train.literal_label_smoothing;
  return s;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig c;
  c.epochs = train.epochs;
  c.batch_size = train.batch_size;
  c.seed = seed;
  c.weights = train.task_weights;
  c.adam.lr = train.learning_rate;
  c.adam.beta1 = train.beta1;
  c.adam.beta2 = train.beta2;
  c.adam.epsilon = train.epsilon;
  c.patience = train.patience;
  c.losses.alpha = train.label_smoothing_alpha;
  c.losses.literal_label_smoothing = train.literal_label_smoothing;
  return c;
}

GradcheckOptions RunConfig::gradcheck_options() const {
  GradcheckOptions o;
  o.seeds = gradcheck.seeds;
  o.step = gradcheck.step;
  o.tolerance = gradcheck.tolerance;
  o.alpha = train.label_smoothing_alpha;
  return o;
}

RunConfig parse_run_config(const json& doc) {
  reject_unknown(doc, "", {"version", "seed", "model_name", "data", "normalization", "synth",
                           "network", "train", "report", "gradcheck"});
  if (!doc.contains("version") || !doc.at("version").is_number_integer() ||
      doc.at("version").get<int>() != kRunConfigVersion) {
    throw ValidationError("config: 'version' must be " + std::to_string(kRunConfigVersion));
  }
  RunConfig c;
  read(doc, "seed", c.seed, "");
  read(doc, "model_name", c.model_name, "");

  if (doc.contains("data")) {
    const auto& d = doc.at("data");
    reject_unknown(d, "data", {"csv", "split_fraction", "eval_split"});
    std::optional<std::string> csv;
    read_optional(d, "csv", csv, "data");
    if (csv) c.data.csv = *csv;
    read_optional(d, "split_fraction", c.data.split_fraction, "data");
    read(d, "eval_split", c.data.eval_split, "data");
  }

  if (doc.contains("normalization")) {
    const auto& n = doc.at("normalization");
    reject_unknown(n, "normalization", {"image_width_px", "image_height_px", "size_divisor_mm"});
    read(n, "image_width_px", c.normalization.image_width_px, "normalization");
    read(n, "image_height_px", c.normalization.image_height_px, "normalization");
    read_optional(n, "size_divisor_mm", c.normalization.size_divisor_mm, "normalization");
  }
  c.synth.norm = c.normalization;

  if (doc.contains("synth")) {
    const auto& s = doc.at("synth");
    reject_unknown(s, "synth", {"samples", "feature_dim", "noise", "class_separation",
                                "regression_scale", "non_nodule_fraction", "small_nodule_noise",
                                "size_min_mm", "size_max_mm", "num_classes", "priors"});
    read(s, "samples", c.synth.samples, "synth");
    read(s, "feature_dim", c.synth.feature_dim, "synth");
    read(s, "noise", c.synth.noise, "synth");
    read(s, "class_separation", c.synth.class_separation, "synth");
    read(s, "regression_scale", c.synth.regression_scale, "synth");
    read(s, "non_nodule_fraction", c.synth.non_nodule_fraction, "synth");
    read(s, "small_nodule_noise", c.synth.small_nodule_noise, "synth");
    read(s, "size_min_mm", c.synth.size_min_mm, "synth");
    read(s, "size_max_mm", c.synth.size_max_mm, "synth");
    for (const char* key : {"num_classes", "priors"}) {
      if (!s.contains(key)) continue;
      const auto& obj = s.at(key);
      const std::string where = std::string("synth.") + key;
      reject_unknown(obj, where, {"subtlety", "state", "z", "diagnosis"});
      for (Task t : kClassificationTasks) {
        const std::string name(task_name(t));
        if (std::string_view(key) == "num_classes") {
          read(obj, name.c_str(), c.synth.num_classes[t], where);
        } else {
          read(obj, name.c_str(), c.synth.priors[t], where);
        }
      }
    }
  }

  if (doc.contains("network")) {
    const auto& n = doc.at("network");
    reject_unknown(n, "network", {"hidden", "dropout_rate", "dropout_in_residual"});
    read(n, "hidden", c.network.hidden, "network");
    read(n, "dropout_rate", c.network.dropout_rate, "network");
    read(n, "dropout_in_residual", c.network.dropout_in_residual, "network");
  }

  if (doc.contains("train")) {
    const auto& t = doc.at("train");
    reject_unknown(t, "train", {"epochs", "batch_size", "learning_rate", "beta1", "beta2",
                                "epsilon", "patience", "label_smoothing_alpha",
                                "literal_label_smoothing", "task_weights", "losses"});
    read(t, "epochs", c.train.epochs, "train");
    read(t, "batch_size", c.train.batch_size, "train");
    read(t, "learning_rate", c.train.learning_rate, "train");
    read(t, "beta1", c.train.beta1, "train");
    read(t, "beta2", c.train.beta2, "train");
    read(t, "epsilon", c.train.epsilon, "train");
    read_optional(t, "patience", c.train.patience, "train");
    read(t, "label_smoothing_alpha", c.train.label_smoothing_alpha, "train");
    read(t, "literal_label_smoothing", c.train.literal_label_smoothing, "train");
    if (t.contains("task_weights")) {
      const auto& w = t.at("task_weights");
      reject_unknown(w, "train.task_weights",
                     {"subtlety", "state", "z", "diagnosis", "x", "y", "size"});
      for (Task task : kAllTasks) {
        const std::string name(task_name(task));
        if (!w.contains(name)) {
          throw ValidationError("config: train.task_weights is missing task '" + name + "'");
        }
        read(w, name.c_str(), c.train.task_weights.lambda[task], "train.task_weights");
      }
    }
    if (t.contains("losses")) {
      const auto& l = t.at("losses");
      reject_unknown(l, "train.losses", {"subtlety", "state", "z", "diagnosis", "x", "y", "size"});
      for (Task task : kAllTasks) {
        const std::string name(task_name(task));
        if (!l.contains(name)) continue;
        std::string value;
        read(l, name.c_str(), value, "train.losses");
        if (value == "auto") {
          c.train.losses[task] = {};
          continue;
        }
        auto kind = parse_loss_kind(value);
        if (!kind) {
          throw ValidationError("config: train.losses." + name + " has unknown loss '" + value +
                                "'");
        }
        c.train.losses[task] = {false, *kind};
      }
    }
  }

  if (doc.contains("report")) {
    const auto& r = doc.at("report");
    reject_unknown(r, "report", {"f1_averaging"});
    std::string avg = "macro";
    read(r, "f1_averaging", avg, "report");
    auto parsed = parse_f1_averaging(avg);
    if (!parsed) throw ValidationError("config: report.f1_averaging must be macro or micro");
    c.report.f1_averaging = *parsed;
  }

  if (doc.contains("gradcheck")) {
    const auto& g = doc.at("gradcheck");
    reject_unknown(g, "gradcheck", {"seeds", "step", "tolerance"});
    read(g, "seeds", c.gradcheck.seeds, "gradcheck");
    read(g, "step", c.gradcheck.step, "gradcheck");
    read(g, "tolerance", c.gradcheck.tolerance, "gradcheck");
  }

  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config: cannot open '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("config: '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(doc);
}

json to_json(const RunConfig& c) {
  json j;
  j["version"] = kRunConfigVersion;
  j["seed"] = c.seed;
  j["model_name"] = c.model_name;
  j["data"] = {{"csv", c.data.csv ? json(c.data.csv->generic_string()) : json()},
               {"split_fraction", c.data.split_fraction ? json(*c.data.split_fraction) : json()},
               {"eval_split", c.data.eval_split}};
  j["normalization"] = c.normalization;
  j["synth"] = {
      {"samples", c.synth.samples},
      {"feature_dim", c.synth.feature_dim},
      {"noise", c.synth.noise},
      {"class_separation", c.synth.class_separation},
      {"regression_scale", c.synth.regression_scale},
      {"non_nodule_fraction", c.synth.non_nodule_fraction},
      {"small_nodule_noise", c.synth.small_nodule_noise},
      {"size_min_mm", c.synth.size_min_mm},
      {"size_max_mm", c.synth.size_max_mm},
      {"num_classes", task_object([&](Task t) { return c.synth.num_classes[t]; }, true)},
      {"priors", task_object([&](Task t) { return c.synth.priors[t]; }, true)}};
  j["network"] = {{"hidden", c.network.hidden},
                  {"dropout_rate", c.network.dropout_rate},
                  {"dropout_in_residual", c.network.dropout_in_residual}};
  j["train"] = {
      {"epochs", c.train.epochs},
      {"batch_size", c.train.batch_size},
      {"learning_rate", c.train.learning_rate},
      {"beta1", c.train.beta1},
      {"beta2", c.train.beta2},
      {"epsilon", c.train.epsilon},
      {"patience", c.train.patience ? json(*c.train.patience) : json()},
      {"label_smoothing_alpha", c.train.label_smoothing_alpha},
      {"literal_label_smoothing", c.train.literal_label_smoothing},
      {"task_weights", task_object([&](Task t) { return c.train.task_weights.lambda[t]; })},
      {"losses", task_object([&](Task t) { return loss_choice_name(c.train.losses[t]); })}};
  j["report"] = {{"f1_averaging", f1_averaging_name(c.report.f1_averaging)}};
  j["gradcheck"] = {{"seeds", c.gradcheck.seeds},
                    {"step", c.gradcheck.step},
                    {"tolerance", c.gradcheck.tolerance}};
  return j;
}

}  // namespace resmtl::cli
