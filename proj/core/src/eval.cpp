#include "resmtl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "resmtl/error.hpp"

namespace resmtl {

// ---------------------------------------------------------------- scalar metrics

namespace {

void require_pairs(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": " + std::to_string(a) + " predictions for " +
                     std::to_string(b) + " targets");
  }
  if (a == 0) throw ValidationError(std::string(op) + ": empty input");
}

ClassificationStats tally(std::span<const std::size_t> preds, std::span<const std::size_t> truth,
                          std::size_t num_classes, const char* op) {
  require_pairs(preds.size(), truth.size(), op);
  ClassificationStats s(num_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) s.add(truth[i], preds[i]);
  return s;
}

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

struct PerClass {
  std::vector<double> precision, recall, f1;
};

PerClass per_class(const ClassificationStats& s) {
  PerClass pc;
  const std::size_t c = s.num_classes;
  for (std::size_t k = 0; k < c; ++k) {
    double tp = static_cast<double>(s.at(k, k));
    double predicted = 0.0;
    double actual = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      predicted += static_cast<double>(s.at(j, k));
      actual += static_cast<double>(s.at(k, j));
    }
    const double p = ratio(tp, predicted);
    const double r = ratio(tp, actual);
    pc.precision.push_back(p);
    pc.recall.push_back(r);
    pc.f1.push_back(p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0);
  }
  return pc;
}

double trace_fraction(const ClassificationStats& s) {
  std::size_t hits = 0;
  for (std::size_t k = 0; k < s.num_classes; ++k) hits += s.at(k, k);
  return ratio(static_cast<double>(hits), static_cast<double>(s.total()));
}

double micro_from_stats(const ClassificationStats& s) {
  double tp = 0.0;
  for (std::size_t k = 0; k < s.num_classes; ++k) tp += static_cast<double>(s.at(k, k));
  const double errors = static_cast<double>(s.total()) - tp;  // each error is one FP and one FN
  return ratio(2.0 * tp, 2.0 * tp + 2.0 * errors);
}

double macro_from_stats(const ClassificationStats& s) {
  const auto pc = per_class(s);
  return pc.f1.empty() ? 0.0
                       : std::accumulate(pc.f1.begin(), pc.f1.end(), 0.0) /
                             static_cast<double>(pc.f1.size());
}

RegressionStats regression_tally(std::span<const double> preds, std::span<const double> truth,
                                 MaskView mask, const char* op) {
  if (preds.size() != truth.size()) {
    throw ShapeError(std::string(op) + ": " + std::to_string(preds.size()) +
                     " predictions for " + std::to_string(truth.size()) + " targets");
  }
  if (!mask.empty() && mask.size() != preds.size()) {
    throw ShapeError(std::string(op) + ": mask length mismatch");
  }
  RegressionStats s;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (mask.empty() || mask[i]) s.add(preds[i], truth[i]);
  if (s.count == 0) throw ValidationError(std::string(op) + ": no valid samples");
  return s;
}

}  // namespace

double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> truth) {
  require_pairs(preds.size(), truth.size(), "accuracy");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double macro_f1(std::span<const std::size_t> preds, std::span<const std::size_t> truth,
                std::size_t num_classes) {
  return macro_from_stats(tally(preds, truth, num_classes, "macro_f1"));
}

double micro_f1(std::span<const std::size_t> preds, std::span<const std::size_t> truth,
                std::size_t num_classes) {
  return micro_from_stats(tally(preds, truth, num_classes, "micro_f1"));
}

double mse_metric(std::span<const double> preds, std::span<const double> truth, MaskView mask) {
  const auto s = regression_tally(preds, truth, mask, "mse_metric");
  return s.sum_sq / static_cast<double>(s.count);
}

double mae_metric(std::span<const double> preds, std::span<const double> truth, MaskView mask) {
  const auto s = regression_tally(preds, truth, mask, "mae_metric");
  return s.sum_abs / static_cast<double>(s.count);
}

std::string_view f1_averaging_name(F1Averaging a) noexcept {
  return a == F1Averaging::macro ? "macro" : "micro";
}

std::optional<F1Averaging> parse_f1_averaging(std::string_view s) noexcept {
  if (s == "macro") return F1Averaging::macro;
  if (s == "micro") return F1Averaging::micro;
  return std::nullopt;
}

// ---------------------------------------------------------------- statistics

void ClassificationStats::add(std::size_t truth, std::size_t pred) {
  if (truth >= num_classes || pred >= num_classes) {
    throw ValidationError("classification label out of range: truth " + std::to_string(truth) +
                          ", prediction " + std::to_string(pred) + ", classes " +
                          std::to_string(num_classes));
  }
  ++counts[truth * num_classes + pred];
}

void ClassificationStats::merge(const ClassificationStats& other) {
  if (other.num_classes != num_classes) throw ShapeError("ClassificationStats: class count differs");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

std::size_t ClassificationStats::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

void RegressionStats::add(double pred, double truth) {
  const double d = pred - truth;
  sum_sq += d * d;
  sum_abs += std::abs(d);
  ++count;
}

void RegressionStats::merge(const RegressionStats& other) {
  sum_sq += other.sum_sq;
  sum_abs += other.sum_abs;
  count += other.count;
}

ClassificationReport make_classification_report(Task task, const ClassificationStats& stats,
                                                F1Averaging averaging) {
  ClassificationReport r;
  r.task = task;
  r.samples = stats.total();
  r.averaging = averaging;
  r.accuracy = trace_fraction(stats);
  auto pc = per_class(stats);
  r.f1 = averaging == F1Averaging::macro ? macro_from_stats(stats) : micro_from_stats(stats);
  r.precision = std::move(pc.precision);
  r.recall = std::move(pc.recall);
  r.class_f1 = std::move(pc.f1);
  r.confusion.assign(stats.num_classes, std::vector<std::size_t>(stats.num_classes));
  for (std::size_t i = 0; i < stats.num_classes; ++i)
    for (std::size_t j = 0; j < stats.num_classes; ++j) r.confusion[i][j] = stats.at(i, j);
  return r;
}

RegressionReport make_regression_report(Task task, const RegressionStats& stats, double divisor) {
  RegressionReport r;
  r.task = task;
  r.samples = stats.count;
  r.divisor = divisor;
  if (stats.count > 0) {
    const double n = static_cast<double>(stats.count);
    r.mse = stats.sum_sq / n;
    r.mae = stats.sum_abs / n;
    r.mse_raw = r.mse * divisor * divisor;
    r.mae_raw = r.mae * divisor;
  }
  return r;
}

const ClassificationReport* TaskReports::find(Task t) const {
  for (const auto& r : classification)
    if (r.task == t) return &r;
  return nullptr;
}

const RegressionReport* TaskReports::find_regression(Task t) const {
  for (const auto& r : regression)
    if (r.task == t) return &r;
  return nullptr;
}

SizeBucket size_bucket(double size_mm) noexcept {
  if (size_mm < 10.0) return SizeBucket::under_10;
  if (size_mm < 20.0) return SizeBucket::from_10_to_20;
  if (size_mm < 30.0) return SizeBucket::from_20_to_30;
  return SizeBucket::from_30;
}

std::string_view size_bucket_label(SizeBucket b) noexcept {
  switch (b) {
    case SizeBucket::under_10: return "<10";
    case SizeBucket::from_10_to_20: return "[10,20)";
    case SizeBucket::from_20_to_30: return "[20,30)";
    case SizeBucket::from_30: return ">=30";
  }
  return "?";
}

// ---------------------------------------------------------------- predictions

Predictions predict(const MultiTaskNet& net, const Dataset& ds,
                    const TaskArray<LossKind>& assignment, std::size_t chunk) {
  if (ds.feature_dim != net.config().input_dim) {
    throw ValidationError("predict: dataset has " + std::to_string(ds.feature_dim) +
                          " features, network expects " + std::to_string(net.config().input_dim));
  }
  const std::size_t n = ds.size();
  Predictions p;
  for (Task t : kClassificationTasks) {
    p.classes[t].resize(n);
    p.probabilities[t] = Matrix(n, net.config().num_classes[t]);
  }
  for (Task t : kRegressionTasks) p.values[t].resize(n);

  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t end = std::min(n, start + chunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto fwd = forward(net, batch_features(ds, idx));
    for (Task t : kClassificationTasks) {
      const Matrix& out = fwd.outputs[t];
      const std::size_t c = net.config().num_classes[t];
      Matrix probs(out.rows(), c);
      switch (assignment[t]) {
        case LossKind::label_smoothing: probs = softmax_rows(out); break;
        case LossKind::bce_with_logits:
          for (std::size_t i = 0; i < out.rows(); ++i) {
            const double z = out(i, 0);
            const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
            probs(i, 0) = 1.0 - s;
            probs(i, 1) = s;
          }
          break;
        case LossKind::mse:
          for (std::size_t i = 0; i < out.rows(); ++i) {
            const double scaled = std::round(out(i, 0) * static_cast<double>(c - 1));
            const auto k = static_cast<std::size_t>(std::clamp(scaled, 0.0, static_cast<double>(c - 1)));
            probs(i, k) = 1.0;
          }
          break;
      }
      for (std::size_t i = 0; i < out.rows(); ++i) {
        auto row = probs.row(i);
        const auto k = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        p.classes[t][start + i] = k;
        std::copy(row.begin(), row.end(), p.probabilities[t].row(start + i).begin());
      }
    }
    for (Task t : kRegressionTasks)
      for (std::size_t i = 0; i < end - start; ++i) p.values[t][start + i] = fwd.outputs[t](i, 0);
  }
  return p;
}

// ---------------------------------------------------------------- evaluation

namespace {

struct Accumulators {
  TaskArray<ClassificationStats> cls;
  TaskArray<RegressionStats> reg;
};

Accumulators accumulate(const Dataset& ds, const Predictions& preds,
                        std::span<const std::size_t> indices) {
  if (!ds.normalized) throw ValidationError("evaluate: dataset is not normalized");
  if (preds.size() != ds.size()) throw ShapeError("evaluate: predictions do not match dataset");
  Accumulators acc;
  for (Task t : kClassificationTasks) acc.cls[t] = ClassificationStats(ds.vocab.num_classes(t));
  auto visit = [&](std::size_t i) {
    const auto& rec = ds.records[i];
    for (Task t : kClassificationTasks)
      if (auto l = rec.label(t)) acc.cls[t].add(*l, preds.classes[t][i]);
    for (Task t : kRegressionTasks)
      if (auto v = rec.normalized_target(t)) acc.reg[t].add(preds.values[t][i], *v);
  };
  if (indices.empty()) {
    for (std::size_t i = 0; i < ds.size(); ++i) visit(i);
  } else {
    for (std::size_t i : indices) visit(i);
  }
  return acc;
}

TaskReports reports_from(const Accumulators& acc, const NormalizationSpec& norm,
                         F1Averaging averaging) {
  TaskReports out;
  for (Task t : kClassificationTasks)
    if (acc.cls[t].total() > 0)
      out.classification.push_back(make_classification_report(t, acc.cls[t], averaging));
  for (Task t : kRegressionTasks)
    if (acc.reg[t].count > 0)
      out.regression.push_back(make_regression_report(t, acc.reg[t], norm.divisor(t)));
  return out;
}

}  // namespace

TaskReports evaluate(const Dataset& ds, const Predictions& preds, F1Averaging averaging,
                     std::span<const std::size_t> indices) {
  return reports_from(accumulate(ds, preds, indices), ds.norm, averaging);
}

SizeStratifiedReport stratify_by_size(const Dataset& ds, const Predictions& preds,
                                      F1Averaging averaging) {
  std::array<std::vector<std::size_t>, kSizeBucketCount> members;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (auto s = ds.records[i].size_mm) members[static_cast<std::size_t>(size_bucket(*s))].push_back(i);
  SizeStratifiedReport r;
  for (std::size_t b = 0; b < kSizeBucketCount; ++b) {
    r.counts[b] = members[b].size();
    if (!members[b].empty()) r.buckets[b] = evaluate(ds, preds, averaging, members[b]);
  }
  return r;
}

EvalReport evaluate_report(const Dataset& ds, const Predictions& preds, F1Averaging averaging,
                           std::string model_name, std::string split) {
  EvalReport r;
  r.model_name = std::move(model_name);
  r.split = std::move(split);
  r.averaging = averaging;
  r.global = evaluate(ds, preds, averaging);
  if (ds.valid_count(Task::size) > 0) r.stratified = stratify_by_size(ds, preds, averaging);
  return r;
}

// ---------------------------------------------------------------- JSON

namespace {

using nlohmann::json;

Task task_from_json(const json& j) {
  auto t = parse_task(j.get<std::string>());
  if (!t) throw ValidationError("report: unknown task '" + j.get<std::string>() + "'");
  return *t;
}

json task_reports_json(const TaskReports& tr) {
  json cls = json::array();
  for (const auto& r : tr.classification) {
    cls.push_back({{"task", task_name(r.task)},
                   {"samples", r.samples},
                   {"accuracy", r.accuracy},
                   {"f1", r.f1},
                   {"f1_averaging", f1_averaging_name(r.averaging)},
                   {"precision", r.precision},
                   {"recall", r.recall},
                   {"class_f1", r.class_f1},
                   {"confusion", r.confusion}});
  }
  json reg = json::array();
  for (const auto& r : tr.regression) {
    reg.push_back({{"task", task_name(r.task)},
                   {"samples", r.samples},
                   {"unit", "normalized"},
                   {"mse", r.mse},
                   {"mae", r.mae},
                   {"mse_raw", r.mse_raw},
                   {"mae_raw", r.mae_raw},
                   {"divisor", r.divisor}});
  }
  return {{"classification", cls}, {"regression", reg}};
}

TaskReports task_reports_from_json(const json& j) {
  TaskReports tr;
  for (const auto& c : j.at("classification")) {
    ClassificationReport r;
    r.task = task_from_json(c.at("task"));
    c.at("samples").get_to(r.samples);
    c.at("accuracy").get_to(r.accuracy);
    c.at("f1").get_to(r.f1);
    auto avg = parse_f1_averaging(c.at("f1_averaging").get<std::string>());
    if (!avg) throw ValidationError("report: unknown f1_averaging");
    r.averaging = *avg;
    c.at("precision").get_to(r.precision);
    c.at("recall").get_to(r.recall);
    c.at("class_f1").get_to(r.class_f1);
    c.at("confusion").get_to(r.confusion);
    tr.classification.push_back(std::move(r));
  }
  for (const auto& g : j.at("regression")) {
    RegressionReport r;
    r.task = task_from_json(g.at("task"));
    g.at("samples").get_to(r.samples);
    g.at("mse").get_to(r.mse);
    g.at("mae").get_to(r.mae);
    g.at("mse_raw").get_to(r.mse_raw);
    g.at("mae_raw").get_to(r.mae_raw);
    g.at("divisor").get_to(r.divisor);
    tr.regression.push_back(r);
  }
  return tr;
}

}  // namespace

nlohmann::json report_to_json(std::span<const EvalReport> reports) {
  json list = json::array();
  for (const auto& rep : reports) {
    json j = {{"model_name", rep.model_name},
              {"split", rep.split},
              {"f1_averaging", f1_averaging_name(rep.averaging)},
              {"global", task_reports_json(rep.global)}};
    if (rep.stratified) {
      json buckets = json::array();
      for (SizeBucket b : kSizeBuckets) {
        const auto i = static_cast<std::size_t>(b);
        const auto& br = rep.stratified->buckets[i];
        buckets.push_back({{"range_mm", size_bucket_label(b)},
                           {"count", rep.stratified->counts[i]},
                           {"reports", br ? task_reports_json(*br) : json()}});
      }
      j["stratified"] = {{"buckets", buckets}};
    } else {
      j["stratified"] = nullptr;
    }
    list.push_back(std::move(j));
  }
  return {{"schema_version", kReportSchemaVersion}, {"reports", list}};
}

std::vector<EvalReport> reports_from_json(const nlohmann::json& doc) {
  if (doc.at("schema_version").get<int>() != kReportSchemaVersion) {
    throw ValidationError("report: unsupported schema_version");
  }
  std::vector<EvalReport> out;
  for (const auto& j : doc.at("reports")) {
    EvalReport rep;
    j.at("model_name").get_to(rep.model_name);
    j.at("split").get_to(rep.split);
    auto avg = parse_f1_averaging(j.at("f1_averaging").get<std::string>());
    if (!avg) throw ValidationError("report: unknown f1_averaging");
    rep.averaging = *avg;
    rep.global = task_reports_from_json(j.at("global"));
    const auto& strat = j.at("stratified");
    if (!strat.is_null()) {
      SizeStratifiedReport s;
      const auto& buckets = strat.at("buckets");
      if (buckets.size() != kSizeBucketCount) throw ValidationError("report: expected 4 size buckets");
      for (std::size_t i = 0; i < kSizeBucketCount; ++i) {
        buckets[i].at("count").get_to(s.counts[i]);
        const auto& r = buckets[i].at("reports");
        if (!r.is_null()) s.buckets[i] = task_reports_from_json(r);
      }
      rep.stratified = std::move(s);
    }
    out.push_back(std::move(rep));
  }
  return out;
}

// ---------------------------------------------------------------- text

namespace {

std::string num(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

// Left-aligned cell; always leaves at least one separating space.
std::string pad(std::string s, std::size_t width) {
  s.append(s.size() + 1 < width ? width - s.size() : 1, ' ');
  return s;
}

constexpr int kClsDecimals = 4;
constexpr int kRegDecimals = 6;
constexpr int kRawDecimals = 4;
constexpr std::size_t kLabelWidth = 16;
constexpr std::size_t kCellWidth = 12;

// Column orders of the classic comparison tables.
constexpr std::array<Task, 4> kOverallClsOrder = {Task::subtlety, Task::state, Task::diagnosis,
                                                  Task::z};
constexpr std::array<Task, 4> kBucketClsOrder = {Task::subtlety, Task::state, Task::z,
                                                 Task::diagnosis};

std::string_view column_title(Task t) {
  switch (t) {
    case Task::subtlety: return "Subtlety";
    case Task::state: return "State";
    case Task::z: return "Location(Z)";
    case Task::diagnosis: return "Diagnosis";
    case Task::x: return "x";
    case Task::y: return "y";
    case Task::size: return "Size";
  }
  return "";
}

template <std::size_t N>
std::string cls_header(const char* first, const std::array<Task, N>& order) {
  std::string top = pad(first, kLabelWidth);
  std::string sub = pad("", kLabelWidth);
  for (Task t : order) {
    top += pad(std::string(column_title(t)), 2 * kCellWidth);
    sub += pad("Acc", kCellWidth) + pad("F1", kCellWidth);
  }
  return top + "\n" + sub + "\n";
}

std::string reg_header(const char* first) {
  std::string top = pad(first, kLabelWidth);
  std::string sub = pad("", kLabelWidth);
  for (Task t : kRegressionTasks) {
    top += pad(std::string(column_title(t)), 2 * kCellWidth);
    sub += pad("MSE", kCellWidth) + pad("MAE", kCellWidth);
  }
  return top + "\n" + sub + "\n";
}

template <std::size_t N>
std::string cls_row(const std::string& label, const TaskReports* tr,
                    const std::array<Task, N>& order) {
  std::string row = pad(label, kLabelWidth);
  for (Task t : order) {
    const auto* r = tr ? tr->find(t) : nullptr;
    row += pad(r ? num(r->accuracy, kClsDecimals) : "-", kCellWidth);
    row += pad(r ? num(r->f1, kClsDecimals) : "-", kCellWidth);
  }
  while (!row.empty() && row.back() == ' ') row.pop_back();
  return row + "\n";
}

std::string reg_row(const std::string& label, const TaskReports* tr, bool raw) {
  std::string row = pad(label, kLabelWidth);
  for (Task t : kRegressionTasks) {
    const auto* r = tr ? tr->find_regression(t) : nullptr;
    const int d = raw ? kRawDecimals : kRegDecimals;
    row += pad(r ? num(raw ? r->mse_raw : r->mse, d) : "-", kCellWidth);
    row += pad(r ? num(raw ? r->mae_raw : r->mae, d) : "-", kCellWidth);
  }
  while (!row.empty() && row.back() == ' ') row.pop_back();
  return row + "\n";
}

}  // namespace

std::string render_text(std::span<const EvalReport> reports) {
  std::ostringstream out;
  for (const auto& rep : reports) {
    out << "== " << rep.model_name << " [" << rep.split << "], F1 averaging: "
        << f1_averaging_name(rep.averaging) << "\n\n";
    out << "Classification performance\n" << cls_header("model", kOverallClsOrder)
        << cls_row(rep.model_name, &rep.global, kOverallClsOrder) << "\n";
    out << "Regression performance (normalized units)\n" << reg_header("model")
        << reg_row(rep.model_name, &rep.global, false) << "\n";
    out << "Regression performance (raw units: px, px, mm)\n" << reg_header("model")
        << reg_row(rep.model_name, &rep.global, true) << "\n";
    if (rep.stratified) {
      out << "Impact of nodule size on classification performance\n"
          << cls_header("Size range(mm)", kBucketClsOrder);
      for (SizeBucket b : kSizeBuckets) {
        const auto& br = rep.stratified->buckets[static_cast<std::size_t>(b)];
        out << cls_row(std::string(size_bucket_label(b)), br ? &*br : nullptr, kBucketClsOrder);
      }
      out << "\nImpact of nodule size on regression performance (normalized units)\n"
          << reg_header("Size range(mm)");
      for (SizeBucket b : kSizeBuckets) {
        const auto& br = rep.stratified->buckets[static_cast<std::size_t>(b)];
        out << reg_row(std::string(size_bucket_label(b)), br ? &*br : nullptr, false);
      }
      out << "\n";
    }
  }
  return out.str();
}

std::string emit_report(std::span<const EvalReport> reports, ReportFormat format) {
  if (format == ReportFormat::json) return report_to_json(reports).dump(2) + "\n";
  return render_text(reports);
}

}  // namespace resmtl
