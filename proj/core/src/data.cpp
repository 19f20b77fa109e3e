#include "resmtl/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "resmtl/error.hpp"
#include "resmtl/rng.hpp"

namespace resmtl {

// ---------------------------------------------------------------- records

std::optional<std::size_t> SampleRecord::label(Task t) const {
  switch (t) {
    case Task::subtlety: return subtlety;
    case Task::state: return state;
    case Task::z: return z;
    case Task::diagnosis: return diagnosis;
    default: return std::nullopt;
  }
}

std::optional<double> SampleRecord::raw_target(Task t) const {
  switch (t) {
    case Task::x: return x_px;
    case Task::y: return y_px;
    case Task::size: return size_mm;
    default: return std::nullopt;
  }
}

std::optional<double> SampleRecord::normalized_target(Task t) const {
  switch (t) {
    case Task::x: return x_norm;
    case Task::y: return y_norm;
    case Task::size: return size_norm;
    default: return std::nullopt;
  }
}

std::size_t Dataset::valid_count(Task t) const {
  return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [t](const auto& r) {
    return is_classification(t) ? r.label(t).has_value() : r.raw_target(t).has_value();
  }));
}

// ---------------------------------------------------------------- vocab

namespace {

std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

TaskArray<std::size_t> LabelVocab::class_counts() const {
  TaskArray<std::size_t> out{};
  for (Task t : kClassificationTasks) out[t] = labels[t].size();
  return out;
}

std::optional<std::size_t> LabelVocab::find(Task t, std::string_view raw) const {
  const auto& list = labels[t];
  for (std::size_t i = 0; i < list.size(); ++i)
    if (list[i] == raw) return i;
  return std::nullopt;
}

std::vector<std::string> LabelVocab::sorted_labels(std::vector<std::string> raw) {
  std::sort(raw.begin(), raw.end());
  raw.erase(std::unique(raw.begin(), raw.end()), raw.end());
  const bool numeric = std::all_of(raw.begin(), raw.end(), [](const std::string& s) {
    auto v = parse_double(s);
    return v && std::isfinite(*v);
  });
  if (numeric) {
    std::stable_sort(raw.begin(), raw.end(), [](const std::string& a, const std::string& b) {
      return *parse_double(a) < *parse_double(b);
    });
  }
  return raw;
}

void to_json(nlohmann::json& j, const LabelVocab& v) {
  j = nlohmann::json::object();
  for (Task t : kClassificationTasks) j[std::string(task_name(t))] = v.labels[t];
}

void from_json(const nlohmann::json& j, LabelVocab& v) {
  for (Task t : kClassificationTasks) j.at(std::string(task_name(t))).get_to(v.labels[t]);
}

// ---------------------------------------------------------------- normalization

void NormalizationSpec::validate() const {
  if (!(image_width_px > 0.0) || !(image_height_px > 0.0)) {
    throw ValidationError("normalization: image dimensions must be > 0");
  }
  if (size_divisor_mm && !(*size_divisor_mm > 0.0)) {
    throw ValidationError("normalization: size_divisor_mm must be > 0");
  }
}

double NormalizationSpec::divisor(Task t) const {
  switch (t) {
    case Task::x: return image_width_px;
    case Task::y: return image_height_px;
    case Task::size:
      if (!size_divisor_mm) throw ValidationError("normalization: size divisor not resolved");
      return *size_divisor_mm;
    default: throw ValidationError("normalization: '" + std::string(task_name(t)) +
                                   "' is not a regression task");
  }
}

void to_json(nlohmann::json& j, const NormalizationSpec& n) {
  j = {{"image_width_px", n.image_width_px}, {"image_height_px", n.image_height_px}};
  j["size_divisor_mm"] = n.size_divisor_mm ? nlohmann::json(*n.size_divisor_mm) : nlohmann::json();
}

void from_json(const nlohmann::json& j, NormalizationSpec& n) {
  n.image_width_px = j.value("image_width_px", 2048.0);
  n.image_height_px = j.value("image_height_px", 2048.0);
  if (j.contains("size_divisor_mm") && !j.at("size_divisor_mm").is_null()) {
    n.size_divisor_mm = j.at("size_divisor_mm").get<double>();
  } else {
    n.size_divisor_mm.reset();
  }
}

Dataset normalize_targets(Dataset ds) {
  ds.norm.validate();
  if (!ds.norm.size_divisor_mm) {
    double max_size = 0.0;
    for (const auto& r : ds.records)
      if (r.size_mm) max_size = std::max(max_size, *r.size_mm);
    ds.norm.size_divisor_mm = max_size > 0.0 ? max_size : 1.0;
  }
  std::size_t out_of_range = 0;
  for (auto& r : ds.records) {
    auto project = [&](Task t, const std::optional<double>& raw, std::optional<double>& dst) {
      dst.reset();
      if (!raw) return;
      dst = ds.norm.normalize(t, *raw);
      if (*dst < 0.0 || *dst > 1.0) ++out_of_range;
    };
    project(Task::x, r.x_px, r.x_norm);
    project(Task::y, r.y_px, r.y_norm);
    project(Task::size, r.size_mm, r.size_norm);
  }
  if (out_of_range > 0) {
    ds.warnings.push_back(std::to_string(out_of_range) +
                          " regression target(s) normalized outside [0, 1]");
  }
  ds.normalized = true;
  return ds;
}

// ---------------------------------------------------------------- CSV

namespace {

constexpr std::array<std::string_view, 7> kLabelColumns = {
    "subtlety", "state", "z", "diagnosis", "x_px", "y_px", "size_mm"};

std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"' && cur.empty()) {
      quoted = true;
    } else if (ch == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  cells.push_back(std::move(cur));
  return cells;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + '"';
}

std::string at_line(std::size_t line) { return "line " + std::to_string(line) + ": "; }

struct RawRow {
  std::size_t line;
  std::vector<std::string> cells;
};

}  // namespace

Dataset read_csv(std::istream& in, const CsvOptions& options) {
  options.norm.validate();
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    header = split_cells(line);
    break;
  }
  if (header.empty()) throw ValidationError("csv: missing header row");
  if (header.size() < 1 + kLabelColumns.size() || header.front() != "id") {
    throw ValidationError(at_line(line_no) + "header must start with 'id' and end with "
                          "subtlety,state,z,diagnosis,x_px,y_px,size_mm");
  }
  const std::size_t dim = header.size() - 1 - kLabelColumns.size();
  for (std::size_t i = 0; i < dim; ++i) {
    if (header[1 + i] != "f" + std::to_string(i)) {
      throw ValidationError(at_line(line_no) + "expected feature column 'f" + std::to_string(i) +
                            "', found '" + header[1 + i] + "'");
    }
  }
  for (std::size_t i = 0; i < kLabelColumns.size(); ++i) {
    if (header[1 + dim + i] != kLabelColumns[i]) {
      throw ValidationError(at_line(line_no) + "expected column '" +
                            std::string(kLabelColumns[i]) + "', found '" + header[1 + dim + i] +
                            "'");
    }
  }
  if (dim == 0) throw ValidationError("csv: header declares no feature columns");
  if (options.expected_feature_dim && *options.expected_feature_dim != dim) {
    throw ValidationError("csv: feature width mismatch, expected " +
                          std::to_string(*options.expected_feature_dim) + ", file has " +
                          std::to_string(dim));
  }

  std::vector<RawRow> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_cells(line);
    if (cells.size() != header.size()) {
      const long got = static_cast<long>(cells.size()) - 1 - static_cast<long>(kLabelColumns.size());
      throw ValidationError(at_line(line_no) + "inconsistent feature width, expected " +
                            std::to_string(dim) + " features (" + std::to_string(header.size()) +
                            " cells), got " + std::to_string(got) + " (" +
                            std::to_string(cells.size()) + " cells)");
    }
    rows.push_back({line_no, std::move(cells)});
  }

  Dataset ds;
  ds.feature_dim = dim;
  ds.norm = options.norm;
  if (options.vocab) {
    ds.vocab = *options.vocab;
  } else {
    for (std::size_t k = 0; k < kClassificationTasks.size(); ++k) {
      std::vector<std::string> seen;
      for (const auto& r : rows)
        if (!r.cells[1 + dim + k].empty()) seen.push_back(r.cells[1 + dim + k]);
      ds.vocab.labels[kClassificationTasks[k]] = LabelVocab::sorted_labels(std::move(seen));
    }
  }

  ds.records.reserve(rows.size());
  for (const auto& row : rows) {
    const auto& cells = row.cells;
    SampleRecord rec;
    rec.id = cells[0];
    rec.features.resize(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      auto v = parse_double(cells[1 + i]);
      if (!v || !std::isfinite(*v)) {
        throw ValidationError(at_line(row.line) + "feature f" + std::to_string(i) +
                              " is not a finite number: '" + cells[1 + i] + "'");
      }
      rec.features[i] = *v;
    }
    auto label = [&](Task t, std::size_t col) -> std::optional<std::size_t> {
      const std::string& cell = cells[1 + dim + col];
      if (cell.empty()) return std::nullopt;
      auto idx = ds.vocab.find(t, cell);
      if (!idx) {
        throw ValidationError(at_line(row.line) + "label '" + cell + "' for task '" +
                              std::string(task_name(t)) + "' is not in the vocabulary");
      }
      return idx;
    };
    auto number = [&](std::size_t col) -> std::optional<double> {
      const std::string& cell = cells[1 + dim + col];
      if (cell.empty()) return std::nullopt;
      auto v = parse_double(cell);
      if (!v || !std::isfinite(*v)) {
        throw ValidationError(at_line(row.line) + "column '" + std::string(kLabelColumns[col]) +
                              "' is not a finite number: '" + cell + "'");
      }
      return v;
    };
    rec.subtlety = label(Task::subtlety, 0);
    rec.state = label(Task::state, 1);
    if (!rec.state && options.require_state) {
      throw ValidationError(at_line(row.line) + "state is required");
    }
    rec.z = label(Task::z, 2);
    rec.diagnosis = label(Task::diagnosis, 3);
    rec.x_px = number(4);
    rec.y_px = number(5);
    rec.size_mm = number(6);
    if (rec.size_mm && !(*rec.size_mm > 0.0)) {
      throw ValidationError(at_line(row.line) + "size_mm must be > 0");
    }
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

Dataset load_csv(const std::filesystem::path& path, const CsvOptions& options) {
  std::ifstream in(path);
  if (!in) throw ValidationError("csv: cannot open '" + path.string() + "'");
  try {
    return read_csv(in, options);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_csv(std::ostream& out, const Dataset& ds) {
  out << "id";
  for (std::size_t i = 0; i < ds.feature_dim; ++i) out << ",f" << i;
  for (auto col : kLabelColumns) out << ',' << col;
  out << '\n';
  for (const auto& r : ds.records) {
    out << csv_escape(r.id);
    for (double v : r.features) out << ',' << format_double(v);
    for (Task t : kClassificationTasks) {
      out << ',';
      if (auto l = r.label(t)) out << csv_escape(ds.vocab.name(t, *l));
    }
    for (Task t : kRegressionTasks) {
      out << ',';
      if (auto v = r.raw_target(t)) out << format_double(*v);
    }
    out << '\n';
  }
}

void save_csv(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("csv: cannot open '" + path.string() + "' for writing");
  write_csv(out, ds);
  if (!out) throw ValidationError("csv: write to '" + path.string() + "' failed");
}

// ---------------------------------------------------------------- split

std::pair<Dataset, Dataset> split(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ValidationError("split: fraction must lie in (0, 1), got " + std::to_string(fraction));
  }
  const std::size_t n = ds.size();
  const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (n_train == 0 || n_train >= n) {
    throw ValidationError("split: fraction " + std::to_string(fraction) + " of " +
                          std::to_string(n) + " records leaves one side empty");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::sort(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());

  auto take = [&](std::size_t from, std::size_t to) {
    Dataset part;
    part.vocab = ds.vocab;
    part.norm = ds.norm;
    part.feature_dim = ds.feature_dim;
    part.normalized = ds.normalized;
    part.records.reserve(to - from);
    for (std::size_t i = from; i < to; ++i) part.records.push_back(ds.records[order[i]]);
    return part;
  };
  return {take(0, n_train), take(n_train, n)};
}

// ---------------------------------------------------------------- synthetic data

SynthSpec::SynthSpec() {
  num_classes[Task::subtlety] = 5;
  num_classes[Task::state] = 2;
  num_classes[Task::z] = 3;
  num_classes[Task::diagnosis] = 2;
}

std::size_t SynthSpec::signal_dim() const {
  std::size_t s = kRegressionTasks.size();
  for (Task t : kClassificationTasks) s += num_classes[t];
  return s;
}

void SynthSpec::validate() const {
  if (samples == 0) throw ValidationError("synth: samples must be >= 1");
  for (Task t : kClassificationTasks) {
    if (num_classes[t] < 2) {
      throw ValidationError("synth: task '" + std::string(task_name(t)) + "' needs >= 2 classes");
    }
    const auto& p = priors[t];
    if (p.empty()) continue;
    if (p.size() != num_classes[t]) {
      throw ValidationError("synth: priors for '" + std::string(task_name(t)) + "' need " +
                            std::to_string(num_classes[t]) + " entries");
    }
    const double sum = std::accumulate(p.begin(), p.end(), 0.0);
    if (std::any_of(p.begin(), p.end(), [](double v) { return !(v >= 0.0); }) || !(sum > 0.0)) {
      throw ValidationError("synth: priors for '" + std::string(task_name(t)) +
                            "' must be non-negative with positive sum");
    }
  }
  if (feature_dim < signal_dim()) {
    throw ValidationError("synth: feature_dim " + std::to_string(feature_dim) +
                          " is smaller than the signal width " + std::to_string(signal_dim()));
  }
  if (!(noise >= 0.0) || !(small_nodule_noise >= 0.0)) {
    throw ValidationError("synth: noise levels must be >= 0");
  }
  if (!(non_nodule_fraction >= 0.0 && non_nodule_fraction < 1.0)) {
    throw ValidationError("synth: non_nodule_fraction must lie in [0, 1)");
  }
  if (!(size_min_mm > 0.0 && size_max_mm > size_min_mm)) {
    throw ValidationError("synth: need 0 < size_min_mm < size_max_mm");
  }
  norm.validate();
}

namespace {

/// Rows are orthonormal vectors in R^cols (modified Gram-Schmidt on Gaussian draws).
Matrix random_orthonormal_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix q(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    auto r = q.row(i);
    for (;;) {
      for (double& v : r) v = rng.normal();
      for (std::size_t k = 0; k < i; ++k) {
        auto prev = q.row(k);
        const double dot = std::inner_product(r.begin(), r.end(), prev.begin(), 0.0);
        for (std::size_t j = 0; j < cols; ++j) r[j] -= dot * prev[j];
      }
      const double norm = std::sqrt(std::inner_product(r.begin(), r.end(), r.begin(), 0.0));
      if (norm > 1e-6) {
        for (double& v : r) v /= norm;
        break;
      }
    }
  }
  return q;
}

std::size_t draw_class(Rng& rng, const std::vector<double>& priors, std::size_t first,
                       std::size_t count) {
  if (priors.empty()) return first + rng.uniform_index(count - first);
  double total = 0.0;
  for (std::size_t c = first; c < count; ++c) total += priors[c];
  double u = rng.uniform01() * total;
  for (std::size_t c = first; c < count; ++c) {
    if (u < priors[c]) return c;
    u -= priors[c];
  }
  return count - 1;
}

}  // namespace

Dataset synth_generate(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  const std::size_t sdim = spec.signal_dim();
  const Matrix mixing = random_orthonormal_rows(sdim, spec.feature_dim, rng);

  Dataset ds;
  ds.feature_dim = spec.feature_dim;
  ds.norm = spec.norm;
  for (Task t : kClassificationTasks) {
    for (std::size_t c = 0; c < spec.num_classes[t]; ++c)
      ds.vocab.labels[t].push_back(std::to_string(c + 1));
  }

  const std::size_t width = std::to_string(spec.samples).size();
  Matrix signal(1, sdim);
  for (std::size_t i = 0; i < spec.samples; ++i) {
    SampleRecord rec;
    std::string num = std::to_string(i);
    rec.id = "synth_" + std::string(width - num.size(), '0') + num;
    signal.fill(0.0);

    const bool nodule = !(rng.uniform01() < spec.non_nodule_fraction);
    std::size_t offset = 0;
    for (Task t : kClassificationTasks) {
      const std::size_t c_count = spec.num_classes[t];
      std::optional<std::size_t> cls;
      if (t == Task::state) {
        cls = nodule ? draw_class(rng, spec.priors[t], spec.non_nodule_fraction > 0.0 ? 1 : 0,
                                  c_count)
                     : 0;
      } else if (nodule) {
        cls = draw_class(rng, spec.priors[t], 0, c_count);
      }
      if (cls) signal(0, offset + *cls) = spec.class_separation;
      switch (t) {
        case Task::subtlety: rec.subtlety = cls; break;
        case Task::state: rec.state = cls; break;
        case Task::z: rec.z = cls; break;
        default: rec.diagnosis = cls; break;
      }
      offset += c_count;
    }

    const double ux = rng.uniform01();
    const double uy = rng.uniform01();
    const double us = rng.uniform01();
    if (nodule) {
      rec.x_px = ux * spec.norm.image_width_px;
      rec.y_px = uy * spec.norm.image_height_px;
      rec.size_mm = spec.size_min_mm + us * (spec.size_max_mm - spec.size_min_mm);
      const double extra = spec.small_nodule_noise * (1.0 - us);
      const double latent[3] = {ux, uy, us};
      for (std::size_t k = 0; k < 3; ++k) {
        const double jitter = extra > 0.0 ? rng.normal(0.0, extra) : 0.0;
        signal(0, offset + k) = (latent[k] - 0.5 + jitter) * spec.regression_scale;
      }
    }

    Matrix f = matmul(signal, mixing);
    rec.features.assign(f.values().begin(), f.values().end());
    if (spec.noise > 0.0)
      for (double& v : rec.features) v += rng.normal(0.0, spec.noise);
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

// ---------------------------------------------------------------- batches

Matrix batch_features(const Dataset& ds, std::span<const std::size_t> indices) {
  Matrix out(indices.size(), ds.feature_dim);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& f = ds.records.at(indices[i]).features;
    std::copy(f.begin(), f.end(), out.row(i).begin());
  }
  return out;
}

BatchTargets batch_targets(const Dataset& ds, std::span<const std::size_t> indices) {
  if (!ds.normalized) throw ValidationError("batch_targets: dataset is not normalized");
  BatchTargets bt;
  const std::size_t n = indices.size();
  for (Task t : kAllTasks) {
    auto& tt = bt[t];
    tt.mask.assign(n, 0);
    if (is_classification(t)) {
      tt.classes.assign(n, 0);
    } else {
      tt.values.assign(n, 0.0);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto& r = ds.records.at(indices[i]);
      if (is_classification(t)) {
        if (auto l = r.label(t)) {
          tt.classes[i] = *l;
          tt.mask[i] = 1;
        }
      } else if (auto v = r.normalized_target(t)) {
        tt.values[i] = *v;
        tt.mask[i] = 1;
      }
    }
  }
  return bt;
}

}  // namespace resmtl
