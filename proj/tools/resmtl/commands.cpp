#include "resmtl/commands.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "resmtl/checkpoint.hpp"
#include "resmtl/data.hpp"
#include "resmtl/error.hpp"
#include "resmtl/eval.hpp"
#include "resmtl/gradcheck.hpp"
#include "resmtl/network.hpp"
#include "resmtl/optim.hpp"
#include "resmtl/run_config.hpp"

namespace resmtl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::string out_dir = "out";
  std::optional<std::string> input;
  std::optional<std::string> checkpoint;
  bool corrupt_backward = false;
};

struct Context {
  RunConfig cfg;
  Options opts;
  std::ostream& out;
  std::ostream& err;

  fs::path out_path(const char* name) const { return fs::path(opts.out_dir) / name; }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ValidationError("cannot open '" + path.string() + "' for writing");
  f << text;
  if (!f) throw ValidationError("write to '" + path.string() + "' failed");
}

void prepare_out_dir(const Context& ctx) {
  std::error_code ec;
  fs::create_directories(ctx.opts.out_dir, ec);
  if (ec) {
    throw ValidationError("cannot create output directory '" + ctx.opts.out_dir + "': " +
                          ec.message());
  }
  write_text(ctx.out_path("config.json"), to_json(ctx.cfg).dump(2) + "\n");
}

fs::path data_path(const Context& ctx) {
  if (ctx.cfg.data.csv) return *ctx.cfg.data.csv;
  throw ValidationError("no input data: set data.csv in the config or pass --input");
}

fs::path checkpoint_path(const Context& ctx) {
  return ctx.opts.checkpoint ? fs::path(*ctx.opts.checkpoint) : ctx.out_path("checkpoint.bin");
}

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

// Everything eval and predict need to interpret a checkpoint.
struct ModelMeta {
  LabelVocab vocab;
  NormalizationSpec norm;
  TaskArray<LossKind> losses{};
  std::string model_name;
};

json meta_to_json(const ModelMeta& m, const LossSettings& settings) {
  json losses = json::object();
  for (Task t : kAllTasks) losses[std::string(task_name(t))] = loss_kind_name(m.losses[t]);
  return {{"vocab", m.vocab},
          {"normalization", m.norm},
          {"losses", losses},
          {"label_smoothing_alpha", settings.alpha},
          {"literal_label_smoothing", settings.literal_label_smoothing},
          {"model_name", m.model_name}};
}

ModelMeta meta_from_json(const json& j) {
  ModelMeta m;
  try {
    j.at("vocab").get_to(m.vocab);
    j.at("normalization").get_to(m.norm);
    j.at("model_name").get_to(m.model_name);
    for (Task t : kAllTasks) {
      auto kind = parse_loss_kind(j.at("losses").at(std::string(task_name(t))).get<std::string>());
      if (!kind) throw ValidationError("checkpoint: unknown loss kind");
      m.losses[t] = *kind;
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint: metadata incomplete: ") + e.what());
  }
  return m;
}

void check_compatible(const MultiTaskNet& net, const ModelMeta& meta) {
  for (Task t : kClassificationTasks) {
    if (meta.vocab.num_classes(t) != net.config().num_classes[t]) {
      throw ValidationError("checkpoint: vocabulary for '" + std::string(task_name(t)) +
                            "' does not match the network head");
    }
  }
}

Dataset load_for_model(const Context& ctx, const MultiTaskNet& net, const ModelMeta& meta,
                       bool require_state) {
  CsvOptions opts;
  opts.vocab = meta.vocab;
  opts.expected_feature_dim = net.config().input_dim;
  opts.norm = meta.norm;
  opts.require_state = require_state;
  return normalize_targets(load_csv(data_path(ctx), opts));
}

// ---------------------------------------------------------------- synth

int cmd_synth(Context& ctx) {
  prepare_out_dir(ctx);
  SynthSpec spec = ctx.cfg.synth;
  spec.norm = ctx.cfg.normalization;
  const Dataset ds = synth_generate(spec, ctx.cfg.seed);
  const fs::path path = ctx.out_path("synth.csv");
  save_csv(path, ds);
  ctx.out << "wrote " << ds.size() << " records with " << ds.feature_dim << " features to "
          << path.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- train

int cmd_train(Context& ctx) {
  const fs::path input = data_path(ctx);
  if (!fs::exists(input)) throw ValidationError("data file not found: " + input.string());
  CsvOptions csv;
  csv.norm = ctx.cfg.normalization;
  Dataset full = normalize_targets(load_csv(input, csv));
  for (const auto& w : full.warnings) ctx.err << "warning: " << w << "\n";

  const auto counts = full.vocab.class_counts();
  for (Task t : kClassificationTasks) {
    if (counts[t] < 2) {
      throw ValidationError("task '" + std::string(task_name(t)) + "' has " +
                            std::to_string(counts[t]) + " distinct label(s); need at least 2");
    }
  }
  const LossSettings settings = ctx.cfg.loss_settings(counts);
  TrainConfig tc = ctx.cfg.train_config();
  tc.losses = settings;
  tc.trace_path = ctx.out_path("trace.jsonl");
  tc.validate();

  if (std::all_of(tc.weights.lambda.begin(), tc.weights.lambda.end(),
                  [](double l) { return l == 0.0; })) {
    ctx.err << "warning: every task weight is zero; parameters will keep their initial values\n";
  }

  std::optional<Dataset> held_out;
  Dataset train_set;
  if (ctx.cfg.data.split_fraction) {
    auto [tr, te] = split(full, *ctx.cfg.data.split_fraction, ctx.cfg.seed);
    train_set = std::move(tr);
    held_out = std::move(te);
  } else {
    train_set = std::move(full);
  }

  prepare_out_dir(ctx);
  Rng init_rng(ctx.cfg.seed);
  NetConfig nc = make_net_config(train_set.feature_dim, ctx.cfg.network.hidden,
                                 ctx.cfg.network.dropout_rate, counts, settings.assignment);
  nc.dropout_in_residual = ctx.cfg.network.dropout_in_residual;
  MultiTaskNet net(nc, init_rng);

  const std::size_t report_every = std::max<std::size_t>(1, tc.epochs / 10);
  auto on_epoch = [&](const EpochRecord& r) {
    if (r.epoch % report_every != 0 && r.epoch != tc.epochs) return;
    ctx.out << "epoch " << r.epoch << "  total_loss " << fmt(r.total_loss);
    if (r.val_total_loss) ctx.out << "  val_total_loss " << fmt(*r.val_total_loss);
    ctx.out << "\n";
  };
  const TrainTrace trace = train(net, train_set, tc, held_out ? &*held_out : nullptr, on_epoch);

  ModelMeta meta{train_set.vocab, train_set.norm, settings.assignment, ctx.cfg.model_name};
  save_checkpoint(checkpoint_path(ctx), net, meta_to_json(meta, settings));

  const auto& last = trace.epochs.back();
  ctx.out << "final per-task losses:";
  for (Task t : kAllTasks) ctx.out << " " << task_name(t) << "=" << fmt(last.task_loss[t]);
  ctx.out << "\n" << trace.optimizer_steps << " optimizer steps; checkpoint "
          << checkpoint_path(ctx).string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- eval

int cmd_eval(Context& ctx) {
  const fs::path ck_path = checkpoint_path(ctx);
  if (!fs::exists(ck_path)) throw ValidationError("checkpoint not found: " + ck_path.string());
  Checkpoint ck = load_checkpoint(ck_path);
  const ModelMeta meta = meta_from_json(ck.metadata);
  check_compatible(ck.net, meta);
  const Dataset full = load_for_model(ctx, ck.net, meta, true);

  std::vector<std::pair<std::string, Dataset>> parts;
  std::string mode = ctx.cfg.data.eval_split;
  if (mode == "auto") mode = ctx.cfg.data.split_fraction ? "both" : "all";
  if (mode == "all") {
    parts.emplace_back("all", full);
  } else {
    auto [tr, te] = split(full, *ctx.cfg.data.split_fraction, ctx.cfg.seed);
    if (mode == "train" || mode == "both") parts.emplace_back("train", std::move(tr));
    if (mode == "test" || mode == "both") parts.emplace_back("test", std::move(te));
  }

  std::vector<EvalReport> reports;
  for (const auto& [name, ds] : parts) {
    const Predictions preds = predict(ck.net, ds, meta.losses);
    reports.push_back(evaluate_report(ds, preds, ctx.cfg.report.f1_averaging, meta.model_name, name));
  }
  prepare_out_dir(ctx);
  write_text(ctx.out_path("report.json"), emit_report(reports, ReportFormat::json));
  const std::string text = emit_report(reports, ReportFormat::text);
  write_text(ctx.out_path("report.txt"), text);
  ctx.out << text;
  return kExitOk;
}

// ---------------------------------------------------------------- gradcheck

int cmd_gradcheck(Context& ctx) {
  GradcheckOptions o = ctx.cfg.gradcheck_options();
  o.corrupt_backward = ctx.opts.corrupt_backward;
  const GradcheckResult r = run_gradcheck(o);
  ctx.out << std::left << std::setw(28) << "parameter" << std::setw(10) << "entries"
          << "max rel error\n";
  for (const auto& l : r.per_layer) {
    ctx.out << std::setw(28) << l.name << std::setw(10) << l.entries << std::scientific
            << std::setprecision(3) << l.max_error << std::defaultfloat << "\n";
  }
  ctx.out << "max relative error " << std::scientific << std::setprecision(3) << r.max_error
          << std::defaultfloat << " (tolerance " << o.tolerance << ")\n";
  if (!r.passed) {
    ctx.out << "FAIL worst parameter " << r.worst_param << "[" << r.worst_index << "] seed "
            << r.worst_seed << "\n";
    return kExitGradcheck;
  }
  ctx.out << "PASS\n";
  return kExitOk;
}

// ---------------------------------------------------------------- predict

int cmd_predict(Context& ctx) {
  const fs::path ck_path = checkpoint_path(ctx);
  if (!fs::exists(ck_path)) throw ValidationError("checkpoint not found: " + ck_path.string());
  Checkpoint ck = load_checkpoint(ck_path);
  const ModelMeta meta = meta_from_json(ck.metadata);
  check_compatible(ck.net, meta);
  const Dataset ds = load_for_model(ctx, ck.net, meta, false);
  const Predictions preds = predict(ck.net, ds, meta.losses);

  std::ostringstream csv;
  csv << "id";
  for (Task t : kClassificationTasks) {
    const std::string name(task_name(t));
    csv << ',' << name << "_class," << name << "_label";
    for (std::size_t c = 0; c < meta.vocab.num_classes(t); ++c) csv << ',' << name << "_p" << c;
  }
  csv << ",x_px,y_px,size_mm\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    csv << ds.records[i].id;
    for (Task t : kClassificationTasks) {
      const std::size_t k = preds.classes[t][i];
      csv << ',' << k << ',' << meta.vocab.name(t, k);
      for (double p : preds.probabilities[t].row(i)) csv << ',' << fmt(p);
    }
    for (Task t : kRegressionTasks) csv << ',' << fmt(ds.norm.denormalize(t, preds.values[t][i]));
    csv << '\n';
  }
  prepare_out_dir(ctx);
  write_text(ctx.out_path("predictions.csv"), csv.str());
  ctx.out << "wrote " << ds.size() << " predictions to "
          << ctx.out_path("predictions.csv").string() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-task residual network: synthesize, train, evaluate, check, predict"};
  app.require_subcommand(1);
  Options opts;
  std::string config_path;
  std::uint64_t seed = 0;
  std::size_t epochs = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Run config JSON");
    sub->add_option("--seed", seed, "Override the config seed");
    sub->add_option("--out", opts.out_dir, "Output directory")->capture_default_str();
  };
  auto* synth = app.add_subcommand("synth", "Write a synthetic feature CSV");
  auto* train_cmd = app.add_subcommand("train", "Train and write checkpoint + trace");
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint and write reports");
  auto* grad = app.add_subcommand("gradcheck", "Compare analytic and numeric gradients");
  auto* pred = app.add_subcommand("predict", "Write per-record predictions");
  for (auto* sub : {synth, train_cmd, eval_cmd, grad, pred}) add_common(sub);
  for (auto* sub : {train_cmd, eval_cmd, pred}) {
    sub->add_option("--input", opts.input, "Feature CSV (overrides data.csv)");
  }
  train_cmd->add_option("--epochs", epochs, "Override train.epochs");
  for (auto* sub : {train_cmd, eval_cmd, pred}) {
    sub->add_option("--checkpoint", opts.checkpoint, "Checkpoint path (default <out>/checkpoint.bin)");
  }
  grad->add_flag("--corrupt-backward", opts.corrupt_backward,
                 "Test hook: perturb one analytic gradient (must fail)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    for (auto* sub : app.get_subcommands()) {
      if (sub->count("--seed")) cfg.seed = seed;
      if (sub->get_option_no_throw("--epochs") && sub->count("--epochs")) cfg.train.epochs = epochs;
    }
    if (opts.input) cfg.data.csv = fs::path(*opts.input);
    cfg.validate();
    Context ctx{std::move(cfg), opts, out, err};
    if (synth->parsed()) return cmd_synth(ctx);
    if (train_cmd->parsed()) return cmd_train(ctx);
    if (eval_cmd->parsed()) return cmd_eval(ctx);
    if (grad->parsed()) return cmd_gradcheck(ctx);
    if (pred->parsed()) return cmd_predict(ctx);
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitValidation;
}

}  // namespace resmtl::cli
