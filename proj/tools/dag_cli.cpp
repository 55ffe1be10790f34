// dag: synth / train / eval / predict / ablate / sweep.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dag/dag.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kUsage = 2, kIo = 3, kConfig = 4, kData = 5, kRuntime = 6 };

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda1;
  std::optional<double> lambda2;
  std::string out;
};

void apply(dag::RunConfig& c, const Overrides& o) {
  if (o.seed) {
    c.model.seed = c.train.seed = *o.seed;
    if (c.synth) c.synth->seed = *o.seed;
  }
  if (o.lambda1) c.model.lambda1 = *o.lambda1;
  if (o.lambda2) c.model.lambda2 = *o.lambda2;
  if (!o.out.empty()) c.out_dir = o.out;
  c.model.validate();
}

// Output stream for a path; "-" or empty means stdout.
class Sink {
 public:
  explicit Sink(const std::string& path) {
    if (path.empty() || path == "-") return;
    if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    file_.open(path, std::ios::binary);
    if (!file_) throw dag::IoError("cannot write '" + path + "'");
  }
  std::ostream& get() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

 private:
  std::ofstream file_;
};

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw dag::IoError("cannot write '" + path.string() + "'");
  return out;
}

std::string num(double v) { return dag::format_double(v); }
std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : ""; }

json loss_json(const dag::LossSummary& s) {
  json j{{"forecast", s.forecast}, {"total", s.total}};
  if (s.temporal) j["temporal"] = *s.temporal;
  if (s.channel) j["channel"] = *s.channel;
  return j;
}

const std::string kMetricsHeader = "run_id,variant,horizon,mse,mae";

void metrics_rows(std::ostream& out, const std::string& run_id, const std::string& variant,
                  const dag::EvalReport& r, bool per_step) {
  if (per_step) {
    for (std::size_t h = 0; h < r.mse_per_step.size(); ++h) {
      out << run_id << ',' << variant << ',' << h + 1 << ',' << num(r.mse_per_step[h]) << ','
          << num(r.mae_per_step[h]) << '\n';
    }
  }
  out << run_id << ',' << variant << ",all," << num(r.mse) << ',' << num(r.mae) << '\n';
}

json report_json(const dag::EvalReport& r) {
  json j{{"mse", r.mse}, {"mae", r.mae}, {"windows", r.windows},
         {"mse_per_step", r.mse_per_step}, {"mae_per_step", r.mae_per_step}};
  if (r.train_losses) j["train_losses"] = loss_json(*r.train_losses);
  return j;
}

std::string variant_label(const dag::DagConfig& c) {
  auto v = dag::variant_of(c);
  return v ? dag::variant_name(*v) : "custom";
}

dag::DatasetBundle bundle_for(dag::RunConfig& c) {
  auto data = dag::resolve_dataset(c);
  return dag::DatasetBundle(data, c.data.split, c.model.lookback, c.model.horizon);
}

// Dataset for a checkpoint: its recorded source, or a CSV given on the
// command line with the recorded endogenous selection.
dag::DatasetBundle bundle_for_checkpoint(dag::RunConfig c, const std::string& data_path) {
  if (!data_path.empty()) {
    c.data.path = data_path;
    c.synth.reset();
  }
  const auto n = c.model.n_endo, d = c.model.n_exo;
  auto bundle = bundle_for(c);
  if (c.model.n_endo != n || c.model.n_exo != d) {
    throw dag::ConfigError("data: dataset has " + std::to_string(c.model.n_exo) + " exogenous and " +
                           std::to_string(c.model.n_endo) + " endogenous channels, checkpoint expects " +
                           std::to_string(d) + " and " + std::to_string(n));
  }
  return bundle;
}

// ---------------------------------------------------------------------------

int cmd_synth(const std::string& config_path, const Overrides& o) {
  dag::RunConfig c = dag::load_config(config_path);
  if (!c.synth) throw dag::ConfigError("synth: the config has no synth.* keys");
  apply(c, o);
  const dag::RawDataset ds = dag::gen_synthetic(*c.synth);
  Sink sink(o.out);
  dag::write_csv(sink.get(), ds);
  return kOk;
}

int cmd_train(const std::string& config_path, const Overrides& o) {
  dag::RunConfig c = dag::load_config(config_path);
  apply(c, o);
  const dag::DatasetBundle bundle = bundle_for(c);
  dag::DagModel model(c.model);
  const dag::TrainResult tr = dag::train(model, bundle, c.train);
  c.model = model.config();

  const fs::path dir(c.out_dir);
  fs::create_directories(dir);
  dag::save_model((dir / "model.ckpt").string(), c, model);

  auto trace = open_out(dir / "loss_trace.csv");
  trace << "epoch,batch_size,train_forecast,train_temporal,train_channel,train_total,val_forecast\n";
  for (const auto& e : tr.epochs) {
    trace << e.epoch << ',' << e.batch_size << ',' << num(e.train.forecast) << ',' << opt_num(e.train.temporal)
          << ',' << opt_num(e.train.channel) << ',' << num(e.train.total) << ',' << opt_num(e.val_forecast) << '\n';
  }

  const json rec{{"command", "train"},
                 {"run_id", dag::fingerprint(dag::to_text(c))},
                 {"variant", variant_label(c.model)},
                 {"epochs", tr.epochs.size()},
                 {"steps", tr.steps},
                 {"best_epoch", tr.best_epoch},
                 {"best_val_forecast", tr.best_val ? json(*tr.best_val) : json(nullptr)},
                 {"stopped_early", tr.stopped_early},
                 {"initial_losses", loss_json(tr.initial)},
                 {"checkpoint", (dir / "model.ckpt").string()}};
  std::cout << rec.dump() << '\n';
  return kOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::string format = "csv";
  bool no_future_exo = false;
};

int cmd_eval(const EvalArgs& a, const Overrides& o) {
  const dag::LoadedModel loaded = dag::load_model(a.checkpoint);
  const dag::DatasetBundle bundle = bundle_for_checkpoint(loaded.config, a.data);
  const dag::WindowSet windows = bundle.segment(a.split);
  const auto batch = loaded.config.train.eval_batch_size;
  const dag::EvalReport r = a.no_future_exo ? dag::evaluate_without_future_exo(loaded.model, windows, batch)
                                            : dag::evaluate(loaded.model, windows, batch);
  const std::string run_id = dag::fingerprint(dag::to_text(loaded.config));
  const std::string variant = variant_label(loaded.model.config());
  Sink sink(o.out);
  if (a.format == "jsonl") {
    json rec{{"command", "eval"}, {"run_id", run_id}, {"variant", variant},
             {"split", a.split},  {"no_future_exo", a.no_future_exo}};
    rec.update(report_json(r));
    sink.get() << rec.dump() << '\n';
  } else {
    sink.get() << kMetricsHeader << '\n';
    metrics_rows(sink.get(), run_id, variant, r, true);
  }
  return kOk;
}

// Rows window,channel,step,value -> [W x C x F].
dag::Tensor read_series_csv(const std::string& path, std::size_t windows, std::size_t channels,
                            std::size_t horizon) {
  std::ifstream in(path);
  if (!in) throw dag::IoError("cannot open '" + path + "'");
  std::vector<double> values(windows * channels * horizon);
  std::vector<bool> seen(values.size(), false);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 && line.rfind("window", 0) == 0) continue;
    if (line.empty() || line == "\r") continue;
    std::istringstream row(line);
    std::string f[4];
    for (auto& field : f) std::getline(row, field, ',');
    std::size_t w = 0, c = 0, h = 0;
    double v = 0.0;
    try {
      w = std::stoull(f[0]);
      c = std::stoull(f[1]);
      h = std::stoull(f[2]);
    } catch (const std::exception&) {
      throw dag::ParseError(path + " line " + std::to_string(lineno) + ": malformed row");
    }
    if (!dag::detail::parse_number(dag::detail::trim(f[3]), v)) {
      throw dag::ParseError(path + " line " + std::to_string(lineno) + ": non-numeric value");
    }
    if (w >= windows || c >= channels || h < 1 || h > horizon) {
      throw dag::ParseError(path + " line " + std::to_string(lineno) + ": index out of range");
    }
    const std::size_t idx = (w * channels + c) * horizon + (h - 1);
    if (seen[idx]) throw dag::ParseError(path + " line " + std::to_string(lineno) + ": duplicate entry");
    seen[idx] = true;
    values[idx] = v;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw dag::ParseError(path + ": missing entries for some window/channel/step");
  }
  return dag::Tensor({windows, channels, horizon}, std::move(values));
}

void write_series_rows(std::ostream& out, const dag::Tensor& t, std::size_t first_window) {
  const std::size_t c = t.dim(1), f = t.dim(2);
  for (std::size_t b = 0; b < t.dim(0); ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t h = 0; h < f; ++h) {
        out << first_window + b << ',' << ch << ',' << h + 1 << ',' << num(t[(b * c + ch) * f + h]) << '\n';
      }
    }
  }
}

struct PredictArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  bool no_future_exo = false;
  std::string future_exo;
  std::string emit_exo_forecast;
  bool normalized = false;
};

int cmd_predict(const PredictArgs& a, const Overrides& o) {
  if (a.no_future_exo && !a.future_exo.empty()) {
    throw dag::ConfigError("--no-future-exo and --future-exo are mutually exclusive");
  }
  const dag::LoadedModel loaded = dag::load_model(a.checkpoint);
  const dag::DatasetBundle bundle = bundle_for_checkpoint(loaded.config, a.data);
  const dag::WindowSet windows = bundle.segment(a.split);
  if (windows.empty()) throw dag::ContractError("split '" + a.split + "' has no windows");
  const auto& mc = loaded.model.config();
  std::optional<dag::Tensor> future;
  if (!a.future_exo.empty()) future = read_series_csv(a.future_exo, windows.size(), mc.n_exo, mc.horizon);

  Sink sink(o.out);
  std::ofstream exo_out;
  if (!a.emit_exo_forecast.empty()) {
    exo_out = open_out(a.emit_exo_forecast);
    exo_out << "window,channel,step,value\n";
  }
  sink.get() << "window,channel,step,value\n";
  const std::size_t batch = loaded.config.train.eval_batch_size;
  for (std::size_t first = 0; first < windows.size(); first += batch) {
    const std::size_t count = std::min(batch, windows.size() - first);
    const dag::Batch b = windows.batch(first, count);
    dag::Tensor y_exo = b.y_exo;
    if (a.no_future_exo) {
      y_exo = loaded.model.forecast_exo(b.x_exo);
    } else if (future) {
      y_exo = dag::slice(*future, 0, first, count);
    }
    dag::Tensor pred;
    if (a.normalized) {
      dag::NoGradGuard guard;
      pred = loaded.model.forward(b.x_endo, b.x_exo, y_exo).y_endo_hat;
    } else if (a.no_future_exo) {
      pred = loaded.model.predict_without_future_exo(b);
    } else {
      pred = loaded.model.predict(b.x_endo, b.x_exo, y_exo);
    }
    write_series_rows(sink.get(), pred, first);
    if (exo_out.is_open()) write_series_rows(exo_out, loaded.model.forecast_exo(b.x_exo), first);
  }
  return kOk;
}

int cmd_ablate(const std::string& config_path, const Overrides& o, const std::vector<std::string>& names) {
  dag::RunConfig c = dag::load_config(config_path);
  apply(c, o);
  std::vector<dag::AblationVariant> variants;
  for (const auto& n : names) variants.push_back(dag::parse_variant(n));
  if (variants.empty()) variants.assign(std::begin(dag::kAllVariants), std::end(dag::kAllVariants));
  const dag::DatasetBundle bundle = bundle_for(c);
  const auto rows = dag::run_ablation(bundle, c.model, c.train, variants);

  const fs::path dir(c.out_dir);
  fs::create_directories(dir);
  auto csv = open_out(dir / "ablation.csv");
  auto jl = open_out(dir / "ablation.jsonl");
  csv << kMetricsHeader << '\n';
  for (const auto& row : rows) {
    const std::string name = dag::variant_name(row.variant);
    metrics_rows(csv, row.report.fingerprint, name, row.report, false);
    json rec{{"command", "ablate"}, {"run_id", row.report.fingerprint}, {"variant", name}};
    rec.update(report_json(row.report));
    jl << rec.dump() << '\n';
  }
  std::ifstream back(dir / "ablation.csv");
  std::cout << back.rdbuf();
  return kOk;
}

int cmd_sweep(const std::string& config_path, const Overrides& o, const std::vector<std::size_t>& lookbacks) {
  dag::RunConfig c = dag::load_config(config_path);
  apply(c, o);
  if (lookbacks.empty()) throw dag::ConfigError("--lookbacks: at least one lookback is required");
  auto data = dag::resolve_dataset(c);
  const auto rows = dag::lookback_sweep(data, c.data.split, lookbacks, c.model, c.train);

  const fs::path dir(c.out_dir);
  fs::create_directories(dir);
  auto csv = open_out(dir / "sweep.csv");
  auto jl = open_out(dir / "sweep.jsonl");
  csv << "lookback,run_id,mse,mae,status\n";
  for (const auto& row : rows) {
    json rec{{"command", "sweep"}, {"lookback", row.lookback}};
    if (row.report) {
      csv << row.lookback << ',' << row.report->fingerprint << ',' << num(row.report->mse) << ','
          << num(row.report->mae) << ",ok\n";
      rec["run_id"] = row.report->fingerprint;
      rec.update(report_json(*row.report));
    } else {
      std::string reason = row.skip_reason;
      std::replace(reason.begin(), reason.end(), ',', ';');
      csv << row.lookback << ",,,,skipped: " << reason << '\n';
      rec["skipped"] = row.skip_reason;
    }
    jl << rec.dump() << '\n';
  }
  std::ifstream back(dir / "sweep.csv");
  std::cout << back.rdbuf();
  return kOk;
}

int fail(const char* code, int exit_code, std::string message) {
  std::replace(message.begin(), message.end(), '\n', ' ');
  std::cerr << "error: code=" << code << " message=" << json(message).dump() << '\n';
  return exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-causal forecasting with exogenous variables"};
  app.require_subcommand(1);
  Overrides o;
  std::string config;
  EvalArgs ev;
  PredictArgs pr;
  std::vector<std::string> variants;
  std::vector<std::size_t> lookbacks;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    if (needs_config) sub->add_option("--config", config, "Run configuration file")->required();
    sub->add_option("--seed", o.seed, "Seed for model, training and synthetic data");
    sub->add_option("--out", o.out, "Output file or directory");
  };
  auto add_lambdas = [&](CLI::App* sub) {
    sub->add_option("--lambda1", o.lambda1, "Fusion weight in [0, 1]");
    sub->add_option("--lambda2", o.lambda2, "Causality loss weight >= 0");
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset as CSV");
  add_common(synth, true);
  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_common(train, true);
  add_lambdas(train);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(eval, false);
  eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval->add_option("--data", ev.data, "CSV dataset (default: the checkpoint's data source)");
  eval->add_option("--split", ev.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--format", ev.format, "csv or jsonl")->check(CLI::IsMember({"csv", "jsonl"}));
  eval->add_flag("--no-future-exo", ev.no_future_exo, "Replace future exogenous values by their forecast");

  auto* predict = app.add_subcommand("predict", "Write forecasts for every window of a split");
  add_common(predict, false);
  predict->add_option("--checkpoint", pr.checkpoint, "Checkpoint file")->required();
  predict->add_option("--data", pr.data, "CSV dataset (default: the checkpoint's data source)");
  predict->add_option("--split", pr.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  predict->add_flag("--no-future-exo", pr.no_future_exo, "Replace future exogenous values by their forecast");
  predict->add_option("--future-exo", pr.future_exo, "CSV window,channel,step,value of future exogenous values");
  predict->add_option("--emit-exo-forecast", pr.emit_exo_forecast, "Also write the exogenous forecast here");
  predict->add_flag("--normalized", pr.normalized, "Debug: write forecasts in the model's normalized space");

  auto* ablate = app.add_subcommand("ablate", "Train and test the six ablation variants");
  add_common(ablate, true);
  add_lambdas(ablate);
  ablate->add_option("--variants", variants, "Subset of variants")->delimiter(',');

  auto* sweep = app.add_subcommand("sweep", "Train and test one model per lookback");
  add_common(sweep, true);
  add_lambdas(sweep);
  sweep->add_option("--lookbacks", lookbacks, "Comma-separated lookbacks")->delimiter(',')->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", kUsage, e.what());
  }

  try {
    if (*synth) return cmd_synth(config, o);
    if (*train) return cmd_train(config, o);
    if (*eval) return cmd_eval(ev, o);
    if (*predict) return cmd_predict(pr, o);
    if (*ablate) return cmd_ablate(config, o, variants);
    if (*sweep) return cmd_sweep(config, o, lookbacks);
  } catch (const dag::IoError& e) {
    return fail("io", kIo, e.what());
  } catch (const dag::ConfigError& e) {
    return fail("config", kConfig, e.what());
  } catch (const dag::SpecError& e) {
    return fail("config", kConfig, e.what());
  } catch (const dag::ParseError& e) {
    return fail("data", kData, e.what());
  } catch (const dag::Error& e) {
    return fail("runtime", kRuntime, e.what());
  } catch (const fs::filesystem_error& e) {
    return fail("io", kIo, e.what());
  } catch (const std::exception& e) {
    return fail("internal", kOther, e.what());
  }
  return kOther;
}
