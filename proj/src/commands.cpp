#include "ace/commands.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ace/config.hpp"
#include "ace/error.hpp"
#include "ace/format.hpp"
#include "ace/gradcheck.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace ace::cli {

namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string flag_name(const std::string& key) {
  std::string s = key;
  for (auto& ch : s) {
    if (ch == '_') ch = '-';
  }
  return "--" + s;
}

// Registers one CLI option per config key plus a generic --set key=value.
struct Overrides {
  std::map<std::string, std::string> values;
  std::map<std::string, bool> flags;
  std::map<std::string, CLI::Option*> options;
  std::vector<std::string> sets;

  void attach(CLI::App& app) {
    for (const auto& k : config::known_keys()) {
      if (k.is_flag) {
        options[k.key] = app.add_flag(flag_name(k.key), flags[k.key], k.help);
      } else {
        options[k.key] = app.add_option(flag_name(k.key), values[k.key], k.help);
      }
    }
    app.add_option("--set", sets, "override any config key as key=value (repeatable)");
  }

  config::KeyValues collect() const {
    config::KeyValues kv;
    for (const auto& k : config::known_keys()) {
      const auto* opt = options.at(k.key);
      if (opt->count() == 0) continue;
      if (k.is_flag) {
        kv.emplace_back(k.key, flags.at(k.key) ? "true" : "false");
      } else {
        kv.emplace_back(k.key, values.at(k.key));
      }
    }
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + s + "'");
      kv.emplace_back(std::string(trim(s.substr(0, eq))), std::string(trim(s.substr(eq + 1))));
    }
    return kv;
  }
};

config::KeyValues manifest_config(const std::string& path) {
  ordered_json j;
  try {
    j = ordered_json::parse(read_text(path));
  } catch (const ordered_json::parse_error& e) {
    throw ValidationError("manifest " + path + " is not valid JSON: " + e.what());
  }
  if (!j.contains("config") || !j["config"].is_object()) {
    throw ValidationError("manifest " + path + " has no config object");
  }
  config::KeyValues kv;
  for (const auto& [k, v] : j["config"].items()) kv.emplace_back(k, v.get<std::string>());
  return kv;
}

config::RunConfig build_config(const std::string& config_path, const std::string& manifest_path,
                               const Overrides& ov) {
  config::RunConfig cfg;
  config::KeyValues kv;
  if (!manifest_path.empty()) kv = manifest_config(manifest_path);
  if (!config_path.empty()) {
    auto file_kv = config::read_file(config_path);
    kv.insert(kv.end(), file_kv.begin(), file_kv.end());
  }
  auto cli_kv = ov.collect();
  kv.insert(kv.end(), cli_kv.begin(), cli_kv.end());
  config::apply_all(cfg, kv);
  config::validate(cfg);
  return cfg;
}

struct Data {
  data::Dataset train;
  data::Dataset test;
  std::string source;
};

Data load_data(const config::RunConfig& cfg) {
  Data d;
  if (!cfg.train_csv.empty()) {
    d.train = data::load_csv(cfg.train_csv, 0, data::Split::train);
    d.test = data::load_csv(cfg.test_csv, d.train.num_classes, data::Split::test);
    if (d.test.feature_dim() != d.train.feature_dim()) {
      throw ValidationError("train and test CSVs have different feature dimensions");
    }
    d.source = "csv";
  } else {
    auto [tr, te] = data::generate(cfg.effective_synthetic());
    d.train = std::move(tr);
    d.test = std::move(te);
    d.source = "synthetic";
  }
  return d;
}

ordered_json stats_json(const data::Dataset& ds) {
  try {
    return ordered_json::parse(data::stats_to_json(data::compute_stats(ds)));
  } catch (const ValidationError& e) {
    return {{"error", e.what()}};
  }
}

struct RunOutput {
  train::TrainResult stage1;
  eval::EvalReport report;
  std::optional<train::CrtResult> crt;
  std::optional<eval::EvalReport> crt_report;
};

RunOutput run_experiment(const config::RunConfig& cfg, const Data& d) {
  Rng init_rng = make_stream(cfg.train.seed, "init");
  const auto init = model::init_params(cfg.arch, d.train.feature_dim(), d.train.num_classes,
                                       cfg.hidden, init_rng);
  RunOutput out;
  out.stage1 = train::train(init, d.train, d.test, cfg.train);
  out.report =
      eval::make_report(out.stage1.params, d.test, d.train.class_counts, cfg.groups, &out.stage1.log);
  if (cfg.crt) {
    train::TrainConfig stage2 = cfg.train;
    if (cfg.crt_epochs > 0) stage2.epochs = cfg.crt_epochs;
    out.crt = train::crt_second_stage(out.stage1.params, d.train, &d.test, stage2);
    out.crt_report =
        eval::make_report(out.crt->params, d.test, d.train.class_counts, cfg.groups, &out.crt->log);
  }
  return out;
}

std::string opt_field(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

// ---- subcommands ----

int cmd_gen_data(const data::SyntheticSpec& spec, const std::string& out_dir, std::ostream& out) {
  data::validate(spec);
  ensure_dir(out_dir);
  auto [tr, te] = data::generate(spec);
  const fs::path dir(out_dir);
  data::save_csv(tr, (dir / "train.csv").string());
  data::save_csv(te, (dir / "test.csv").string());
  const auto stats = data::stats_to_json(data::compute_stats(tr));
  write_text(dir / "stats.json", stats + "\n");
  out << stats << '\n';
  return ExitCode::ok;
}

int cmd_train(const config::RunConfig& cfg, const std::string& out_dir, std::ostream& out) {
  ensure_dir(out_dir);
  const fs::path dir(out_dir);
  const Data d = load_data(cfg);

  ordered_json manifest;
  manifest["tool_version"] = kToolVersion;
  manifest["seed"] = cfg.train.seed;
  manifest["config"] = ordered_json::object();
  for (const auto& [k, v] : config::to_key_values(cfg)) manifest["config"][k] = v;
  manifest["dataset"] = {{"source", d.source},
                         {"train_samples", d.train.size()},
                         {"test_samples", d.test.size()},
                         {"num_classes", d.train.num_classes},
                         {"feature_dim", d.train.feature_dim()},
                         {"train_stats", stats_json(d.train)}};
  manifest["artifacts"] = {{"config", "config.txt"},
                           {"checkpoint", "checkpoint.txt"},
                           {"train_log", "train_log.jsonl"},
                           {"report", "report.json"},
                           {"per_class", "per_class.csv"}};
  if (cfg.crt) {
    manifest["artifacts"]["crt_checkpoint"] = "crt_checkpoint.txt";
    manifest["artifacts"]["crt_log"] = "crt_log.jsonl";
    manifest["artifacts"]["crt_report"] = "crt_report.json";
  }
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  write_text(dir / "config.txt", config::to_text(cfg));

  const RunOutput r = run_experiment(cfg, d);
  model::save_checkpoint(r.stage1.params, (dir / "checkpoint.txt").string());
  write_text(dir / "train_log.jsonl", train::log_to_jsonl(r.stage1.log));
  write_text(dir / "report.json", eval::report_to_json(r.report) + "\n");
  write_text(dir / "per_class.csv", eval::report_to_csv(r.report, d.train.class_counts, cfg.groups));
  if (r.crt) {
    model::save_checkpoint(r.crt->params, (dir / "crt_checkpoint.txt").string());
    write_text(dir / "crt_log.jsonl", train::log_to_jsonl(r.crt->log));
    write_text(dir / "crt_report.json", eval::report_to_json(*r.crt_report) + "\n");
    for (const auto& w : r.crt->log.warnings) out << "warning: " << w << '\n';
  }

  auto line = [&](const char* name, const eval::EvalReport& rep) {
    out << name << " total=" << rep.top1.total << " many=" << opt_field(rep.groups.many)
        << " median=" << opt_field(rep.groups.median) << " few=" << opt_field(rep.groups.few)
        << " flatness=" << rep.weight_norms.flatness;
    if (rep.train_val_gap) out << " gap=" << *rep.train_val_gap;
    out << '\n';
  };
  line(train::to_string(cfg.train.method).c_str(), r.report);
  if (r.crt_report) line("crt", *r.crt_report);
  return ExitCode::ok;
}

const std::vector<std::string> kSweepParams = {"lambda", "tau", "eta", "delta", "ratio"};

int cmd_sweep(const config::RunConfig& base, const std::string& param,
              const std::vector<std::string>& values, const std::string& out_dir, std::ostream& out) {
  if (std::find(kSweepParams.begin(), kSweepParams.end(), param) == kSweepParams.end()) {
    throw ValidationError("sweep parameter must be one of lambda, tau, eta, delta, ratio");
  }
  if (values.empty()) throw ValidationError("sweep needs at least one value");
  if ((param == "delta" || param == "ratio") && !base.train_csv.empty()) {
    throw ValidationError("sweeping " + param + " needs synthetic data, not CSV input");
  }

  std::string table = "value,total,many,median,few\n";
  for (const auto& v : values) {
    config::RunConfig cfg = base;
    config::apply(cfg, param, v);
    config::validate(cfg);
    const Data d = load_data(cfg);
    const RunOutput r = run_experiment(cfg, d);
    const auto& rep = r.crt_report ? *r.crt_report : r.report;
    table += std::string(trim(v)) + "," + format_double(rep.top1.total) + "," +
             opt_field(rep.groups.many) + "," + opt_field(rep.groups.median) + "," +
             opt_field(rep.groups.few) + "\n";
  }
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_text(fs::path(out_dir) / "sweep.csv", table);
  }
  out << table;
  return ExitCode::ok;
}

int cmd_grad_check(std::uint64_t seed, int trials, bool json, std::ostream& out) {
  const auto report = gradcheck::run(seed, trials);
  out << (json ? report.to_json() + "\n" : report.to_text());
  return report.passed() ? ExitCode::ok : ExitCode::numerical;
}

int cmd_stats(const std::string& path, int classes, std::ostream& out) {
  const auto ds = data::load_csv(path, classes);
  out << data::stats_to_json(data::compute_stats(ds)) << '\n';
  return ExitCode::ok;
}

int cmd_eval(const std::string& checkpoint, const std::string& test_csv,
             const std::string& train_csv, const eval::GroupSpec& groups, std::ostream& out) {
  const auto params = model::load_checkpoint(checkpoint);
  const auto c = static_cast<int>(params.num_classes());
  const auto test = data::load_csv(test_csv, c, data::Split::test);
  std::vector<std::int64_t> counts = test.class_counts;
  if (!train_csv.empty()) counts = data::load_csv(train_csv, c).class_counts;
  out << eval::report_to_json(eval::make_report(params, test, counts, groups)) << '\n';
  return ExitCode::ok;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adaptive confusion energy experiments", "ace"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  // gen-data
  data::SyntheticSpec spec;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic long-tailed fine-grained dataset");
  gen->add_option("--classes", spec.num_classes, "number of classes")->capture_default_str();
  gen->add_option("--meta", spec.num_meta, "number of meta-categories")->capture_default_str();
  gen->add_option("--dim", spec.feature_dim, "feature dimension")->capture_default_str();
  gen->add_option("--delta", spec.fine_grained_scale, "fine-grained scale")->capture_default_str();
  gen->add_option("--ratio", spec.imbalance_ratio, "imbalance ratio")->capture_default_str();
  gen->add_option("--max-count", spec.max_count, "samples in the largest class")->capture_default_str();
  gen->add_option("--noise", spec.noise_std, "per-coordinate noise std")->capture_default_str();
  gen->add_option("--test-per-class", spec.test_per_class, "test samples per class")
      ->capture_default_str();
  gen->add_option("--seed", spec.seed, "seed")->capture_default_str();
  gen->add_option("--out", gen_out, "output directory")->required();

  // train
  std::string train_config, train_manifest, train_out;
  Overrides train_ov;
  auto* tr = app.add_subcommand("train", "train a classifier and write checkpoint, log and report");
  tr->add_option("--config", train_config, "key = value config file");
  tr->add_option("--manifest", train_manifest, "re-run the configuration stored in a manifest.json");
  tr->add_option("--out", train_out, "output directory")->required();
  train_ov.attach(*tr);

  // sweep
  std::string sweep_config, sweep_param, sweep_out;
  std::vector<std::string> sweep_values;
  Overrides sweep_ov;
  auto* sw = app.add_subcommand("sweep", "one training run per parameter value");
  sw->add_option("--config", sweep_config, "key = value config file");
  sw->add_option("--param", sweep_param, "lambda, tau, eta, delta or ratio")->required();
  sw->add_option("--values", sweep_values, "comma-separated values")->required()->delimiter(',');
  sw->add_option("--out", sweep_out, "directory for sweep.csv");
  sweep_ov.attach(*sw);

  // grad-check
  std::uint64_t gc_seed = 1;
  int gc_trials = 100;
  bool gc_json = false;
  auto* gc = app.add_subcommand("grad-check", "finite-difference check of every analytic gradient");
  gc->add_option("--seed", gc_seed, "seed")->capture_default_str();
  gc->add_option("--trials", gc_trials, "random instances per gradient family")->capture_default_str();
  gc->add_flag("--json", gc_json, "emit JSON");

  // stats
  std::string stats_path;
  int stats_classes = 0;
  auto* st = app.add_subcommand("stats", "imbalance ratio and fine-grained factor of a CSV dataset");
  st->add_option("--data", stats_path, "dataset CSV")->required();
  st->add_option("--classes", stats_classes, "class count (default: max label + 1)");

  // eval
  std::string ev_ckpt, ev_test, ev_train, ev_group = "percentile";
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a CSV test set");
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--data", ev_test, "test CSV")->required();
  ev->add_option("--train-data", ev_train, "training CSV, used for Many/Median/Few counts");
  ev->add_option("--groups", ev_group, "percentile or absolute")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? ExitCode::ok : ExitCode::validation;
  }

  try {
    if (*gen) return cmd_gen_data(spec, gen_out, out);
    if (*tr) return cmd_train(build_config(train_config, train_manifest, train_ov), train_out, out);
    if (*sw) {
      return cmd_sweep(build_config(sweep_config, "", sweep_ov), sweep_param, sweep_values,
                       sweep_out, out);
    }
    if (*gc) return cmd_grad_check(gc_seed, gc_trials, gc_json, out);
    if (*st) return cmd_stats(stats_path, stats_classes, out);
    if (*ev) {
      eval::GroupSpec g;
      if (ev_group == "absolute") {
        g = eval::GroupSpec::absolute();
      } else if (ev_group != "percentile") {
        throw ValidationError("--groups must be percentile or absolute");
      }
      return cmd_eval(ev_ckpt, ev_test, ev_train, g, out);
    }
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return ExitCode::numerical;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return ExitCode::io;
  } catch (const fs::filesystem_error& e) {
    err << "i/o error: " << e.what() << '\n';
    return ExitCode::io;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return ExitCode::validation;
  }
  return ExitCode::validation;
}

}  // namespace ace::cli
