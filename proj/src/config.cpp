#include "ace/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include "ace/error.hpp"
#include "ace/format.hpp"

namespace ace::config {

namespace {

double to_double(const std::string& key, const std::string& v) {
  auto x = parse_double(trim(v));
  if (!x) throw ValidationError("config key '" + key + "': '" + v + "' is not a number");
  return *x;
}

template <typename Int>
Int to_int(const std::string& key, const std::string& v) {
  auto x = parse_int<Int>(trim(v));
  if (!x) throw ValidationError("config key '" + key + "': '" + v + "' is not an integer");
  return *x;
}

bool to_bool(const std::string& key, const std::string& v) {
  const auto t = trim(v);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ValidationError("config key '" + key + "': '" + v + "' is not a boolean");
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

std::string group_mode_name(const eval::GroupSpec& g) {
  return g.mode == eval::GroupSpec::Mode::percentile ? "percentile" : "absolute";
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct Entry {
  KeyInfo info;
  Setter set;
  Getter get;
};

const std::vector<Entry>& table() {
  static const std::vector<Entry> entries = {
      {{"preset", false, "lambda/tau regime: fgvc, long_tail, natural_world, none"},
       [](RunConfig& c, const std::string&, const std::string& v) { apply_preset(c, std::string(trim(v))); },
       [](const RunConfig& c) { return c.preset; }},
      {{"method", false, "ce_only, pc or ace"},
       [](RunConfig& c, const std::string&, const std::string& v) {
         c.train.method = train::parse_method(std::string(trim(v)));
       },
       [](const RunConfig& c) { return train::to_string(c.train.method); }},
      {{"epochs", false, "training epochs"},
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.epochs = to_int<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.train.epochs); }},
      {{"batch_size", false, "batch size M"},
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.batch_size = to_int<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.train.batch_size); }},
      {{"lr", false, "initial learning rate (cosine annealed per epoch)"},
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.lr0 = to_double(k, v); },
       [](const RunConfig& c) { return format_double(c.train.lr0); }},
      {{"momentum", false, "SGD momentum"},
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.momentum = to_double(k, v); },
       [](const RunConfig& c) { return format_double(c.train.momentum); }},
      {{"lambda", false, "regularizer weight"},
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.lambda = to_double(k, v); },
       [](const RunConfig& c) { return format_double(c.train.lambda); }},
      {{"tau", false, "adaptive matrix exponent"},
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.tau = to_double(k, v); },
       [](const RunConfig& c) { return format_double(c.train.tau); }},
      {{"eta", false, "proximity weight for the learnable adaptive matrix"},
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.eta = to_double(k, v); },
       [](const RunConfig& c) { return format_double(c.train.eta); }},
      {{"learnable_a", true, "learn the adaptive matrix diagonal"},
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.learnable_a = to_bool(k, v); },
       [](const RunConfig& c) { return from_bool(c.train.learnable_a); }},
      {{"sampler", false, "instance_balanced, distinct_class or class_balanced"},
       [](RunConfig& c, const std::string&, const std::string& v) {
         c.train.sampler = train::parse_sampler(std::string(trim(v)));
       },
       [](const RunConfig& c) { return train::to_string(c.train.sampler); }},
      {{"bcn_path", false, "trace_fast or svd_reference"},
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const auto t = trim(v);
         if (t == "trace_fast") {
           c.train.bcn_path = BcnPath::trace_fast;
         } else if (t == "svd_reference") {
           c.train.bcn_path = BcnPath::svd_reference;
         } else {
           throw ValidationError("config key '" + k + "': expected trace_fast or svd_reference");
         }
       },
       [](const RunConfig& c) {
         return std::string(c.train.bcn_path == BcnPath::trace_fast ? "trace_fast" : "svd_reference");
       }},
      {{"seed", false, "run seed (data, init and sampler streams derive from it)"},
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.seed = to_int<std::uint64_t>(k, v);
       },
       [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      {{"data_seed", false, "separate seed for synthetic data (default: seed)"},
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (trim(v) == "none" || trim(v).empty()) {
           c.data_seed.reset();
         } else {
           c.data_seed = to_int<std::uint64_t>(k, v);
         }
       },
       [](const RunConfig& c) { return c.data_seed ? std::to_string(*c.data_seed) : std::string("none"); }},
      {{"arch", false, "linear or mlp1"},
       [](RunConfig& c, const std::string&, const std::string& v) {
         c.arch = model::parse_architecture(std::string(trim(v)));
       },
       [](const RunConfig& c) { return model::to_string(c.arch); }},
      {{"hidden", false, "hidden width for mlp1"},
       [](RunConfig& c, const std::string& k, const std::string& v) { c.hidden = to_int<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.hidden); }},
      {{"train_csv", false, "training CSV (empty: synthetic)"},
       [](RunConfig& c, const std::string&, const std::string& v) { c.train_csv = std::string(trim(v)); },
       [](const RunConfig& c) { return c.train_csv; }},
      {{"test_csv", false, "test CSV (empty: synthetic)"},
       [](RunConfig& c, const std::string&, const std::string& v) { c.test_csv = std::string(trim(v)); },
       [](const RunConfig& c) { return c.test_csv; }},
      {{"classes", false, "synthetic: number of classes"},
       [](RunConfig& c, const std::string& k, const std::string& v) { c.synthetic.num_classes = to_int<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.synthetic.num_classes); }},
      {{"meta", false, "synthetic: number of meta-categories"},
       [](RunConfig& c, const std::string& k, const std::string& v) { c.synthetic.num_meta = to_int<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.synthetic.num_meta); }},
      {{"dim", false, "synthetic: feature dimension"},
       [](RunConfig& c, const std::string& k, const std::string& v) { c.synthetic.feature_dim = to_int<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.synthetic.feature_dim); }},
      {{"delta", false, "synthetic: fine-grained scale"},
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.synthetic.fine_grained_scale = to_double(k, v);
       },
       [](const RunConfig& c) { return format_double(c.synthetic.fine_grained_scale); }},
      {{"ratio", false, "synthetic: imbalance ratio"},
       [](RunConfig& c, const std::string& k, const std::string& v) { c.synthetic.imbalance_ratio = to_double(k, v); },
       [](const RunConfig& c) { return format_double(c.synthetic.imbalance_ratio); }},
      {{"max_count", false, "synthetic: samples in the largest class"},
       [](RunConfig& c, const std::string& k, const std::string& v) { c.synthetic.max_count = to_int<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.synthetic.max_count); }},
      {{"noise", false, "synthetic: per-coordinate noise std"},
       [](RunConfig& c, const std::string& k, const std::string& v) { c.synthetic.noise_std = to_double(k, v); },
       [](const RunConfig& c) { return format_double(c.synthetic.noise_std); }},
      {{"test_per_class", false, "synthetic: test samples per class"},
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.synthetic.test_per_class = to_int<int>(k, v);
       },
       [](const RunConfig& c) { return std::to_string(c.synthetic.test_per_class); }},
      {{"group_mode", false, "percentile or absolute"},
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const auto t = trim(v);
         if (t == "percentile") {
           c.groups = eval::GroupSpec::percentile();
         } else if (t == "absolute") {
           c.groups = eval::GroupSpec::absolute();
         } else {
           throw ValidationError("config key '" + k + "': expected percentile or absolute");
         }
       },
       [](const RunConfig& c) { return group_mode_name(c.groups); }},
      {{"group_hi", false, "Many threshold (count, or class fraction in percentile mode)"},
       [](RunConfig& c, const std::string& k, const std::string& v) { c.groups.hi = to_double(k, v); },
       [](const RunConfig& c) { return format_double(c.groups.hi); }},
      {{"group_lo", false, "Few threshold (count, or class fraction in percentile mode)"},
       [](RunConfig& c, const std::string& k, const std::string& v) { c.groups.lo = to_double(k, v); },
       [](const RunConfig& c) { return format_double(c.groups.lo); }},
      {{"crt", true, "run classifier retraining as a second stage"},
       [](RunConfig& c, const std::string& k, const std::string& v) { c.crt = to_bool(k, v); },
       [](const RunConfig& c) { return from_bool(c.crt); }},
      {{"crt_epochs", false, "second-stage epochs (0: same as epochs)"},
       [](RunConfig& c, const std::string& k, const std::string& v) { c.crt_epochs = to_int<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.crt_epochs); }},
  };
  return entries;
}

const Entry* find(const std::string& key) {
  for (const auto& e : table()) {
    if (e.info.key == key) return &e;
  }
  return nullptr;
}

}  // namespace

data::SyntheticSpec RunConfig::effective_synthetic() const {
  data::SyntheticSpec s = synthetic;
  s.seed = data_seed.value_or(train.seed);
  return s;
}

const std::vector<KeyInfo>& known_keys() {
  static const std::vector<KeyInfo> keys = [] {
    std::vector<KeyInfo> out;
    for (const auto& e : table()) out.push_back(e.info);
    return out;
  }();
  return keys;
}

void apply_preset(RunConfig& cfg, const std::string& name) {
  if (name == "fgvc") {
    cfg.train.lambda = 10.0;
    cfg.train.tau = 0.0;
  } else if (name == "long_tail") {
    cfg.train.lambda = 0.25;
    cfg.train.tau = 0.1;
  } else if (name == "natural_world") {
    cfg.train.lambda = 2.0;
    cfg.train.tau = 0.0;
  } else if (name != "none") {
    throw ValidationError("unknown preset '" + name + "' (expected fgvc, long_tail, natural_world, none)");
  }
  cfg.preset = name;
}

void apply(RunConfig& cfg, const std::string& key, const std::string& value) {
  const Entry* e = find(key);
  if (e == nullptr) {
    std::string valid;
    for (const auto& k : known_keys()) valid += (valid.empty() ? "" : ", ") + k.key;
    throw ValidationError("unknown config key '" + key + "'; valid keys: " + valid);
  }
  e->set(cfg, key, value);
}

void apply_all(RunConfig& cfg, const KeyValues& kv) {
  for (const auto& [k, v] : kv) {
    if (k == "preset") apply(cfg, k, v);
  }
  for (const auto& [k, v] : kv) {
    if (k != "preset") apply(cfg, k, v);
  }
}

KeyValues parse_text(const std::string& text) {
  KeyValues out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const auto body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected key = value", line_no);
    const auto key = trim(body.substr(0, eq));
    if (key.empty()) throw ParseError("empty key", line_no);
    out.emplace_back(std::string(key), std::string(trim(body.substr(eq + 1))));
  }
  return out;
}

KeyValues read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str());
}

KeyValues to_key_values(const RunConfig& cfg) {
  KeyValues out;
  for (const auto& e : table()) out.emplace_back(e.info.key, e.get(cfg));
  return out;
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : to_key_values(cfg)) out += k + " = " + v + "\n";
  return out;
}

void validate(const RunConfig& cfg) {
  train::validate(cfg.train);
  if (cfg.arch == model::Architecture::mlp1 && cfg.hidden < 1) {
    throw ValidationError("hidden must be >= 1 for mlp1");
  }
  if (cfg.train_csv.empty() != cfg.test_csv.empty()) {
    throw ValidationError("set both train_csv and test_csv, or neither");
  }
  if (cfg.train_csv.empty()) data::validate(cfg.synthetic);
  if (cfg.crt_epochs < 0) throw ValidationError("crt_epochs must be >= 0");
  // Exercises the threshold checks.
  (void)eval::assign_groups({1, 2}, cfg.groups);
}

}  // namespace ace::config
