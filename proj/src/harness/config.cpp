#include "ir2net/config.hpp"

#include <charconv>
#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>

namespace ir2net::harness {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || end != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as a number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::array<double, 3> parse_triple(const std::string& key, const std::string& v) {
  std::array<double, 3> out{};
  std::stringstream ss(v);
  std::string item;
  int i = 0;
  while (std::getline(ss, item, ',')) {
    if (i >= 3) throw ConfigError("config key '" + key + "': expected three comma-separated values");
    out[static_cast<std::size_t>(i++)] = parse_number<double>(key, trim(item));
  }
  if (i != 3) throw ConfigError("config key '" + key + "': expected three comma-separated values");
  return out;
}

/// "1/4", "0.25" or "2" -> reduced num/den.
void parse_width(const std::string& key, const std::string& v, int& num, int& den) {
  std::int64_t n = 0, d = 1;
  if (auto slash = v.find('/'); slash != std::string::npos) {
    n = parse_number<std::int64_t>(key, trim(v.substr(0, slash)));
    d = parse_number<std::int64_t>(key, trim(v.substr(slash + 1)));
  } else if (auto dot = v.find('.'); dot != std::string::npos) {
    const auto frac = v.substr(dot + 1);
    if (frac.size() > 6) throw ConfigError("config key '" + key + "': too many decimal places");
    n = parse_number<std::int64_t>(key, v.substr(0, dot) + frac);
    for (std::size_t i = 0; i < frac.size(); ++i) d *= 10;
  } else {
    n = parse_number<std::int64_t>(key, v);
  }
  if (n <= 0 || d <= 0) throw ConfigError("config key '" + key + "': width multiplier must be positive");
  const auto g = std::gcd(n, d);
  num = static_cast<int>(n / g);
  den = static_cast<int>(d / g);
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::cosine: return "cosine";
    case ScheduleKind::step: return "step";
    case ScheduleKind::constant: return "constant";
  }
  return "cosine";
}

std::string to_string(DataFormat format) { return format == DataFormat::cifar10 ? "cifar10" : "synthetic"; }

void TrainConfig::validate() const {
  ires.validate();
  if (backbone.num_classes < 1 || backbone.num_classes > 100000) throw ConfigError("num_classes must lie in [1, 100000]");
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("adam betas must lie in [0, 1)");
  if (!(adam_epsilon > 0)) throw ConfigError("adam_epsilon must be positive");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
  if (step_size < 1) throw ConfigError("step_size must be >= 1");
  if (!(step_gamma > 0 && step_gamma <= 1)) throw ConfigError("step_gamma must lie in (0, 1]");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (max_steps < 0 || eval_every < 0 || checkpoint_every < 0) {
    throw ConfigError("max_steps, eval_every and checkpoint_every must be >= 0");
  }
  if (train_subset < 0 || test_subset < 0) throw ConfigError("subset sizes must be >= 0");
  if (synthetic_train < 1 || synthetic_test < 1) throw ConfigError("synthetic sizes must be >= 1");
  for (double s : std) {
    if (!(s > 0)) throw ConfigError("normalization std must be positive");
  }
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

TrainConfig parse_config(const std::string& text) {
  TrainConfig cfg;
  auto& b = cfg.backbone;
  const std::map<std::string, std::function<void(const std::string&, const std::string&)>> setters{
      {"backbone", [&](auto&, auto& v) { b.arch = model::parse_architecture(v); }},
      {"width_multiplier", [&](auto& k, auto& v) { parse_width(k, v, b.width_num, b.width_den); }},
      {"num_classes", [&](auto& k, auto& v) { b.num_classes = parse_number<int>(k, v); }},
      {"input_size",
       [&](auto& k, auto& v) { b.input_h = b.input_w = parse_number<std::int64_t>(k, v); }},
      {"stem", [&](auto&, auto& v) { b.stem = model::parse_stem(v); }},
      {"activation",
       [&](auto&, auto& v) {
         if (v != "auto") nn::parse_activation(v);
         b.activation = v;
       }},
      {"binarize", [&](auto& k, auto& v) { b.binarize = parse_bool(k, v); }},
      {"binarize_shortcuts", [&](auto& k, auto& v) { b.binarize_shortcuts = parse_bool(k, v); }},
      {"scaling", [&](auto& k, auto& v) { b.scaling = parse_bool(k, v); }},
      {"recovery.mode", [&](auto&, auto& v) { b.recovery.mode = recover::parse_mode(v); }},
      {"recovery.r", [&](auto& k, auto& v) { b.recovery.r = parse_number<int>(k, v); }},
      {"recovery.g", [&](auto&, auto& v) { b.recovery.set_groups(v); }},
      {"recovery.rounding", [&](auto&, auto& v) { b.recovery.rounding = recover::parse_rounding(v); }},
      {"ires.enabled", [&](auto& k, auto& v) { cfg.ires.enabled = parse_bool(k, v); }},
      {"ires.lambda", [&](auto& k, auto& v) { cfg.ires.lambda = parse_number<double>(k, v); }},
      {"ires.mu", [&](auto& k, auto& v) { cfg.ires.mu = parse_number<double>(k, v); }},
      {"optimizer",
       [&](auto& k, auto& v) {
         if (v == "sgd") {
           cfg.optimizer = OptimizerKind::sgd;
         } else if (v == "adam") {
           cfg.optimizer = OptimizerKind::adam;
         } else {
           throw ConfigError("config key '" + k + "': expected sgd or adam");
         }
       }},
      {"lr", [&](auto& k, auto& v) { cfg.lr = parse_number<double>(k, v); }},
      {"momentum", [&](auto& k, auto& v) { cfg.momentum = parse_number<double>(k, v); }},
      {"beta1", [&](auto& k, auto& v) { cfg.beta1 = parse_number<double>(k, v); }},
      {"beta2", [&](auto& k, auto& v) { cfg.beta2 = parse_number<double>(k, v); }},
      {"adam_epsilon", [&](auto& k, auto& v) { cfg.adam_epsilon = parse_number<double>(k, v); }},
      {"weight_decay", [&](auto& k, auto& v) { cfg.weight_decay = parse_number<double>(k, v); }},
      {"schedule",
       [&](auto& k, auto& v) {
         if (v == "cosine") {
           cfg.schedule = ScheduleKind::cosine;
         } else if (v == "step") {
           cfg.schedule = ScheduleKind::step;
         } else if (v == "constant") {
           cfg.schedule = ScheduleKind::constant;
         } else {
           throw ConfigError("config key '" + k + "': expected cosine, step or constant");
         }
       }},
      {"step_size", [&](auto& k, auto& v) { cfg.step_size = parse_number<int>(k, v); }},
      {"step_gamma", [&](auto& k, auto& v) { cfg.step_gamma = parse_number<double>(k, v); }},
      {"epochs", [&](auto& k, auto& v) { cfg.epochs = parse_number<int>(k, v); }},
      {"batch_size", [&](auto& k, auto& v) { cfg.batch_size = parse_number<int>(k, v); }},
      {"max_steps", [&](auto& k, auto& v) { cfg.max_steps = parse_number<int>(k, v); }},
      {"eval_every", [&](auto& k, auto& v) { cfg.eval_every = parse_number<int>(k, v); }},
      {"checkpoint_every", [&](auto& k, auto& v) { cfg.checkpoint_every = parse_number<int>(k, v); }},
      {"seed", [&](auto& k, auto& v) { cfg.seed = parse_number<std::uint64_t>(k, v); }},
      {"data.format",
       [&](auto& k, auto& v) {
         if (v == "cifar10") {
           cfg.data_format = DataFormat::cifar10;
         } else if (v == "synthetic") {
           cfg.data_format = DataFormat::synthetic;
         } else {
           throw ConfigError("config key '" + k + "': expected cifar10 or synthetic");
         }
       }},
      {"data.dir", [&](auto&, auto& v) { cfg.data_dir = v; }},
      {"data.train_subset", [&](auto& k, auto& v) { cfg.train_subset = parse_number<int>(k, v); }},
      {"data.test_subset", [&](auto& k, auto& v) { cfg.test_subset = parse_number<int>(k, v); }},
      {"data.augment", [&](auto& k, auto& v) { cfg.augment = parse_bool(k, v); }},
      {"data.mean", [&](auto& k, auto& v) { cfg.mean = parse_triple(k, v); }},
      {"data.std", [&](auto& k, auto& v) { cfg.std = parse_triple(k, v); }},
      {"data.synthetic_train", [&](auto& k, auto& v) { cfg.synthetic_train = parse_number<int>(k, v); }},
      {"data.synthetic_test", [&](auto& k, auto& v) { cfg.synthetic_test = parse_number<int>(k, v); }},
      {"output_dir", [&](auto&, auto& v) { cfg.output_dir = v; }},
  };

  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // A '#' starts a comment at line start or after whitespace.
    for (std::size_t i = 1; i < line.size(); ++i) {
      if (line[i] == '#' && std::isspace(static_cast<unsigned char>(line[i - 1]))) {
        line.resize(i);
        break;
      }
    }
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const auto key = trim(t.substr(0, eq));
    const auto value = trim(t.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    it->second(key, value);
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string serialize(const TrainConfig& cfg) {
  const auto& b = cfg.backbone;
  std::ostringstream os;
  auto kv = [&](const std::string& k, const std::string& v) { os << k << " = " << v << "\n"; };
  auto flag = [](bool v) { return std::string(v ? "true" : "false"); };
  auto triple = [](const std::array<double, 3>& a) {
    return fmt_double(a[0]) + "," + fmt_double(a[1]) + "," + fmt_double(a[2]);
  };
  kv("backbone", model::to_string(b.arch));
  kv("width_multiplier", std::to_string(b.width_num) + "/" + std::to_string(b.width_den));
  kv("num_classes", std::to_string(b.num_classes));
  if (b.input_h != b.input_w) throw ConfigError("non-square inputs cannot be serialized");
  kv("input_size", std::to_string(b.input_h));
  kv("stem", model::to_string(b.stem));
  kv("activation", b.activation);
  kv("binarize", flag(b.binarize));
  kv("binarize_shortcuts", flag(b.binarize_shortcuts));
  kv("scaling", flag(b.scaling));
  kv("recovery.mode", recover::to_string(b.recovery.mode));
  kv("recovery.r", std::to_string(b.recovery.r));
  kv("recovery.g", b.recovery.groups_str());
  kv("recovery.rounding", recover::to_string(b.recovery.rounding));
  kv("ires.enabled", flag(cfg.ires.enabled));
  kv("ires.lambda", fmt_double(cfg.ires.lambda));
  kv("ires.mu", fmt_double(cfg.ires.mu));
  kv("optimizer", to_string(cfg.optimizer));
  kv("lr", fmt_double(cfg.lr));
  kv("momentum", fmt_double(cfg.momentum));
  kv("beta1", fmt_double(cfg.beta1));
  kv("beta2", fmt_double(cfg.beta2));
  kv("adam_epsilon", fmt_double(cfg.adam_epsilon));
  kv("weight_decay", fmt_double(cfg.weight_decay));
  kv("schedule", to_string(cfg.schedule));
  kv("step_size", std::to_string(cfg.step_size));
  kv("step_gamma", fmt_double(cfg.step_gamma));
  kv("epochs", std::to_string(cfg.epochs));
  kv("batch_size", std::to_string(cfg.batch_size));
  kv("max_steps", std::to_string(cfg.max_steps));
  kv("eval_every", std::to_string(cfg.eval_every));
  kv("checkpoint_every", std::to_string(cfg.checkpoint_every));
  kv("seed", std::to_string(cfg.seed));
  kv("data.format", to_string(cfg.data_format));
  kv("data.dir", cfg.data_dir);
  kv("data.train_subset", std::to_string(cfg.train_subset));
  kv("data.test_subset", std::to_string(cfg.test_subset));
  kv("data.augment", flag(cfg.augment));
  kv("data.mean", triple(cfg.mean));
  kv("data.std", triple(cfg.std));
  kv("data.synthetic_train", std::to_string(cfg.synthetic_train));
  kv("data.synthetic_test", std::to_string(cfg.synthetic_test));
  kv("output_dir", cfg.output_dir);
  return os.str();
}

}  // namespace ir2net::harness
