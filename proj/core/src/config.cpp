#include "drrnet/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <set>
#include <sstream>

namespace drr {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <class Int>
Int parse_integer(const std::string& key, const std::string& text) {
  Int v{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(key + ": expected an integer, got '" + text + "'");
  }
  return v;
}

double parse_real(const std::string& key, const std::string& text) {
  double v = 0.0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  }
  return v;
}

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;
using Getter = std::function<std::string(const TrainConfig&)>;

struct Field {
  std::string key;
  Setter set;
  Getter get;
};

Field size_field(std::string key, std::size_t TrainConfig::*outer) {
  return {key,
          [outer](TrainConfig& c, const std::string& k, const std::string& v) {
            c.*outer = parse_integer<std::size_t>(k, v);
          },
          [outer](const TrainConfig& c) { return std::to_string(c.*outer); }};
}

Field model_field(std::string key, std::size_t NetworkConfig::*member) {
  return {key,
          [member](TrainConfig& c, const std::string& k, const std::string& v) {
            c.model.*member = parse_integer<std::size_t>(k, v);
          },
          [member](const TrainConfig& c) { return std::to_string(c.model.*member); }};
}

Field optimizer_field(std::string key, double OptimizerConfig::*member) {
  return {key,
          [member](TrainConfig& c, const std::string& k, const std::string& v) {
            c.optimizer.*member = parse_real(k, v);
          },
          [member](const TrainConfig& c) { return format_real(c.optimizer.*member); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      model_field("model.width", &NetworkConfig::width),
      model_field("model.hidden", &NetworkConfig::hidden),
      model_field("model.seq_len", &NetworkConfig::seq_len),
      model_field("model.classes", &NetworkConfig::classes),
      model_field("model.stages", &NetworkConfig::stages),
      model_field("model.depth_per_stage", &NetworkConfig::depth_per_stage),
      {"model.pattern",
       [](TrainConfig& c, const std::string&, const std::string& v) {
         c.model.pattern = parse_block_pattern(v);
       },
       [](const TrainConfig& c) { return std::string(to_string(c.model.pattern)); }},
      optimizer_field("train.lr", &OptimizerConfig::lr),
      optimizer_field("train.beta1", &OptimizerConfig::beta1),
      optimizer_field("train.beta2", &OptimizerConfig::beta2),
      optimizer_field("train.eps", &OptimizerConfig::eps),
      {"train.steps",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.steps = parse_integer<std::int64_t>(k, v);
       },
       [](const TrainConfig& c) { return std::to_string(c.steps); }},
      {"train.pretrain_steps",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.pretrain_steps = parse_integer<std::int64_t>(k, v);
       },
       [](const TrainConfig& c) { return std::to_string(c.pretrain_steps); }},
      size_field("train.batch", &TrainConfig::batch),
      size_field("train.eval_size", &TrainConfig::eval_size),
      {"schedule.policy",
       [](TrainConfig& c, const std::string&, const std::string& v) {
         c.schedule.shape = parse_policy_shape(v);
       },
       [](const TrainConfig& c) { return std::string(to_string(c.schedule.shape)); }},
      {"schedule.order",
       [](TrainConfig& c, const std::string&, const std::string& v) {
         c.schedule.order = parse_update_order(v);
       },
       [](const TrainConfig& c) { return std::string(to_string(c.schedule.order)); }},
      {"schedule.eta",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.schedule.eta = parse_integer<std::int64_t>(k, v);
       },
       [](const TrainConfig& c) { return std::to_string(c.schedule.eta); }},
      {"schedule.eta_unit",
       [](TrainConfig& c, const std::string&, const std::string& v) {
         c.schedule.unit = parse_step_unit(v);
       },
       [](const TrainConfig& c) { return std::string(to_string(c.schedule.unit)); }},
      {"schedule.tau",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.schedule.tau = parse_integer<std::int64_t>(k, v);
       },
       [](const TrainConfig& c) { return std::to_string(c.schedule.tau); }},
      {"schedule.alpha_end",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.schedule.end.alpha = parse_real(k, v);
       },
       [](const TrainConfig& c) { return format_real(c.schedule.end.alpha); }},
      {"schedule.beta_end",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.schedule.end.beta = parse_real(k, v);
       },
       [](const TrainConfig& c) { return format_real(c.schedule.end.beta); }},
      {"task.sigma",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.task_sigma = parse_real(k, v);
       },
       [](const TrainConfig& c) { return format_real(c.task_sigma); }},
      size_field("task.teacher_depth", &TrainConfig::teacher_depth),
      {"seed",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.seed = parse_integer<std::uint64_t>(k, v);
       },
       [](const TrainConfig& c) { return std::to_string(c.seed); }},
      {"precision",
       [](TrainConfig& c, const std::string&, const std::string& v) {
         c.precision = parse_precision(v);
       },
       [](const TrainConfig& c) { return std::string(to_string(c.precision)); }},
  };
  return table;
}

std::string key_list() {
  std::string out;
  for (const auto& key : config_keys()) out += "\n  " + key;
  return out;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

void TrainConfig::validate() const {
  model.validate();
  schedule.validate();
  if (!(optimizer.lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) ||
      !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) {
    throw ConfigError("train.beta1 and train.beta2 must lie in [0, 1)");
  }
  if (!(optimizer.eps > 0.0)) throw ConfigError("train.eps must be positive");
  if (steps < 0 || pretrain_steps < 0) throw ConfigError("step counts must be non-negative");
  if (batch == 0) throw ConfigError("train.batch must be at least 1");
  if (eval_size == 0) throw ConfigError("train.eval_size must be at least 1");
  if (!(task_sigma >= 0.0)) throw ConfigError("task.sigma must be non-negative");
  if (teacher_depth == 0) throw ConfigError("task.teacher_depth must be at least 1");
}

std::string TrainConfig::describe() const {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(*this) + "\n";
  return out;
}

TrainConfig parse_config(std::istream& in, const std::string& source) {
  std::map<std::string, const Field*> by_key;
  for (const auto& f : fields()) by_key[f.key] = &f;

  TrainConfig cfg;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = by_key.find(key);
    if (it == by_key.end()) {
      throw ConfigError(where + "unknown key '" + key + "'; valid keys are:" + key_list());
    }
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    if (value.empty()) throw ConfigError(where + "missing value for '" + key + "'");
    try {
      it->second->set(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

TrainConfig parse_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in, path);
}

}  // namespace drr
