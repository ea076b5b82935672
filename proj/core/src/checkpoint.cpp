#include "drrnet/checkpoint.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace drr {

namespace {

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& text, const std::string& what) {
  std::size_t v = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("checkpoint: bad integer for " + what + ": '" + text + "'");
  }
  return v;
}

void apply_config_line(NetworkConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "model.width") cfg.width = parse_size(value, key);
  else if (key == "model.hidden") cfg.hidden = parse_size(value, key);
  else if (key == "model.seq_len") cfg.seq_len = parse_size(value, key);
  else if (key == "model.classes") cfg.classes = parse_size(value, key);
  else if (key == "model.stages") cfg.stages = parse_size(value, key);
  else if (key == "model.depth_per_stage") cfg.depth_per_stage = parse_size(value, key);
  else if (key == "model.pattern") cfg.pattern = parse_block_pattern(value);
  else throw ConfigError("checkpoint: unknown config key '" + key + "'");
}

std::string topology_diff(const NetworkConfig& stored, const NetworkConfig& expected) {
  std::ostringstream diff;
  auto field = [&](const char* name, auto a, auto b) {
    if (a != b) diff << "\n  " << name << ": checkpoint " << a << ", expected " << b;
  };
  field("model.width", stored.width, expected.width);
  field("model.hidden", stored.hidden, expected.hidden);
  field("model.seq_len", stored.seq_len, expected.seq_len);
  field("model.classes", stored.classes, expected.classes);
  field("model.stages", stored.stages, expected.stages);
  field("model.depth_per_stage", stored.depth_per_stage, expected.depth_per_stage);
  if (stored.pattern != expected.pattern) {
    diff << "\n  model.pattern: checkpoint " << to_string(stored.pattern) << ", expected "
         << to_string(expected.pattern);
  }
  return diff.str();
}

}  // namespace

template <Scalar T>
Checkpoint make_checkpoint(const Backbone<T>& backbone) {
  Checkpoint ckpt;
  ckpt.config = backbone.config;
  const auto names = backbone.parameter_names();
  const auto params = backbone.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = *params[i];
    ckpt.records.push_back({names[i], p.shape(), std::vector<double>(p.values().begin(),
                                                                     p.values().end())});
  }
  return ckpt;
}

template <Scalar T>
Backbone<T> backbone_from_checkpoint(const Checkpoint& ckpt, const NetworkConfig& expected) {
  if (!(ckpt.config == expected)) {
    throw ConfigError("checkpoint topology does not match the configuration:" +
                      topology_diff(ckpt.config, expected));
  }
  return backbone_from_checkpoint<T>(ckpt);
}

template <Scalar T>
Backbone<T> backbone_from_checkpoint(const Checkpoint& ckpt) {
  Backbone<T> backbone = Backbone<T>::zeros(ckpt.config);
  const auto names = backbone.parameter_names();
  auto params = backbone.parameters();
  std::ostringstream diff;
  if (ckpt.records.size() != params.size()) {
    diff << "\n  record count: checkpoint " << ckpt.records.size() << ", expected "
         << params.size();
  }
  const std::size_t n = std::min(ckpt.records.size(), params.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& rec = ckpt.records[i];
    if (rec.name != names[i]) {
      diff << "\n  record " << i << ": name '" << rec.name << "', expected '" << names[i] << "'";
    } else if (rec.shape != params[i]->shape()) {
      diff << "\n  " << rec.name << ": shape " << shape_string(rec.shape) << ", expected "
           << shape_string(params[i]->shape());
    }
  }
  if (!diff.str().empty()) {
    throw ConfigError("checkpoint parameters do not match the topology:" + diff.str());
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& rec = ckpt.records[i];
    *params[i] = Tensor<T>(rec.shape, std::vector<T>(rec.values.begin(), rec.values.end()));
  }
  return backbone;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out << kCheckpointHeader << "\n";
  out << ckpt.config.describe();
  out << "params " << ckpt.records.size() << "\n";
  for (const auto& rec : ckpt.records) {
    out << rec.name << " dims";
    for (std::size_t d : rec.shape) out << " " << d;
    out << " :\n";
    for (std::size_t i = 0; i < rec.values.size(); ++i) {
      if (i) out << ' ';
      out << format_g17(rec.values[i]);
    }
    out << "\n";
  }
}

Checkpoint read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != kCheckpointHeader) {
    throw ConfigError(std::string("checkpoint: missing '") + kCheckpointHeader + "' header");
  }
  Checkpoint ckpt;
  std::size_t count = 0;
  bool have_count = false;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    if (line.rfind("params ", 0) == 0) {
      count = parse_size(trim(line.substr(7)), "params");
      have_count = true;
      break;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("checkpoint: malformed config line '" + line + "'");
    apply_config_line(ckpt.config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  if (!have_count) throw ConfigError("checkpoint: missing 'params' line");

  for (std::size_t r = 0; r < count; ++r) {
    std::string name, keyword;
    if (!(in >> name >> keyword) || keyword != "dims") {
      throw ConfigError("checkpoint: malformed record header for record " + std::to_string(r));
    }
    Checkpoint::Record rec;
    rec.name = name;
    std::string tok;
    while (in >> tok && tok != ":") rec.shape.push_back(parse_size(tok, name + " dims"));
    if (tok != ":" || rec.shape.empty()) {
      throw ConfigError("checkpoint: record '" + name + "' has no ':' terminated dims");
    }
    const std::size_t n = shape_size(rec.shape);
    rec.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (!(in >> tok)) throw ConfigError("checkpoint: record '" + name + "' is truncated");
      char* end = nullptr;
      rec.values[i] = std::strtod(tok.c_str(), &end);
      if (end != tok.c_str() + tok.size()) {
        throw ConfigError("checkpoint: bad value '" + tok + "' in record '" + name + "'");
      }
    }
    ckpt.records.push_back(std::move(rec));
  }
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open checkpoint for writing: " + path);
  write_checkpoint(out, ckpt);
  if (!out) throw ConfigError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint: " + path);
  return read_checkpoint(in);
}

template Checkpoint make_checkpoint(const Backbone<float>&);
template Checkpoint make_checkpoint(const Backbone<double>&);
template Backbone<float> backbone_from_checkpoint(const Checkpoint&, const NetworkConfig&);
template Backbone<double> backbone_from_checkpoint(const Checkpoint&, const NetworkConfig&);
template Backbone<float> backbone_from_checkpoint(const Checkpoint&);
template Backbone<double> backbone_from_checkpoint(const Checkpoint&);

}  // namespace drr
