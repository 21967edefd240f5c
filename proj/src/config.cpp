#include "zeropur/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace zp {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "," : "") + parts[i];
  return out;
}

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::uint64_t parse_uint(const std::string& text) {
  std::uint64_t v = 0;
  const auto t = trim(text);
  const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size()) {
    throw ConfigError("expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& text) {
  const auto t = trim(text);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError("expected a boolean, got '" + text + "'");
}

struct Field {
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class M>
Field number(M member) {
  return {[member](ExperimentConfig& c, const std::string& v) { member(c) = parse_number(v); },
          [member](const ExperimentConfig& c) { return fmt(member(const_cast<ExperimentConfig&>(c))); }};
}

template <class M>
Field count(M member) {
  return {[member](ExperimentConfig& c, const std::string& v) { member(c) = parse_uint(v); },
          [member](const ExperimentConfig& c) { return std::to_string(member(const_cast<ExperimentConfig&>(c))); }};
}

template <class M>
Field flag(M member) {
  return {[member](ExperimentConfig& c, const std::string& v) { member(c) = parse_bool(v); },
          [member](const ExperimentConfig& c) {
            return std::string(member(const_cast<ExperimentConfig&>(c)) ? "true" : "false");
          }};
}

template <class M>
Field path(M member) {
  return {[member](ExperimentConfig& c, const std::string& v) { member(c) = trim(v); },
          [member](const ExperimentConfig& c) { return member(const_cast<ExperimentConfig&>(c)).string(); }};
}

std::vector<std::string> parse_taps(const std::string& v) {
  auto taps = split(v, ',');
  Classifier::check_taps(taps);
  return taps;
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> f;
    f["seed"] = count([](ExperimentConfig& c) -> std::uint64_t& { return c.seed; });
    f["sample_count"] = count([](ExperimentConfig& c) -> std::size_t& { return c.sample_count; });
    f["defense"] = {[](ExperimentConfig& c, const std::string& v) { c.defense = parse_defense_mode(trim(v)); },
                    [](const ExperimentConfig& c) { return std::string(defense_mode_name(c.defense)); }};

    f["dataset.kind"] = {[](ExperimentConfig& c, const std::string& v) {
                           const auto k = trim(v);
                           if (k != "procedural" && k != "cifar10") {
                             throw ConfigError("dataset.kind must be procedural or cifar10, got '" + k + "'");
                           }
                           c.dataset.kind = k;
                         },
                         [](const ExperimentConfig& c) { return c.dataset.kind; }};
    f["dataset.path"] = path([](ExperimentConfig& c) -> std::filesystem::path& { return c.dataset.path; });
    f["dataset.train_path"] = path([](ExperimentConfig& c) -> std::filesystem::path& { return c.dataset.train_path; });
    f["dataset.train_per_class"] =
        count([](ExperimentConfig& c) -> std::size_t& { return c.dataset.train_per_class; });
    f["dataset.test_per_class"] = count([](ExperimentConfig& c) -> std::size_t& { return c.dataset.test_per_class; });

    f["model.path"] = path([](ExperimentConfig& c) -> std::filesystem::path& { return c.model_path; });
    f["model.save"] = path([](ExperimentConfig& c) -> std::filesystem::path& { return c.model_save; });

    f["train.preset"] = {[](ExperimentConfig& c, const std::string& v) { c.train.preset = parse_augmentation(trim(v)); },
                         [](const ExperimentConfig& c) { return std::string(augmentation_name(c.train.preset)); }};
    f["train.epochs"] = count([](ExperimentConfig& c) -> std::size_t& { return c.train.epochs; });
    f["train.batch_size"] = count([](ExperimentConfig& c) -> std::size_t& { return c.train.batch_size; });
    f["train.lr"] = number([](ExperimentConfig& c) -> double& { return c.train.lr; });
    f["train.momentum"] = number([](ExperimentConfig& c) -> double& { return c.train.momentum; });
    f["train.weight_decay"] = number([](ExperimentConfig& c) -> double& { return c.train.weight_decay; });
    f["train.warmup_epochs"] = count([](ExperimentConfig& c) -> std::size_t& { return c.train.warmup_epochs; });
    f["train.grad_clip"] = number([](ExperimentConfig& c) -> double& { return c.train.grad_clip; });

    f["attack.kind"] = {[](ExperimentConfig& c, const std::string& v) { c.attack.kind = parse_attack_kind(trim(v)); },
                        [](const ExperimentConfig& c) { return std::string(attack_kind_name(c.attack.kind)); }};
    f["attack.eps"] = number([](ExperimentConfig& c) -> double& { return c.attack.eps; });
    f["attack.steps"] = count([](ExperimentConfig& c) -> std::size_t& { return c.attack.steps; });
    f["attack.step_size"] = number([](ExperimentConfig& c) -> double& { return c.attack.step_size; });
    f["attack.random_start"] = flag([](ExperimentConfig& c) -> bool& { return c.attack.random_start; });
    f["attack.norm"] = {[](ExperimentConfig& c, const std::string& v) { c.attack.norm = parse_norm(trim(v)); },
                        [](const ExperimentConfig& c) { return std::string(norm_name(c.attack.norm)); }};
    f["attack.di_prob"] = number([](ExperimentConfig& c) -> double& { return c.attack.di_prob; });
    f["attack.di_min_scale"] = number([](ExperimentConfig& c) -> double& { return c.attack.di_min_scale; });
    f["attack.bpda_samples"] = count([](ExperimentConfig& c) -> std::size_t& { return c.attack.bpda_samples; });

    f["gs.iterations"] = count([](ExperimentConfig& c) -> std::size_t& { return c.gs.iterations; });
    f["gs.step"] = number([](ExperimentConfig& c) -> double& { return c.gs.step; });
    f["gs.eps"] = number([](ExperimentConfig& c) -> double& { return c.gs.eps; });
    f["gs.blur"] = {[](ExperimentConfig& c, const std::string& v) { c.gs.blur = parse_blur_op(v); },
                    [](const ExperimentConfig& c) { return format_blur_op(c.gs.blur); }};
    f["gs.random_start"] = number([](ExperimentConfig& c) -> double& { return c.gs.random_start; });
    f["gs.differentiate_blur"] = flag([](ExperimentConfig& c) -> bool& { return c.gs.differentiate_blur; });
    f["gs.norm"] = {[](ExperimentConfig& c, const std::string& v) { c.gs.norm = parse_norm(trim(v)); },
                    [](const ExperimentConfig& c) { return std::string(norm_name(c.gs.norm)); }};

    f["ap.iterations"] = count([](ExperimentConfig& c) -> std::size_t& { return c.ap.iterations; });
    f["ap.eps"] = number([](ExperimentConfig& c) -> double& { return c.ap.eps; });
    f["ap.lambda1"] = number([](ExperimentConfig& c) -> double& { return c.ap.lambda1; });
    f["ap.lambda2"] = number([](ExperimentConfig& c) -> double& { return c.ap.lambda2; });
    f["ap.taps"] = {[](ExperimentConfig& c, const std::string& v) { c.ap.taps = parse_taps(v); },
                    [](const ExperimentConfig& c) { return join(c.ap.taps); }};
    f["ap.lpips_taps"] = {[](ExperimentConfig& c, const std::string& v) { c.ap.lpips_taps = parse_taps(v); },
                          [](const ExperimentConfig& c) { return join(c.ap.lpips_taps); }};
    f["ap.norm"] = {[](ExperimentConfig& c, const std::string& v) { c.ap.norm = parse_norm(trim(v)); },
                    [](const ExperimentConfig& c) { return std::string(norm_name(c.ap.norm)); }};

    f["sweep.operators"] = {[](ExperimentConfig& c, const std::string& v) {
                              c.sweep.operators.clear();
                              for (const auto& item : split(v, ',')) c.sweep.operators.push_back(parse_blur_op(item));
                            },
                            [](const ExperimentConfig& c) {
                              std::vector<std::string> parts;
                              for (const auto& op : c.sweep.operators) parts.push_back(format_blur_op(op));
                              return join(parts);
                            }};
    f["sweep.presets"] = {[](ExperimentConfig& c, const std::string& v) {
                            c.sweep.presets.clear();
                            for (const auto& item : split(v, ',')) c.sweep.presets.push_back(parse_augmentation(item));
                          },
                          [](const ExperimentConfig& c) {
                            std::vector<std::string> parts;
                            for (auto p : c.sweep.presets) parts.push_back(augmentation_name(p));
                            return join(parts);
                          }};
    return f;
  }();
  return table;
}

constexpr const char* kSweepModelPrefix = "sweep.model.";

}  // namespace

void ExperimentConfig::validate() const {
  if (sample_count < 1) throw ConfigError("sample_count must be >= 1");
  if (dataset.kind == "procedural") {
    if (dataset.train_per_class < 1 || dataset.test_per_class < 1) {
      throw ConfigError("dataset.train_per_class and dataset.test_per_class must be >= 1");
    }
  } else {
    if (dataset.path.empty()) throw ConfigError("dataset.path is required for cifar10");
    if (!std::filesystem::exists(dataset.path)) throw ConfigError("dataset.path does not exist: " + dataset.path.string());
    if (!dataset.train_path.empty() && !std::filesystem::exists(dataset.train_path)) {
      throw ConfigError("dataset.train_path does not exist: " + dataset.train_path.string());
    }
  }
  if (!model_path.empty() && !std::filesystem::exists(model_path)) {
    throw ConfigError("model.path does not exist: " + model_path.string());
  }
  train.validate();
  attack.validate();
  gs.validate();
  ap.validate();
  for (const auto& op : sweep.operators) op.validate();
}

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap out;
  std::stringstream in(text);
  std::string line, section;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (!section.empty()) key = section + "." + key;
    if (!out.emplace(key, trim(line.substr(eq + 1))).second) {
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key " + key);
    }
  }
  return out;
}

ConfigMap read_config_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot read config file " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config_text(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

double parse_number(const std::string& text) {
  const auto t = trim(text);
  auto one = [&](const std::string& s) {
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size()) {
      throw ConfigError("expected a number, got '" + text + "'");
    }
    return v;
  };
  const auto slash = t.find('/');
  if (slash == std::string::npos) return one(t);
  const double den = one(trim(t.substr(slash + 1)));
  if (den == 0.0) throw ConfigError("division by zero in '" + text + "'");
  return one(trim(t.substr(0, slash))) / den;
}

BlurOp parse_blur_op(const std::string& text) {
  const auto parts = split(text, ':');
  if (parts.empty()) throw ConfigError("empty blur operator");
  BlurOp op;
  op.kind = parse_blur_kind(parts[0]);
  auto arity = [&](std::size_t lo, std::size_t hi) {
    if (parts.size() - 1 < lo || parts.size() - 1 > hi) {
      throw ConfigError("blur operator '" + text + "' has the wrong number of parameters");
    }
  };
  switch (op.kind) {
    case BlurKind::identity:
      arity(0, 0);
      break;
    case BlurKind::gaussian:
      arity(0, 1);
      if (parts.size() > 1) op.sigma = parse_number(parts[1]);
      break;
    case BlurKind::median:
      arity(0, 1);
      if (parts.size() > 1) op.window = static_cast<int>(parse_uint(parts[1]));
      break;
    case BlurKind::tvm:
      arity(0, 2);
      if (parts.size() > 1) op.tv_weight = parse_number(parts[1]);
      if (parts.size() > 2) op.tv_iterations = static_cast<int>(parse_uint(parts[2]));
      break;
  }
  op.validate();
  return op;
}

std::string format_blur_op(const BlurOp& op) {
  switch (op.kind) {
    case BlurKind::gaussian:
      return "gaussian:" + fmt(op.sigma);
    case BlurKind::median:
      return "median:" + std::to_string(op.window);
    case BlurKind::tvm:
      return "tvm:" + fmt(op.tv_weight) + ":" + std::to_string(op.tv_iterations);
    default:
      return "identity";
  }
}

void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  if (key.rfind(kSweepModelPrefix, 0) == 0) {
    const std::string preset = key.substr(std::char_traits<char>::length(kSweepModelPrefix));
    cfg.sweep.models[augmentation_name(parse_augmentation(preset))] = trim(value);
    return;
  }
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
  try {
    it->second.set(cfg, value);
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

ExperimentConfig make_config(const ConfigMap& settings) {
  ExperimentConfig cfg;
  for (const auto& [k, v] : settings) apply_setting(cfg, k, v);
  return cfg;
}

std::string canonical_config(const ExperimentConfig& cfg) {
  std::map<std::string, std::string> lines;
  for (const auto& [key, field] : fields()) lines[key] = field.get(cfg);
  for (const auto& [preset, p] : cfg.sweep.models) lines[kSweepModelPrefix + preset] = p.string();
  std::string out;
  for (const auto& [key, value] : lines) out += key + " = " + value + "\n";
  return out;
}

std::string config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical_config(cfg)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace zp
