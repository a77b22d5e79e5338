// SPDX-License-Identifier: Apache-2.0
#include "hsakd/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace hsakd {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    const auto n = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a non-negative integer, got '" + v +
                      "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<std::size_t> to_uint_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(to_uint(key, item));
  }
  return out;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Prefer the shortest representation that round-trips.
  for (int prec = 1; prec <= 17; ++prec) {
    char shorter[64];
    std::snprintf(shorter, sizeof shorter, "%.*g", prec, v);
    if (std::strtod(shorter, nullptr) == v) return shorter;
  }
  return buf;
}

KeyValues parse_key_values(const std::string& text, const std::set<std::string>& allowed) {
  KeyValues kv;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    std::replace(key.begin(), key.end(), '-', '_');
    const std::string value = trim(line.substr(eq + 1));
    if (!allowed.contains(key)) {
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    kv[key] = value;
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path,
                          const std::set<std::string>& allowed) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_key_values(buf.str(), allowed);
}

double lr_at(const LrSchedule& schedule, std::size_t epoch) {
  double lr = schedule.base;
  for (std::size_t m : schedule.milestones) {
    if (m <= epoch) lr *= schedule.decay;
  }
  return lr;
}

ModelSpec RunConfig::model_spec() const {
  return ModelSpec{stages, in_channels, classes, transforms};
}

LrSchedule RunConfig::schedule() const { return LrSchedule{lr, milestones, lr_decay}; }

TemperatureConfig RunConfig::temperatures() const {
  return TemperatureConfig{tau_task, tau_mimic};
}

void RunConfig::validate() const {
  if (stages.empty()) throw ConfigError("config: empty stage list");
  if (in_channels == 0) throw ConfigError("config: in_channels must be >= 1");
  if (classes < 1) throw ConfigError("config: classes must be >= 1");
  if (transforms < 1 || transforms > 4) {
    throw ConfigError("config: transforms must be in 1..4 (quarter-rotations)");
  }
  if (batch_size == 0) throw ConfigError("config: batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("config: lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("config: momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("config: weight_decay must be >= 0");
  if (!(lr_decay > 0.0)) throw ConfigError("config: lr_decay must be positive");
  if (!(tau_task > 0.0) || !(tau_mimic > 0.0)) {
    throw ConfigError("config: temperatures must be positive");
  }
  if (!loss.kl_q_stages.empty() && loss.kl_q_stages.size() != stages.size()) {
    throw ConfigError("config: kl_q stage subset does not match the stage count");
  }
}

const std::set<std::string>& run_config_keys() {
  static const std::set<std::string> keys{
      "stages",         "in_channels",  "classes",       "transforms",  "seed",
      "epochs",         "batch_size",   "lr",            "momentum",    "weight_decay",
      "milestones",     "lr_decay",     "tau_task",      "tau_mimic",   "teacher_regime",
      "loss",           "strict",       "train_data",    "test_data",   "teacher_checkpoint",
      "output_dir"};
  return keys;
}

RunConfig apply_key_values(const RunConfig& base, const KeyValues& kv) {
  RunConfig c = base;
  auto get = [&](const char* key) -> const std::string* {
    const auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  if (auto v = get("stages")) c.stages = parse_stages(*v);
  if (auto v = get("in_channels")) c.in_channels = to_uint("in_channels", *v);
  if (auto v = get("classes")) c.classes = to_uint("classes", *v);
  if (auto v = get("transforms")) c.transforms = to_uint("transforms", *v);
  if (auto v = get("seed")) c.seed = to_uint("seed", *v);
  if (auto v = get("epochs")) c.epochs = to_uint("epochs", *v);
  if (auto v = get("batch_size")) c.batch_size = to_uint("batch_size", *v);
  if (auto v = get("lr")) c.lr = to_double("lr", *v);
  if (auto v = get("momentum")) c.momentum = to_double("momentum", *v);
  if (auto v = get("weight_decay")) c.weight_decay = to_double("weight_decay", *v);
  if (auto v = get("milestones")) c.milestones = to_uint_list("milestones", *v);
  if (auto v = get("lr_decay")) c.lr_decay = to_double("lr_decay", *v);
  if (auto v = get("tau_task")) c.tau_task = to_double("tau_task", *v);
  if (auto v = get("tau_mimic")) c.tau_mimic = to_double("tau_mimic", *v);
  if (auto v = get("teacher_regime")) {
    if (*v == "joint") {
      c.teacher_regime = TeacherRegime::joint;
    } else if (*v == "frozen") {
      c.teacher_regime = TeacherRegime::frozen;
    } else {
      throw ConfigError("config: teacher_regime must be 'joint' or 'frozen', got '" + *v + "'");
    }
  }
  if (auto v = get("loss")) {
    try {
      c.loss = parse_loss_flags(*v, c.stages.size());
    } catch (const ContractError& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }
  if (auto v = get("strict")) c.strict = to_bool("strict", *v);
  if (auto v = get("train_data")) c.train_data = *v;
  if (auto v = get("test_data")) c.test_data = *v;
  if (auto v = get("teacher_checkpoint")) c.teacher_checkpoint = *v;
  if (auto v = get("output_dir")) c.output_dir = *v;
  return c;
}

std::string to_text(const RunConfig& c) {
  std::ostringstream os;
  os << "stages = " << format_stages(c.stages) << '\n'
     << "in_channels = " << c.in_channels << '\n'
     << "classes = " << c.classes << '\n'
     << "transforms = " << c.transforms << '\n'
     << "seed = " << c.seed << '\n'
     << "epochs = " << c.epochs << '\n'
     << "batch_size = " << c.batch_size << '\n'
     << "lr = " << format_double(c.lr) << '\n'
     << "momentum = " << format_double(c.momentum) << '\n'
     << "weight_decay = " << format_double(c.weight_decay) << '\n'
     << "milestones = " << join(c.milestones) << '\n'
     << "lr_decay = " << format_double(c.lr_decay) << '\n'
     << "tau_task = " << format_double(c.tau_task) << '\n'
     << "tau_mimic = " << format_double(c.tau_mimic) << '\n'
     << "teacher_regime = " << (c.teacher_regime == TeacherRegime::joint ? "joint" : "frozen")
     << '\n'
     << "loss = " << format_loss_flags(c.loss) << '\n'
     << "strict = " << (c.strict ? 1 : 0) << '\n'
     << "train_data = " << c.train_data << '\n'
     << "test_data = " << c.test_data << '\n'
     << "teacher_checkpoint = " << c.teacher_checkpoint << '\n'
     << "output_dir = " << c.output_dir << '\n';
  return os.str();
}

RunConfig run_config_from_text(const std::string& text) {
  const RunConfig c = apply_key_values(RunConfig{}, parse_key_values(text, run_config_keys()));
  c.validate();
  return c;
}

}  // namespace hsakd
