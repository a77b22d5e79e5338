// SPDX-License-Identifier: Apache-2.0
#include "hsakd/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hsakd/config.hpp"
#include "hsakd/data.hpp"
#include "hsakd/eval.hpp"
#include "hsakd/training.hpp"

namespace hsakd {
namespace {

namespace fs = std::filesystem;

/// Raised for a missing required key after merging file and flags.
class UsageError : public Error {
 public:
  using Error::Error;
};

struct Command {
  std::string name;
  std::string help;
  std::set<std::string> keys;
  std::vector<std::string> required;
  std::function<void(const KeyValues&)> run;
};

std::set<std::string> with_run_keys(std::initializer_list<std::string> extra) {
  std::set<std::string> keys = run_config_keys();
  keys.insert(extra.begin(), extra.end());
  return keys;
}

const std::string* find(const KeyValues& kv, const std::string& key) {
  const auto it = kv.find(key);
  return it == kv.end() ? nullptr : &it->second;
}

std::string get_str(const KeyValues& kv, const std::string& key, const std::string& fallback) {
  const std::string* v = find(kv, key);
  return v ? *v : fallback;
}

double get_double(const KeyValues& kv, const std::string& key, double fallback) {
  const std::string* v = find(kv, key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const double d = std::stod(*v, &used);
    if (used == v->size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("key '" + key + "' expects a number, got '" + *v + "'");
}

std::uint64_t get_uint(const KeyValues& kv, const std::string& key, std::uint64_t fallback) {
  const std::string* v = find(kv, key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    if (!v->empty() && (*v)[0] != '-') {
      const auto n = std::stoull(*v, &used);
      if (used == v->size()) return n;
    }
  } catch (const std::exception&) {
  }
  throw ConfigError("key '" + key + "' expects a non-negative integer, got '" + *v + "'");
}

std::vector<std::uint64_t> get_seeds(const KeyValues& kv, std::uint64_t fallback) {
  const std::string* v = find(kv, "seeds");
  if (!v) return {fallback};
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(*v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    KeyValues one{{"seeds", item}};
    seeds.push_back(get_uint(one, "seeds", 0));
  }
  if (seeds.empty()) throw ConfigError("key 'seeds' is empty");
  return seeds;
}

fs::path out_path(const RunConfig& config, const KeyValues& kv, const std::string& key,
                  const std::string& fallback_name) {
  if (const std::string* v = find(kv, key)) return *v;
  return fs::path(config.output_dir.empty() ? "." : config.output_dir) / fallback_name;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out << text;
}

MetricsLog fresh_metrics(const fs::path& path) {
  fs::remove(path);
  return MetricsLog(path);
}

void cmd_gen_data(const KeyValues& kv) {
  SynthOptions opt;
  opt.classes = get_uint(kv, "classes", opt.classes);
  opt.per_class = get_uint(kv, "per_class", opt.per_class);
  opt.side = get_uint(kv, "side", opt.side);
  opt.channels = get_uint(kv, "channels", opt.channels);
  opt.noise_std = get_double(kv, "noise_std", opt.noise_std);
  opt.seed = get_uint(kv, "seed", opt.seed);
  const std::string split = get_str(kv, "split", "train");
  if (split != "train" && split != "test") {
    throw ConfigError("key 'split' must be 'train' or 'test', got '" + split + "'");
  }
  opt.split = split == "train" ? SplitTag::train : SplitTag::test;
  const Dataset ds = synth_generate(opt);
  write_dataset(ds, kv.at("out"));
  std::cout << "wrote " << ds.size() << " samples to " << kv.at("out") << '\n';
}

void cmd_split(const KeyValues& kv) {
  const Dataset ds = read_dataset(kv.at("data"), SplitTag::train);
  const Dataset part = few_shot_split(ds, get_double(kv, "fraction", 1.0), get_uint(kv, "seed", 1));
  write_dataset(part, kv.at("out"));
  std::cout << "wrote " << part.size() << " of " << ds.size() << " samples to " << kv.at("out")
            << '\n';
}

void cmd_train_teacher(const KeyValues& kv) {
  const RunConfig config = apply_key_values(RunConfig{}, kv);
  config.validate();
  const Dataset train = read_dataset(config.train_data, SplitTag::train);
  const fs::path ckpt_path = out_path(config, kv, "out", "teacher.ck");
  MetricsLog metrics = fresh_metrics(out_path(config, kv, "metrics", "teacher_metrics.csv"));
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult result = train_teacher(config, train, &metrics);
  save_checkpoint(result.checkpoint, ckpt_path);
  std::cout << "wrote teacher checkpoint " << ckpt_path.string() << " ("
            << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()
            << " s)\n";
  if (!config.test_data.empty()) {
    const EvalReport r = evaluate_top1(result.model, read_dataset(config.test_data, SplitTag::test));
    std::cout << "top1 = " << format_double(r.top1) << '\n';
  }
}

void cmd_train_student(const KeyValues& kv) {
  const RunConfig config = apply_key_values(RunConfig{}, kv);
  config.validate();
  const Dataset train = read_dataset(config.train_data, SplitTag::train);
  const Checkpoint teacher = load_checkpoint(config.teacher_checkpoint);
  const fs::path ckpt_path = out_path(config, kv, "out", "student.ck");
  MetricsLog metrics = fresh_metrics(out_path(config, kv, "metrics", "student_metrics.csv"));
  const TrainResult result = train_student(config, teacher, train, &metrics);
  save_checkpoint(result.checkpoint, ckpt_path);
  std::cout << "wrote student checkpoint " << ckpt_path.string() << '\n';
  if (!config.test_data.empty()) {
    const EvalReport r = evaluate_top1(result.model, read_dataset(config.test_data, SplitTag::test));
    std::cout << "top1 = " << format_double(r.top1) << '\n';
  }
}

void cmd_eval(const KeyValues& kv) {
  const Checkpoint ckpt = load_checkpoint(kv.at("checkpoint"));
  const Dataset data = read_dataset(kv.at("data"), SplitTag::test);
  const EvalReport r = evaluate_top1(ckpt, data);
  const fs::path report = get_str(kv, "report", kv.at("checkpoint") + ".eval.txt");
  write_text(report, r.to_text());
  std::cout << "top1 = " << format_double(r.top1) << '\n';
}

void cmd_probe(const KeyValues& kv) {
  const Checkpoint ckpt = load_checkpoint(kv.at("checkpoint"));
  const StagedModel model = model_from_checkpoint(ckpt);
  const Dataset train = read_dataset(kv.at("data"), SplitTag::train);
  const Dataset test =
      find(kv, "test_data") ? read_dataset(kv.at("test_data"), SplitTag::test) : train;
  ProbeOptions opt;
  opt.epochs = get_uint(kv, "epochs", opt.epochs);
  opt.lr = get_double(kv, "lr", opt.lr);
  opt.seed = get_uint(kv, "seed", opt.seed);
  EvalReport r = linear_probe(model, train, test, opt);
  r.config_echo = ckpt.config_text;
  const fs::path report = get_str(kv, "report", kv.at("checkpoint") + ".probe.txt");
  write_text(report, r.to_text());
  std::cout << "probe top1 = " << format_double(r.top1) << '\n';
}

void cmd_ablate(const KeyValues& kv) {
  const RunConfig config = apply_key_values(RunConfig{}, kv);
  config.validate();
  const Dataset train = read_dataset(config.train_data, SplitTag::train);
  const Dataset test = read_dataset(config.test_data, SplitTag::test);
  const Checkpoint teacher = load_checkpoint(config.teacher_checkpoint);
  std::vector<LossFlags> grid;
  std::stringstream ss(get_str(kv, "grid", "task;task,kl_q;task,kl_q,kl_p"));
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (!item.empty()) grid.push_back(parse_loss_flags(item, config.stages.size()));
  }
  const AblationGrid result = run_ablation(config, teacher, train, test, grid,
                                           get_seeds(kv, config.seed));
  const fs::path out = out_path(config, kv, "out", "ablation.csv");
  write_text(out, result.to_csv());
  for (const auto& [label, mean] : result.means()) {
    std::cout << label << " mean_top1 = " << format_double(mean) << '\n';
  }
  for (const AblationRow& row : result.rows) {
    if (!row.error.empty()) throw Error("ablation cell '" + row.label + "' failed: " + row.error);
  }
}

void cmd_compare(const KeyValues& kv) {
  const RunConfig config = apply_key_values(RunConfig{}, kv);
  config.validate();
  const Dataset train = read_dataset(config.train_data, SplitTag::train);
  const Dataset test = read_dataset(config.test_data, SplitTag::test);
  const DaSalTable table = compare_da_sal(config, train, test, get_seeds(kv, config.seed));
  const fs::path out = out_path(config, kv, "out", "da_sal.csv");
  write_text(out, table.to_text());
  std::cout << table.to_text();
}

std::vector<Command> commands() {
  return {
      {"gen-data", "Generate a synthetic template corpus",
       {"classes", "per_class", "side", "channels", "noise_std", "seed", "split", "out"},
       {"out"},
       cmd_gen_data},
      {"split", "Stratified few-shot subsample of a training set",
       {"data", "fraction", "seed", "out"},
       {"data", "fraction", "out"},
       cmd_split},
      {"train-teacher", "Train a teacher with auxiliary classifiers",
       with_run_keys({"out", "metrics"}),
       {"train_data"},
       cmd_train_teacher},
      {"train-student", "Distill a student from a teacher checkpoint",
       with_run_keys({"out", "metrics"}),
       {"train_data", "teacher_checkpoint"},
       cmd_train_student},
      {"eval", "Top-1 accuracy of a checkpoint",
       {"checkpoint", "data", "report"},
       {"checkpoint", "data"},
       cmd_eval},
      {"probe", "Linear probe on frozen pooled features",
       {"checkpoint", "data", "test_data", "epochs", "lr", "seed", "report"},
       {"checkpoint", "data"},
       cmd_probe},
      {"ablate", "Student loss-term ablation grid",
       with_run_keys({"grid", "seeds", "out"}),
       {"train_data", "test_data", "teacher_checkpoint"},
       cmd_ablate},
      {"compare-da-sal", "Rotation as augmentation vs as augmented label",
       with_run_keys({"seeds", "out"}),
       {"train_data", "test_data"},
       cmd_compare},
  };
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Knowledge distillation through stage-wise rotation-label auxiliary classifiers"};
  app.name("hsakd");
  app.require_subcommand(1);
  const std::vector<Command> cmds = commands();
  struct Bound {
    CLI::App* sub = nullptr;
    std::string config_file;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;
  };
  std::vector<Bound> bound(cmds.size());
  for (std::size_t i = 0; i < cmds.size(); ++i) {
    Bound& b = bound[i];
    b.sub = app.add_subcommand(cmds[i].name, cmds[i].help);
    b.sub->add_option("--config", b.config_file, "key = value config file");
    for (const std::string& key : cmds[i].keys) {
      std::string dashed = key;
      std::replace(dashed.begin(), dashed.end(), '_', '-');
      const std::string names = dashed == key ? "--" + key : "--" + dashed + ",--" + key;
      b.options[key] = b.sub->add_option(names, b.values[key]);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "hsakd: " << e.what() << '\n' << app.help();
    return 2;
  }

  for (std::size_t i = 0; i < cmds.size(); ++i) {
    Bound& b = bound[i];
    if (!b.sub->parsed()) continue;
    const Command& cmd = cmds[i];
    try {
      KeyValues kv;
      if (!b.config_file.empty()) kv = read_key_values(b.config_file, cmd.keys);
      for (const auto& [key, opt] : b.options) {
        if (opt->count() > 0) kv[key] = b.values[key];
      }
      for (const std::string& key : cmd.required) {
        if (!kv.contains(key)) throw UsageError("missing required key '" + key + "'");
      }
      cmd.run(kv);
      return 0;
    } catch (const UsageError& e) {
      std::cerr << "hsakd " << cmd.name << ": " << e.what() << '\n' << b.sub->help();
      return 2;
    } catch (const std::exception& e) {
      std::cerr << "hsakd " << cmd.name << ": error: " << e.what() << '\n';
      return 1;
    }
  }
  return 2;
}

}  // namespace hsakd
