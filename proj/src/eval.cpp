// SPDX-License-Identifier: Apache-2.0
#include "hsakd/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "hsakd/ops.hpp"
#include "hsakd/optim.hpp"
#include "hsakd/parallel.hpp"

namespace hsakd {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::size_t argmax_row(std::span<const float> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

EvalReport score(std::span<const std::size_t> predicted, const Dataset& data,
                 std::size_t classes) {
  EvalReport r;
  r.samples = data.size();
  r.per_class.assign(classes, 0.0);
  r.class_counts.assign(classes, 0);
  std::size_t correct = 0;
  std::vector<std::size_t> hits(classes, 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t y = data.labels[i];
    ++r.class_counts[y];
    if (predicted[i] == y) {
      ++correct;
      ++hits[y];
    }
  }
  r.top1 = 100.0 * static_cast<double>(correct) / static_cast<double>(data.size());
  for (std::size_t c = 0; c < classes; ++c) {
    if (r.class_counts[c]) {
      r.per_class[c] =
          100.0 * static_cast<double>(hits[c]) / static_cast<double>(r.class_counts[c]);
    }
  }
  return r;
}

std::vector<std::size_t> iota_n(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> v(end - begin);
  std::iota(v.begin(), v.end(), begin);
  return v;
}

}  // namespace

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << "top1 = " << format_double(top1) << '\n';
  os << "samples = " << samples << '\n';
  os << "per_class = ";
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    os << (c ? "," : "") << format_double(per_class[c]);
  }
  os << '\n';
  os << "class_counts = ";
  for (std::size_t c = 0; c < class_counts.size(); ++c) os << (c ? "," : "") << class_counts[c];
  os << '\n';
  os << "seconds = " << format_double(seconds) << '\n';
  std::istringstream echo(config_echo);
  std::string line;
  while (std::getline(echo, line)) {
    if (!line.empty()) os << "config." << line << '\n';
  }
  return os.str();
}

std::vector<std::size_t> predict(const StagedModel& model, const Dataset& data,
                                 std::size_t batch_size) {
  NoGradGuard guard;
  const std::size_t n_cls = model.spec().classes;
  std::vector<std::size_t> out;
  out.reserve(data.size());
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const auto idx = iota_n(start, std::min(data.size(), start + batch_size));
    const TapOutput fwd = forward_taps(model, image_batch(data, idx));
    dispatch_dtype(fwd.class_logits.dtype(), [&]<typename T>() {
      const auto logits = fwd.class_logits.data<T>();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto row = logits.subspan(i * n_cls, n_cls);
        out.push_back(
            static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()));
      }
    });
  }
  return out;
}

EvalReport evaluate_top1(const StagedModel& model, const Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) throw ContractError("evaluate_top1: empty test split");
  if (data.classes != model.spec().classes) {
    throw ConfigError("evaluate_top1: model has " + std::to_string(model.spec().classes) +
                      " classes but the dataset has " + std::to_string(data.classes));
  }
  const auto t0 = Clock::now();
  const auto predicted = predict(model, data, batch_size);
  EvalReport r = score(predicted, data, data.classes);
  r.seconds = seconds_since(t0);
  return r;
}

EvalReport evaluate_top1(const Checkpoint& ckpt, const Dataset& data) {
  const StagedModel model = model_from_checkpoint(ckpt);
  EvalReport r = evaluate_top1(model, data);
  r.config_echo = ckpt.config_text;
  return r;
}

Tensor pooled_features(const StagedModel& model, const Dataset& data, std::size_t batch_size) {
  NoGradGuard guard;
  const std::size_t d = model.embedding_dim();
  std::vector<double> feats(data.size() * d);
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const auto idx = iota_n(start, std::min(data.size(), start + batch_size));
    const TapOutput fwd = forward_taps(model, image_batch(data, idx));
    const std::vector<double> e = fwd.embedding.to_vector();
    std::copy(e.begin(), e.end(), feats.begin() + start * d);
  }
  return Tensor::from_values(Shape{data.size(), d}, feats, DType::f32);
}

EvalReport linear_probe(const StagedModel& model, const Dataset& train, const Dataset& test,
                        const ProbeOptions& options) {
  if (train.size() == 0 || test.size() == 0) throw ContractError("linear_probe: empty dataset");
  if (train.classes != test.classes) {
    throw ConfigError("linear_probe: train and test class counts differ");
  }
  if (train.channels != model.spec().in_channels || test.channels != model.spec().in_channels) {
    throw ConfigError("linear_probe: dataset channels differ from the model input");
  }
  const auto t0 = Clock::now();
  const std::size_t d = model.embedding_dim();
  const std::size_t k = train.classes;

  // standardize with training-set statistics
  const std::vector<double> ftrain = pooled_features(model, train).to_vector();
  const std::vector<double> ftest = pooled_features(model, test).to_vector();
  std::vector<double> mean(d, 0.0);
  std::vector<double> sd(d, 0.0);
  const double n = static_cast<double>(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += ftrain[i * d + j] / n;
  }
  for (std::size_t i = 0; i < train.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double c = ftrain[i * d + j] - mean[j];
      sd[j] += c * c / n;
    }
  }
  for (double& s : sd) s = std::sqrt(s) + 1e-6;
  auto standardize = [&](const std::vector<double>& f, std::size_t rows) {
    std::vector<float> out(f.size());
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        out[i * d + j] = static_cast<float>((f[i * d + j] - mean[j]) / sd[j]);
      }
    }
    return out;
  };
  const std::vector<float> xtrain = standardize(ftrain, train.size());
  const std::vector<float> xtest = standardize(ftest, test.size());

  std::mt19937_64 rng(parameter_seed(options.seed, "probe.weight"));
  std::normal_distribution<double> init(0.0, 0.01);
  std::vector<double> w0(d * k);
  for (double& v : w0) v = init(rng);
  std::vector<Parameter> head{
      Parameter{"probe.bias", Tensor::zeros(Shape{k})},
      Parameter{"probe.weight", Tensor::from_values(Shape{d, k}, w0, DType::f32)}};
  for (Parameter& p : head) p.tensor.set_requires_grad(true);

  auto rows_of = [&](const std::vector<float>& x, std::span<const std::size_t> idx) {
    Storage s(DType::f32, idx.size() * d);
    auto dst = s.span<float>();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::copy_n(x.data() + idx[i] * d, d, dst.data() + i * d);
    }
    return Tensor::from_storage(Shape{idx.size(), d}, std::move(s));
  };

  SgdMomentum optimizer;
  std::vector<std::size_t> order = iota_n(0, train.size());
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start,
                                             std::min(order.size(), start + options.batch_size) -
                                                 start);
      std::vector<std::size_t> y(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) y[i] = train.labels[idx[i]];
      for (Parameter& p : head) p.tensor.clear_grad();
      const Tensor logits = add_bias(matmul(rows_of(xtrain, idx), head[1].tensor), head[0].tensor);
      backward(cross_entropy(logits, y, 1.0));
      optimizer.step(head, SgdHyper{options.lr, options.momentum, options.weight_decay});
    }
  }

  NoGradGuard guard;
  const Tensor logits =
      add_bias(matmul(rows_of(xtest, iota_n(0, test.size())), head[1].tensor), head[0].tensor);
  const auto values = logits.data<float>();
  std::vector<std::size_t> predicted(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) predicted[i] = argmax_row(values.subspan(i * k, k));
  EvalReport r = score(predicted, test, k);
  r.seconds = seconds_since(t0);
  return r;
}

std::vector<std::pair<std::string, double>> AblationGrid::means() const {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const AblationRow& r : rows) {
    if (!r.error.empty()) continue;
    auto& [sum, count] = acc[r.label];
    sum += r.top1;
    ++count;
  }
  std::vector<std::pair<std::string, double>> out;
  for (const auto& [label, sc] : acc) {
    out.emplace_back(label, sc.first / static_cast<double>(sc.second));
  }
  return out;
}

double AblationGrid::mean(const std::string& label) const {
  for (const auto& [l, m] : means()) {
    if (l == label) return m;
  }
  throw ContractError("ablation grid has no successful rows for '" + label + "'");
}

std::string AblationGrid::to_csv() const {
  std::ostringstream os;
  os << "flags,seed,top1,teacher_hash,data_hash,error\n";
  for (const AblationRow& r : rows) {
    os << '"' << r.label << "\"," << r.seed << ',' << format_double(r.top1) << ','
       << r.teacher_hash << ',' << r.data_hash << ',' << '"' << r.error << "\"\n";
  }
  return os.str();
}

AblationGrid run_ablation(const RunConfig& base, const Checkpoint& teacher, const Dataset& train,
                          const Dataset& test, std::span<const LossFlags> grid,
                          std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw ContractError("run_ablation: need at least one seed");
  if (grid.empty()) throw ContractError("run_ablation: empty grid");
  const std::uint64_t teacher_hash = checkpoint_hash(teacher);
  const std::uint64_t data_hash = dataset_hash(train);
  AblationGrid out;
  for (const LossFlags& flags : grid) {
    for (std::uint64_t seed : seeds) {
      AblationRow row;
      row.flags = flags;
      row.label = format_loss_flags(flags);
      row.seed = seed;
      row.teacher_hash = teacher_hash;
      row.data_hash = data_hash;
      out.rows.push_back(std::move(row));
    }
  }
  parallel_for(out.rows.size(), 1, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      AblationRow& row = out.rows[i];
      try {
        RunConfig config = base;
        config.loss = row.flags;
        config.seed = row.seed;
        const TrainResult trained = train_student(config, teacher, train);
        row.top1 = evaluate_top1(trained.model, test).top1;
      } catch (const std::exception& e) {
        row.error = e.what();
      }
    }
  });
  std::stable_sort(out.rows.begin(), out.rows.end(),
                   [](const AblationRow& a, const AblationRow& b) {
                     return a.label != b.label ? a.label < b.label : a.seed < b.seed;
                   });
  return out;
}

const DaSalRow& DaSalTable::arm(const std::string& name) const {
  for (const DaSalRow& r : rows) {
    if (r.arm == name) return r;
  }
  throw ContractError("no arm named '" + name + "'");
}

std::string DaSalTable::to_text() const {
  std::ostringstream os;
  os << "arm,mean_top1,per_seed\n";
  for (const DaSalRow& r : rows) {
    os << r.arm << ',' << format_double(r.mean) << ',';
    for (std::size_t i = 0; i < r.top1.size(); ++i) {
      os << (i ? ";" : "") << format_double(r.top1[i]);
    }
    os << '\n';
  }
  return os.str();
}

DaSalTable compare_da_sal(const RunConfig& config, const Dataset& train, const Dataset& test,
                          std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw ContractError("compare_da_sal: need at least one seed");
  const std::vector<std::pair<std::string, SupervisedMode>> arms{
      {"baseline", SupervisedMode::baseline},
      {"da", SupervisedMode::rotation_augment},
      {"sal", SupervisedMode::joint}};
  const std::size_t cells = arms.size() * seeds.size();
  std::vector<double> top1(cells, 0.0);
  parallel_for(cells, 1, [&](std::size_t begin, std::size_t end) {
    for (std::size_t c = begin; c < end; ++c) {
      RunConfig cfg = config;
      cfg.seed = seeds[c % seeds.size()];
      const TrainResult trained = train_supervised(cfg, train, arms[c / seeds.size()].second);
      top1[c] = evaluate_top1(trained.model, test).top1;
    }
  });
  DaSalTable table;
  for (std::size_t a = 0; a < arms.size(); ++a) {
    DaSalRow row;
    row.arm = arms[a].first;
    row.top1.assign(top1.begin() + static_cast<std::ptrdiff_t>(a * seeds.size()),
                    top1.begin() + static_cast<std::ptrdiff_t>((a + 1) * seeds.size()));
    row.mean = std::accumulate(row.top1.begin(), row.top1.end(), 0.0) /
               static_cast<double>(row.top1.size());
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace hsakd
