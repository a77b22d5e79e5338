// SPDX-License-Identifier: Apache-2.0
#include "hsakd/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <cstring>

#include "byte_io.hpp"
#include "hsakd/ops.hpp"
#include "hsakd/optim.hpp"
#include "hsakd/parallel.hpp"

namespace hsakd {
namespace {

constexpr std::string_view kMagic = "HSKD-CK1";
constexpr std::uint32_t kVersion = 1;

std::uint64_t shuffle_seed(std::uint64_t seed) {
  std::uint64_t x = seed + 0x5bd1e9955bd1e995ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string rng_text(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

// Named scalar terms of one batch; the first entry is the minimized total.
using Terms = std::vector<std::pair<std::string, Tensor>>;
using BatchFn = std::function<Terms(std::span<const std::size_t>)>;

class ScopedStrict {
 public:
  explicit ScopedStrict(bool on) : previous_(strict_mode()) {
    if (on) set_strict_mode(true);
  }
  ~ScopedStrict() { set_strict_mode(previous_); }
  ScopedStrict(const ScopedStrict&) = delete;
  ScopedStrict& operator=(const ScopedStrict&) = delete;

 private:
  bool previous_;
};

// Runs `epochs` epochs of shuffled mini-batch SGD over `params`.
void run_epochs(const RunConfig& config, std::size_t n, std::mt19937_64& rng,
                std::vector<Parameter> params, MetricsLog* metrics, const std::string& phase,
                const BatchFn& batch_terms) {
  if (n == 0) throw ContractError("training: empty dataset");
  SgdMomentum optimizer;
  std::vector<std::size_t> order(n);
  const LrSchedule schedule = config.schedule();
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = lr_at(schedule, epoch);
    std::vector<std::string> names;
    std::vector<double> sums;
    std::size_t seen = 0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size, ++batch_no) {
      const std::size_t end = std::min(n, start + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      for (Parameter& p : params) p.tensor.clear_grad();
      Terms terms;
      try {
        terms = batch_terms(idx);
        const double total = terms.front().second.item();
        if (!std::isfinite(total)) throw NumericError("non-finite loss");
        backward(terms.front().second);
        optimizer.step(params, SgdHyper{lr, config.momentum, config.weight_decay});
      } catch (const NumericError& e) {
        throw TrainingError(phase + ": aborted at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_no) + ": " + e.what());
      }
      if (names.empty()) {
        for (const auto& [name, t] : terms) names.push_back(name);
        sums.assign(names.size(), 0.0);
      }
      for (std::size_t i = 0; i < terms.size(); ++i) {
        sums[i] += terms[i].second.item() * static_cast<double>(idx.size());
      }
      seen += idx.size();
    }
    if (metrics) {
      for (std::size_t i = 0; i < names.size(); ++i) {
        metrics->append(epoch, phase, names[i], sums[i] / static_cast<double>(seen));
      }
      metrics->append(epoch, phase, "lr", lr);
    }
  }
  for (Parameter& p : params) p.tensor.clear_grad();
}

std::vector<std::size_t> labels_of(const Dataset& data, std::span<const std::size_t> idx) {
  std::vector<std::size_t> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = data.labels[idx[i]];
  return out;
}

void check_data(const RunConfig& config, const Dataset& data) {
  if (data.size() == 0) throw ContractError("training: empty dataset");
  if (data.classes != config.classes) {
    throw ConfigError("training: dataset has " + std::to_string(data.classes) +
                      " classes but the config says " + std::to_string(config.classes));
  }
  if (data.channels != config.in_channels) {
    throw ConfigError("training: dataset has " + std::to_string(data.channels) +
                      " channels but the config says " + std::to_string(config.in_channels));
  }
}

Tensor rows_from_cache(const std::vector<float>& cache, std::size_t width,
                       std::span<const std::size_t> rows) {
  Storage s(DType::f32, rows.size() * width);
  auto out = s.span<float>();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(cache.data() + rows[i] * width, width, out.data() + i * width);
  }
  return Tensor::from_storage(Shape{rows.size(), width}, std::move(s));
}

BatchFn supervised_batch(const StagedModel& model, const RunConfig& config, const Dataset& data,
                         SupervisedMode mode) {
  return [&model, &config, &data, mode](std::span<const std::size_t> idx) -> Terms {
    const double tau = config.tau_task;
    if (mode == SupervisedMode::baseline) {
      const TapOutput out = forward_taps(model, image_batch(data, idx));
      Tensor ce = cross_entropy(out.class_logits, labels_of(data, idx), tau);
      return {{"loss_total", ce}, {"loss_task", ce}};
    }
    const TransformSet transforms(config.transforms);
    const LabelSpace space(config.classes, config.transforms);
    const ExpandedBatch eb = expand_batch(data, idx, transforms, space);
    const TapOutput out = forward_taps(model, eb.images);
    if (mode == SupervisedMode::rotation_augment) {
      Tensor ce = cross_entropy(out.class_logits, eb.class_labels, tau);
      return {{"loss_total", ce}, {"loss_task", ce}};
    }
    Tensor task = cross_entropy(index_rows(out.class_logits, eb.identity_rows()),
                                labels_of(data, idx), tau);
    const std::vector<Tensor> aux = aux_forward(model, out.taps);
    Tensor sad = ce_sad(aux, eb.joint_labels, tau, model.stage_count());
    return {{"loss_total", add(task, sad)}, {"loss_task", task}, {"loss_ce_sad", sad}};
  };
}

}  // namespace

// ---------------------------------------------------------------------------
// Checkpoints

Checkpoint make_checkpoint(const StagedModel& model, const RunConfig& config,
                           std::uint32_t epoch, const std::string& rng_state) {
  Checkpoint c;
  c.config = config;
  c.epoch = epoch;
  c.rng_state = rng_state;
  c.config_text = to_text(config) + "epoch = " + std::to_string(epoch) + "\n" +
                  "rng_state = " + rng_state + "\n";
  for (const Parameter& p : model.parameters()) {
    c.tensors.push_back(Parameter{p.name, p.tensor.detach()});
  }
  return c;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  io::ByteWriter w;
  w.text(kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.config_text.size()));
  w.text(ckpt.config_text);
  std::vector<const Parameter*> sorted;
  for (const Parameter& p : ckpt.tensors) sorted.push_back(&p);
  std::sort(sorted.begin(), sorted.end(),
            [](const Parameter* a, const Parameter* b) { return a->name < b->name; });
  w.u32(static_cast<std::uint32_t>(sorted.size()));
  for (const Parameter* p : sorted) {
    if (p->name.size() > 0xffff) throw FormatError("checkpoint: parameter name too long");
    w.u16(static_cast<std::uint16_t>(p->name.size()));
    w.text(p->name);
    const Tensor& t = p->tensor;
    w.u8(t.dtype() == DType::f32 ? 0 : 1);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    if (t.dtype() == DType::f32) {
      const auto v = t.data<float>();
      w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(v.data()), v.size() * 4));
    } else {
      const auto v = t.data<double>();
      w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(v.data()), v.size() * 8));
    }
  }
  return std::move(w.buffer());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "checkpoint");
  if (r.text(kMagic.size(), "magic") != kMagic) {
    throw FormatError("checkpoint: bad magic (expected HSKD-CK1) at byte offset 0");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) r.fail("unsupported version " + std::to_string(version));
  const std::uint32_t blob_len = r.u32("config length");
  Checkpoint c;
  c.config_text = r.text(blob_len, "config blob");
  std::set<std::string> allowed = run_config_keys();
  allowed.insert("epoch");
  allowed.insert("rng_state");
  try {
    const KeyValues kv = parse_key_values(c.config_text, allowed);
    c.config = apply_key_values(RunConfig{}, kv);
    c.config.validate();
    if (const auto it = kv.find("epoch"); it != kv.end()) {
      c.epoch = static_cast<std::uint32_t>(std::stoul(it->second));
    }
    if (const auto it = kv.find("rng_state"); it != kv.end()) c.rng_state = it->second;
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: bad config blob: ") + e.what());
  } catch (const std::logic_error& e) {
    throw FormatError(std::string("checkpoint: bad epoch field: ") + e.what());
  }
  const std::uint32_t count = r.u32("tensor count");
  std::string previous;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = r.u16("name length");
    std::string name = r.text(name_len, "name");
    if (i > 0 && !(previous < name)) r.fail("tensor names not strictly sorted at '" + name + "'");
    previous = name;
    const std::uint8_t code = r.u8("dtype");
    if (code > 1) r.fail("unknown dtype code " + std::to_string(code));
    const std::uint8_t rank = r.u8("rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.u32("dims");
    const std::size_t width = code == 0 ? 4 : 8;
    std::size_t n = 1;
    for (std::size_t d : shape) {
      // bounded by the bytes left, so the product cannot overflow
      if (d != 0 && n > r.remaining() / width / d) {
        r.fail("truncated values of tensor '" + name + "'");
      }
      n *= d;
    }
    if (r.remaining() < n * width) {
      r.fail("truncated values of tensor '" + name + "'");
    }
    const auto raw = r.bytes(n * width, "values");
    Tensor t;
    if (code == 0) {
      std::vector<float> v(n);
      std::memcpy(v.data(), raw.data(), raw.size());
      t = Tensor::from_storage(std::move(shape), Storage(std::move(v)));
    } else {
      std::vector<double> v(n);
      std::memcpy(v.data(), raw.data(), raw.size());
      t = Tensor::from_storage(std::move(shape), Storage(std::move(v)));
    }
    c.tensors.push_back(Parameter{std::move(name), std::move(t)});
  }
  if (r.remaining() != 0) r.fail("trailing bytes after last tensor");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(ckpt));
}

void save_checkpoint(const StagedModel& model, const RunConfig& config,
                     const std::filesystem::path& path) {
  save_checkpoint(make_checkpoint(model, config, 0), path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void load_parameters(StagedModel& model, const Checkpoint& ckpt) {
  std::map<std::string, const Parameter*> stored;
  for (const Parameter& p : ckpt.tensors) stored[p.name] = &p;
  std::vector<Parameter> params = model.parameters();
  for (const Parameter& p : params) {
    const auto it = stored.find(p.name);
    if (it == stored.end()) {
      throw FormatError("checkpoint: missing parameter '" + p.name + "'");
    }
    if (it->second->tensor.shape() != p.tensor.shape()) {
      throw FormatError("checkpoint: parameter '" + p.name + "' has shape " +
                        shape_str(it->second->tensor.shape()) + ", model expects " +
                        shape_str(p.tensor.shape()));
    }
  }
  for (const auto& [name, p] : stored) {
    const bool known = std::any_of(params.begin(), params.end(),
                                   [&](const Parameter& q) { return q.name == name; });
    if (!known) throw FormatError("checkpoint: unknown parameter '" + name + "'");
  }
  for (Parameter& p : params) {
    const Storage& src = stored.at(p.name)->tensor.storage();
    p.tensor.mutable_storage() = src.converted(p.tensor.dtype());
  }
}

StagedModel model_from_checkpoint(const Checkpoint& ckpt) {
  const DType dtype = ckpt.tensors.empty() ? DType::f32 : ckpt.tensors.front().tensor.dtype();
  StagedModel model = build_model(ckpt.config.model_spec(), ckpt.config.seed, dtype);
  load_parameters(model, ckpt);
  return model;
}

std::uint64_t checkpoint_hash(const Checkpoint& ckpt) {
  return io::fnv1a(encode_checkpoint(ckpt));
}

std::uint64_t parameters_hash(std::span<const Parameter> params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Parameter& p : params) {
    h = io::fnv1a(std::span(reinterpret_cast<const std::uint8_t*>(p.name.data()), p.name.size()),
                  h);
    dispatch_dtype(p.tensor.dtype(), [&]<typename T>() {
      const auto v = p.tensor.data<T>();
      h = io::fnv1a(
          std::span(reinterpret_cast<const std::uint8_t*>(v.data()), v.size() * sizeof(T)), h);
    });
  }
  return h;
}

// ---------------------------------------------------------------------------
// Metrics

MetricsLog::MetricsLog(std::filesystem::path path) : path_(std::move(path)) {
  if (path_->has_parent_path()) std::filesystem::create_directories(path_->parent_path());
  if (!std::filesystem::exists(*path_)) {
    std::ofstream out(*path_);
    if (!out) throw FormatError("cannot create metrics file '" + path_->string() + "'");
    out << "epoch,phase,metric,value\n";
  }
}

void MetricsLog::append(std::size_t epoch, const std::string& phase, const std::string& metric,
                        double value) {
  rows_.push_back(Row{epoch, phase, metric, value});
  if (path_) {
    std::ofstream out(*path_, std::ios::app);
    out << epoch << ',' << phase << ',' << metric << ',' << format_double(value) << '\n';
  }
}

std::vector<double> MetricsLog::series(const std::string& phase, const std::string& metric) const {
  std::vector<double> out;
  for (const Row& r : rows_) {
    if (r.phase == phase && r.metric == metric) out.push_back(r.value);
  }
  return out;
}

std::string MetricsLog::to_csv() const {
  std::ostringstream os;
  os << "epoch,phase,metric,value\n";
  for (const Row& r : rows_) {
    os << r.epoch << ',' << r.phase << ',' << r.metric << ',' << format_double(r.value) << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Training loops

TrainResult train_supervised(const RunConfig& config, const Dataset& data, SupervisedMode mode,
                             MetricsLog* metrics, const std::string& phase) {
  config.validate();
  check_data(config, data);
  ScopedStrict strict(config.strict);
  StagedModel model = build_model(config.model_spec(), config.seed);
  std::mt19937_64 rng(shuffle_seed(config.seed));
  const std::vector<Parameter> params =
      mode == SupervisedMode::joint ? model.parameters() : model.backbone_parameters();
  run_epochs(config, data.size(), rng, params, metrics, phase,
             supervised_batch(model, config, data, mode));
  Checkpoint ckpt = make_checkpoint(model, config, static_cast<std::uint32_t>(config.epochs),
                                    rng_text(rng));
  return TrainResult{std::move(ckpt), std::move(model)};
}

TrainResult train_teacher(const RunConfig& config, const Dataset& data, MetricsLog* metrics) {
  if (config.teacher_regime == TeacherRegime::joint) {
    return train_supervised(config, data, SupervisedMode::joint, metrics, "teacher");
  }
  config.validate();
  check_data(config, data);
  ScopedStrict strict(config.strict);
  StagedModel model = build_model(config.model_spec(), config.seed);
  std::mt19937_64 rng(shuffle_seed(config.seed));
  run_epochs(config, data.size(), rng, model.backbone_parameters(), metrics, "teacher-backbone",
             supervised_batch(model, config, data, SupervisedMode::baseline));

  const TransformSet transforms(config.transforms);
  const LabelSpace space(config.classes, config.transforms);
  const BatchFn aux_batch = [&](std::span<const std::size_t> idx) -> Terms {
    const ExpandedBatch eb = expand_batch(data, idx, transforms, space);
    TapOutput out;
    {
      NoGradGuard frozen;
      out = forward_taps(model, eb.images);
    }
    const std::vector<Tensor> aux = aux_forward(model, out.taps, /*detach_taps=*/true);
    Tensor sad = ce_sad(aux, eb.joint_labels, config.tau_task, model.stage_count());
    return {{"loss_total", sad}, {"loss_ce_sad", sad}};
  };
  run_epochs(config, data.size(), rng, model.aux_parameters(), metrics, "teacher-aux", aux_batch);
  Checkpoint ckpt = make_checkpoint(model, config, static_cast<std::uint32_t>(config.epochs),
                                    rng_text(rng));
  return TrainResult{std::move(ckpt), std::move(model)};
}

TeacherOutputs teacher_outputs(const StagedModel& teacher, const Dataset& data, bool with_aux,
                               std::size_t batch_size) {
  NoGradGuard guard;
  const ModelSpec& spec = teacher.spec();
  if (data.classes != spec.classes) {
    throw ConfigError("teacher: class count differs from the dataset");
  }
  TeacherOutputs t;
  t.transforms = spec.transforms;
  t.classes = spec.classes;
  t.joint = spec.classes * spec.transforms;
  const std::size_t rows = data.size() * t.transforms;
  t.class_logits.resize(rows * t.classes);
  if (with_aux) t.aux_logits.assign(teacher.stage_count(), std::vector<float>(rows * t.joint));
  const TransformSet transforms(spec.transforms);
  const LabelSpace space(spec.classes, spec.transforms);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const ExpandedBatch eb = expand_batch(data, idx, transforms, space);
    const TapOutput out = forward_taps(teacher, eb.images);
    const auto cl = out.class_logits.data<float>();
    std::copy(cl.begin(), cl.end(), t.class_logits.begin() + start * t.transforms * t.classes);
    if (with_aux) {
      const std::vector<Tensor> aux = aux_forward(teacher, out.taps);
      for (std::size_t l = 0; l < aux.size(); ++l) {
        const auto v = aux[l].data<float>();
        std::copy(v.begin(), v.end(), t.aux_logits[l].begin() + start * t.transforms * t.joint);
      }
    }
  }
  return t;
}

LossBundle student_batch_losses(const StagedModel& student, const TeacherOutputs& teacher,
                                const Dataset& data, std::span<const std::size_t> indices,
                                const LossFlags& flags, const TemperatureConfig& temps) {
  const ModelSpec& spec = student.spec();
  const std::size_t L = student.stage_count();
  if (flags.needs_teacher() && teacher.transforms != spec.transforms) {
    throw ConfigError("student: teacher and student transform counts differ");
  }
  if (flags.kl_q && teacher.aux_logits.size() != L) {
    throw ConfigError("student: teacher has " + std::to_string(teacher.aux_logits.size()) +
                      " auxiliary outputs, student has " + std::to_string(L) + " stages");
  }
  const std::size_t m = flags.needs_rotations() ? spec.transforms : 1;
  const ExpandedBatch eb =
      expand_batch(data, indices, TransformSet(m), LabelSpace(spec.classes, m));
  const TapOutput out = forward_taps(student, eb.images);
  const Tensor normal =
      m > 1 ? index_rows(out.class_logits, eb.identity_rows()) : out.class_logits;
  const std::vector<std::size_t> y = labels_of(data, indices);

  // teacher cache rows: sample s, transform j -> s * teacher.transforms + j
  std::vector<std::size_t> t_all(indices.size() * m);
  std::vector<std::size_t> t_normal(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    t_normal[i] = indices[i] * teacher.transforms;
    for (std::size_t j = 0; j < m; ++j) t_all[i * m + j] = indices[i] * teacher.transforms + j;
  }

  LossParts parts;
  if (flags.task) parts.task = cross_entropy(normal, y, temps.tau_task);
  if (flags.kd) {
    parts.kd = kd_kl_loss(rows_from_cache(teacher.class_logits, teacher.classes, t_normal),
                          normal, temps.tau_mimic);
  }
  if (flags.kl_p) {
    parts.kl_p = loss_kl_p(rows_from_cache(teacher.class_logits, teacher.classes, t_all),
                           out.class_logits, temps.tau_mimic);
  }
  if (flags.needs_aux()) {
    std::vector<Tensor> aux(L);
    for (std::size_t l = 0; l < L; ++l) {
      if (!flags.ce_sad && !flags.kl_q_stage(l)) continue;
      const Tensor feat = run_aux_tail(student, l, out.taps[l]);
      const AuxClassifier& head = student.aux()[l];
      aux[l] = add_bias(matmul(global_avg_pool(feat), head.head.weight.tensor),
                        head.head.bias.tensor);
    }
    if (flags.kl_q) {
      std::vector<Tensor> t_sel;
      std::vector<Tensor> s_sel;
      for (std::size_t l = 0; l < L; ++l) {
        if (!flags.kl_q_stage(l)) continue;
        t_sel.push_back(rows_from_cache(teacher.aux_logits[l], teacher.joint, t_all));
        s_sel.push_back(aux[l]);
      }
      parts.kl_q = loss_kl_q(t_sel, s_sel, temps.tau_mimic);
    }
    if (flags.ce_sad) parts.ce_sad = ce_sad(aux, eb.joint_labels, temps.tau_task, L);
  }
  return compose_student_loss(parts, flags);
}

TrainResult train_student(const RunConfig& config, const Checkpoint& teacher_ckpt,
                          const Dataset& data, MetricsLog* metrics) {
  config.validate();
  check_data(config, data);
  ScopedStrict strict(config.strict);
  const RunConfig& tcfg = teacher_ckpt.config;
  if (tcfg.stages.size() != config.stages.size()) {
    throw ConfigError("student: teacher has " + std::to_string(tcfg.stages.size()) +
                      " stages, student has " + std::to_string(config.stages.size()) +
                      "; one-to-one transfer needs equal stage counts");
  }
  if (tcfg.classes != config.classes || tcfg.transforms != config.transforms ||
      tcfg.in_channels != config.in_channels) {
    throw ConfigError("student: teacher classes/transforms/channels differ from the config");
  }
  StagedModel teacher = model_from_checkpoint(teacher_ckpt);
  teacher.set_trainable(false);
  const LossFlags& flags = config.loss;
  TeacherOutputs cache;
  if (flags.needs_teacher()) cache = teacher_outputs(teacher, data, flags.kl_q);

  StagedModel student = build_model(config.model_spec(), config.seed);
  std::vector<Parameter> params = student.backbone_parameters();
  for (std::size_t l = 0; l < student.stage_count(); ++l) {
    if (flags.ce_sad || (flags.kl_q && flags.kl_q_stage(l))) {
      for (Parameter& p : student.aux_parameters(l)) params.push_back(p);
    }
  }
  const TemperatureConfig temps = config.temperatures();
  std::mt19937_64 rng(shuffle_seed(config.seed));
  const BatchFn batch = [&](std::span<const std::size_t> idx) -> Terms {
    const LossBundle b = student_batch_losses(student, cache, data, idx, flags, temps);
    Terms terms{{"loss_total", b.total}};
    if (b.task.defined()) terms.emplace_back("loss_task", b.task);
    if (b.kl_q.defined()) terms.emplace_back("loss_kl_q", b.kl_q);
    if (b.kl_p.defined()) terms.emplace_back("loss_kl_p", b.kl_p);
    if (b.kd.defined()) terms.emplace_back("loss_kd", b.kd);
    if (b.ce_sad.defined()) terms.emplace_back("loss_ce_sad", b.ce_sad);
    return terms;
  };
  run_epochs(config, data.size(), rng, params, metrics, "student", batch);
  Checkpoint ckpt = make_checkpoint(student, config, static_cast<std::uint32_t>(config.epochs),
                                    rng_text(rng));
  return TrainResult{std::move(ckpt), std::move(student)};
}

}  // namespace hsakd
