// SPDX-License-Identifier: Apache-2.0
#include "hsakd/losses.hpp"

#include <sstream>

#include "hsakd/ops.hpp"

namespace hsakd {
namespace {

void require_tau(std::string_view op, double tau) {
  if (!(tau > 0.0)) throw ContractError(std::string(op) + ": tau must be positive");
}

Tensor tempered_log_softmax(const Tensor& logits, double tau) {
  return log_softmax(tau == 1.0 ? logits : mul_scalar(logits, 1.0 / tau), 1);
}

Tensor sum_terms(const std::vector<Tensor>& terms) {
  Tensor total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return total;
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels, double tau) {
  require_tau("cross_entropy", tau);
  if (logits.rank() != 2) {
    throw DimensionError("cross_entropy: logits must be [B, K], got " +
                         shape_str(logits.shape()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= logits.dim(1)) {
      throw ContractError("cross_entropy: label " + std::to_string(labels[i]) + " at row " +
                          std::to_string(i) + " out of range for " +
                          std::to_string(logits.dim(1)) + " classes");
    }
  }
  return mul_scalar(reduce_mean(gather_rows(tempered_log_softmax(logits, tau), labels)), -1.0);
}

Tensor ce_sad(std::span<const Tensor> aux_logits, std::span<const std::size_t> joint_labels,
              double tau, std::size_t stages) {
  if (aux_logits.size() != stages || stages == 0) {
    throw ContractError("ce_sad: got " + std::to_string(aux_logits.size()) +
                        " auxiliary outputs for " + std::to_string(stages) + " stages");
  }
  std::vector<Tensor> terms;
  for (const Tensor& logits : aux_logits) {
    terms.push_back(cross_entropy(logits, joint_labels, tau));
  }
  return sum_terms(terms);
}

Tensor kd_kl_loss(const Tensor& teacher_logits, const Tensor& student_logits, double tau) {
  require_tau("kd_kl_loss", tau);
  if (teacher_logits.shape() != student_logits.shape() || student_logits.rank() != 2) {
    throw ContractError("kd_kl_loss: teacher " + shape_str(teacher_logits.shape()) +
                        " and student " + shape_str(student_logits.shape()) +
                        " logits must be equal-shaped [B, K]");
  }
  Tensor teacher_lp;
  {
    NoGradGuard guard;
    teacher_lp = tempered_log_softmax(teacher_logits.detach(), tau);
  }
  const Tensor student_lp = tempered_log_softmax(student_logits, tau);
  const double scale = tau * tau / static_cast<double>(student_logits.dim(0));
  return mul_scalar(kl_div(teacher_lp, student_lp), scale);
}

Tensor loss_kl_q(std::span<const Tensor> teacher_aux, std::span<const Tensor> student_aux,
                 double tau, std::span<const bool> stage_mask) {
  if (teacher_aux.size() != student_aux.size() || student_aux.empty()) {
    throw ContractError("loss_kl_q: teacher has " + std::to_string(teacher_aux.size()) +
                        " auxiliary outputs, student has " +
                        std::to_string(student_aux.size()));
  }
  if (!stage_mask.empty() && stage_mask.size() != student_aux.size()) {
    throw ContractError("loss_kl_q: stage mask length does not match stage count");
  }
  std::vector<Tensor> terms;
  for (std::size_t l = 0; l < student_aux.size(); ++l) {
    if (!stage_mask.empty() && !stage_mask[l]) continue;
    terms.push_back(kd_kl_loss(teacher_aux[l], student_aux[l], tau));
  }
  if (terms.empty()) throw ContractError("loss_kl_q: stage mask selects no stage");
  return sum_terms(terms);
}

Tensor loss_kl_p(const Tensor& teacher_logits, const Tensor& student_logits, double tau) {
  return kd_kl_loss(teacher_logits, student_logits, tau);
}

LossFlags hsakd_flags() {
  LossFlags f;
  f.task = true;
  f.kl_q = true;
  f.kl_p = true;
  return f;
}

LossFlags parse_loss_flags(const std::string& text, std::size_t stages) {
  LossFlags f;
  f.task = false;
  std::stringstream ss(text);
  std::string item;
  bool any = false;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    any = true;
    std::string name = item;
    std::string subset;
    if (const auto at = item.find('@'); at != std::string::npos) {
      name = item.substr(0, at);
      subset = item.substr(at + 1);
    }
    if (!subset.empty() && name != "kl_q") {
      throw ConfigError("loss flags: only kl_q accepts a stage subset, got '" + item + "'");
    }
    if (name == "task") {
      f.task = true;
    } else if (name == "kl_q") {
      f.kl_q = true;
      if (!subset.empty()) {
        f.kl_q_stages.assign(stages, false);
        std::stringstream parts(subset);
        std::string idx;
        while (std::getline(parts, idx, '+')) {
          std::size_t l = 0;
          try {
            l = std::stoul(idx);
          } catch (const std::exception&) {
            throw ConfigError("loss flags: bad stage index '" + idx + "'");
          }
          if (l == 0 || l > stages) {
            throw ConfigError("loss flags: stage " + idx + " outside 1.." +
                                std::to_string(stages));
          }
          f.kl_q_stages[l - 1] = true;
        }
      }
    } else if (name == "kl_p") {
      f.kl_p = true;
    } else if (name == "kd") {
      f.kd = true;
    } else if (name == "ce_sad_S" || name == "ce_sad") {
      f.ce_sad = true;
    } else {
      throw ConfigError("loss flags: unknown term '" + name + "'");
    }
  }
  if (!any) throw ConfigError("loss flags: empty flag set");
  return f;
}

std::string format_loss_flags(const LossFlags& flags) {
  std::vector<std::string> names;
  if (flags.task) names.emplace_back("task");
  if (flags.kl_q) {
    std::string n = "kl_q";
    if (!flags.kl_q_stages.empty()) {
      n += '@';
      bool first = true;
      for (std::size_t l = 0; l < flags.kl_q_stages.size(); ++l) {
        if (!flags.kl_q_stages[l]) continue;
        if (!first) n += '+';
        n += std::to_string(l + 1);
        first = false;
      }
    }
    names.push_back(n);
  }
  if (flags.kl_p) names.emplace_back("kl_p");
  if (flags.kd) names.emplace_back("kd");
  if (flags.ce_sad) names.emplace_back("ce_sad_S");
  std::string out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i) out += ',';
    out += names[i];
  }
  return out;
}

double loss_value(const Tensor& term) { return term.defined() ? term.item() : 0.0; }

LossBundle compose_student_loss(const LossParts& parts, const LossFlags& flags) {
  LossBundle bundle;
  std::vector<Tensor> terms;
  auto take = [&](bool enabled, const std::optional<Tensor>& part, Tensor& slot,
                  const char* name) {
    if (!enabled) return;
    if (!part || !part->defined()) {
      throw ContractError(std::string("compose_student_loss: flag '") + name +
                          "' enabled without its loss term");
    }
    slot = *part;
    terms.push_back(*part);
  };
  take(flags.task, parts.task, bundle.task, "task");
  take(flags.kl_q, parts.kl_q, bundle.kl_q, "kl_q");
  take(flags.kl_p, parts.kl_p, bundle.kl_p, "kl_p");
  take(flags.kd, parts.kd, bundle.kd, "kd");
  take(flags.ce_sad, parts.ce_sad, bundle.ce_sad, "ce_sad_S");
  if (terms.empty()) throw ContractError("compose_student_loss: no loss term enabled");
  bundle.total = sum_terms(terms);
  return bundle;
}

}  // namespace hsakd
