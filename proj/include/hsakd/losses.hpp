// SPDX-License-Identifier: Apache-2.0
//
// Distillation and supervision losses over logits. Every loss is a batch
// mean; expanded batches hold all M transforms of each sample, so the
// per-transform average is the mean over B*M rows. Teacher logits never
// receive gradients.
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hsakd/tensor.hpp"

namespace hsakd {

struct TemperatureConfig {
  double tau_task = 1.0;
  double tau_mimic = 3.0;
};

/// mean_b -log softmax(logits_b / tau)[labels_b].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels, double tau);

/// Sum over the L auxiliary heads of the joint-label cross-entropy.
Tensor ce_sad(std::span<const Tensor> aux_logits, std::span<const std::size_t> joint_labels,
              double tau, std::size_t stages);

/// mean_b tau^2 * KL(softmax(t_b / tau) || softmax(s_b / tau)).
Tensor kd_kl_loss(const Tensor& teacher_logits, const Tensor& student_logits, double tau);

/// One-to-one sum over stages of kd_kl_loss on the joint logits. `stage_mask`,
/// when non-empty, selects which stages contribute.
Tensor loss_kl_q(std::span<const Tensor> teacher_aux, std::span<const Tensor> student_aux,
                 double tau, std::span<const bool> stage_mask = {});

/// kd_kl_loss on final-layer class logits over the whole expanded batch.
Tensor loss_kl_p(const Tensor& teacher_logits, const Tensor& student_logits, double tau);

/// Which student loss terms are active, plus an optional stage subset for
/// the hierarchical mimicry term.
struct LossFlags {
  bool task = true;
  bool kl_q = false;
  bool kl_p = false;
  bool kd = false;
  bool ce_sad = false;
  std::vector<bool> kl_q_stages;  // empty = every stage

  bool needs_aux() const { return kl_q || ce_sad; }
  bool needs_rotations() const { return kl_q || kl_p || ce_sad; }
  bool needs_teacher() const { return kl_q || kl_p || kd; }
  bool any_mimicry() const { return needs_teacher(); }
  bool kl_q_stage(std::size_t l) const {
    return kl_q_stages.empty() || (l < kl_q_stages.size() && kl_q_stages[l]);
  }

  bool operator==(const LossFlags&) const = default;
};

/// The canonical student objective: task + kl_q + kl_p.
LossFlags hsakd_flags();

/// Parses "task,kl_q,kl_p". A stage subset is written kl_q@2+3 (1-based).
LossFlags parse_loss_flags(const std::string& text, std::size_t stages);
std::string format_loss_flags(const LossFlags& flags);

struct LossParts {
  std::optional<Tensor> task;
  std::optional<Tensor> kl_q;
  std::optional<Tensor> kl_p;
  std::optional<Tensor> kd;
  std::optional<Tensor> ce_sad;
};

struct LossBundle {
  Tensor task;
  Tensor ce_sad;
  Tensor kl_q;
  Tensor kl_p;
  Tensor kd;
  Tensor total;
};

/// Value of a possibly-absent loss term (0 when undefined).
double loss_value(const Tensor& term);

/// Unit-weighted sum of the enabled terms.
LossBundle compose_student_loss(const LossParts& parts, const LossFlags& flags);

}  // namespace hsakd
