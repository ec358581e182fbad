// SPDX-License-Identifier: Apache-2.0

#include "divkd/distill.hpp"

#include <cmath>
#include <ostream>
#include <set>

#include "json.hpp"

#include "divkd/cvae.hpp"

namespace divkd {

double omega_weight(int K, double lambda,
                    const std::vector<int>& correct_ranks) {
  if (K < 1) throw ConfigError("beam width must be >= 1");
  double sum = 0.0;
  for (int rank : correct_ranks) {
    sum += std::pow(lambda, rank);
  }
  return sum / static_cast<double>(K);
}

VerifiedBeam verify_beam(const BeamResult& beam, const Problem& problem,
                         const DistillConfig& cfg) {
  VerifiedBeam out;
  out.beam = beam;
  out.correct.reserve(beam.entries.size());
  out.values.reserve(beam.entries.size());
  std::vector<int> correct_ranks;
  for (const BeamEntry& entry : beam.entries) {
    EvalOutcome outcome = evaluate(entry.equation, problem.quantities);
    bool ok = outcome.defect == EvalDefect::None &&
              answers_match(outcome.value, problem.gold_answer);
    out.values.push_back(outcome);
    out.correct.push_back(ok);
    if (ok) correct_ranks.push_back(entry.rank);
  }
  out.omega = omega_weight(cfg.beam_k, cfg.lambda, correct_ranks);
  return out;
}

void append_hard_labels(const Problem& problem, const VerifiedBeam& verified,
                        HardLabelSet& out) {
  std::set<std::string> seen;
  for (size_t i = 0; i < verified.beam.entries.size(); ++i) {
    if (!verified.correct[i]) continue;
    const Equation& eq = verified.beam.entries[i].equation;
    if (!seen.insert(to_prefix_string(eq)).second) continue;
    out.pairs.push_back(HardLabel{problem.id, eq});
  }
}

Val hard_label_nll(Tape& t, Model& student, const EncoderOutput& enc,
                   const Equation& label, const Matrix& eps) {
  GaussianParams q = posterior(t, student, enc, label);
  LatentSample latent = sample_latent(t, student, q, eps);
  DecodeResult dec = student.decode_teacher_forced(t, enc, label, latent.h_z);
  return dec.nll;
}

Val soft_distill_kl(Tape& t, const std::vector<Val>& student_step_logits,
                    const std::vector<Matrix>& teacher_step_logits, double tau,
                    bool teacher_first) {
  if (student_step_logits.size() != teacher_step_logits.size()) {
    throw ShapeError("soft distillation: student has " +
                     std::to_string(student_step_logits.size()) +
                     " steps, teacher has " +
                     std::to_string(teacher_step_logits.size()));
  }
  if (student_step_logits.empty()) {
    throw ShapeError("soft distillation over an empty trajectory");
  }
  const double inv_tau = 1.0 / tau;

  std::vector<Val> steps;
  steps.reserve(student_step_logits.size());
  for (size_t i = 0; i < student_step_logits.size(); ++i) {
    Val s_lp = t.log_softmax_row(t.scale(student_step_logits[i], inv_tau));

    Matrix t_scaled = teacher_step_logits[i] * inv_tau;
    double mx = t_scaled.maxCoeff();
    double lse = std::log((t_scaled.array() - mx).exp().sum());
    Matrix t_lp = (t_scaled.array() - mx - lse).matrix();

    Val step_kl;
    if (teacher_first) {
      Matrix t_p = t_lp.array().exp().matrix();
      step_kl = t.sum(t.elem_mul(t.input(t_p), t.sub(t.input(t_lp), s_lp)));
    } else {
      step_kl = t.sum(t.elem_mul(t.exp(s_lp), t.sub(s_lp, t.input(t_lp))));
    }
    steps.push_back(step_kl);
  }
  return t.mean(t.concat_cols(steps));
}

Val total_loss(Tape& t, Val cvae_term, std::optional<Val> hard_term,
               std::optional<Val> soft_term, const DistillConfig& cfg) {
  Val out = cvae_term;
  if (hard_term) out = t.add(out, t.scale(*hard_term, cfg.beta));
  if (soft_term) out = t.add(out, t.scale(*soft_term, cfg.gamma));
  return out;
}

void write_beam_dump(std::ostream& out, const Problem& problem,
                     const VerifiedBeam& verified, bool correct_only) {
  using nlohmann::json;
  for (size_t i = 0; i < verified.beam.entries.size(); ++i) {
    if (correct_only && !verified.correct[i]) continue;
    const BeamEntry& entry = verified.beam.entries[i];
    json j;
    j["correct"] = static_cast<bool>(verified.correct[i]);
    j["id"] = problem.id;
    j["log_score"] = entry.log_score;
    j["prefix"] = to_prefix_string(entry.equation);
    j["rank"] = entry.rank;
    if (verified.values[i].defect == EvalDefect::None) {
      j["value"] = verified.values[i].value;
    } else {
      j["value"] = nullptr;
    }
    out << j.dump() << '\n';
  }
}

}  // namespace divkd
