// SPDX-License-Identifier: Apache-2.0
//
// Adaptive distillation from a frozen teacher: answer-verification of beam
// candidates, construction of the distilled hard-label set, the per-rank
// attenuation weight, per-step soft KL against teacher logits, and the
// combined training objective.
#ifndef DIVKD_DISTILL_HPP
#define DIVKD_DISTILL_HPP

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "divkd/autodiff.hpp"
#include "divkd/config.hpp"
#include "divkd/corpus.hpp"
#include "divkd/expr.hpp"
#include "divkd/model.hpp"

namespace divkd {

// A beam with each entry checked against the problem's gold answer by actual
// evaluation, plus the problem's attenuation weight.
struct VerifiedBeam {
  BeamResult beam;
  std::vector<bool> correct;        // parallel to beam.entries
  std::vector<EvalOutcome> values;  // evaluation outcome per entry
  double omega = 0.0;               // (1/K) * sum over correct of lambda^rank
};

// (1/K) * sum over correct 1-based ranks of lambda^rank. Attenuates lower
// ranks; omega in [0, 1] whenever lambda is.
double omega_weight(int K, double lambda, const std::vector<int>& correct_ranks);

// Evaluates every beam entry on the problem's quantities and compares with
// the gold answer; evaluation defects count as incorrect. Never throws.
VerifiedBeam verify_beam(const BeamResult& beam, const Problem& problem,
                         const DistillConfig& cfg);

struct HardLabel {
  std::string problem_id;
  Equation equation;
};

// The distilled corpus: every correct beam equation, deduplicated per
// problem by token sequence (equations equal to the gold are kept too).
struct HardLabelSet {
  std::vector<HardLabel> pairs;
};

// Appends this problem's correct, deduplicated beam equations to `out`.
void append_hard_labels(const Problem& problem, const VerifiedBeam& verified,
                        HardLabelSet& out);

// Teacher-forced NLL of one distilled equation under the student, with the
// latent drawn from the posterior of that equation itself.
Val hard_label_nll(Tape& t, Model& student, const EncoderOutput& enc,
                   const Equation& label, const Matrix& eps);

// Mean over decoding steps of KL between the student's and the (frozen)
// teacher's per-step distributions, both softened by 1/tau. The default
// direction is KL(student || teacher); teacher_first swaps the arguments.
// Caller multiplies by the problem's omega.
Val soft_distill_kl(Tape& t, const std::vector<Val>& student_step_logits,
                    const std::vector<Matrix>& teacher_step_logits, double tau,
                    bool teacher_first);

// cvae_term + beta * hard_term + gamma * soft_term; absent terms contribute
// nothing.
Val total_loss(Tape& t, Val cvae_term, std::optional<Val> hard_term,
               std::optional<Val> soft_term, const DistillConfig& cfg);

// Line-delimited dump of a verified beam: one JSON object per entry with the
// problem id, rank, prefix string, log score, evaluated value (null on a
// defect), and correct flag. With correct_only, incorrect entries are
// skipped — the distilled-label export.
void write_beam_dump(std::ostream& out, const Problem& problem,
                     const VerifiedBeam& verified, bool correct_only = false);

}  // namespace divkd

#endif
