// SPDX-License-Identifier: Apache-2.0
//
// Training orchestration: teacher pre-training (plain teacher-forced NLL)
// and student training under the combined objective (variational loss +
// adaptive hard/soft distillation from per-epoch, answer-verified teacher
// beams). Adam with a halving learning-rate schedule, global-norm gradient
// clipping, per-epoch dev evaluation, best/last checkpoints, and exact
// resume from an interrupted run.
#ifndef DIVKD_TRAIN_HPP
#define DIVKD_TRAIN_HPP

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "divkd/config.hpp"
#include "divkd/corpus.hpp"
#include "divkd/model.hpp"

namespace divkd {

inline constexpr double kGradClipNorm = 5.0;

struct EpochRecord {
  int epoch = 0;  // 0-based
  double loss_total = 0.0;
  double loss_cvae = 0.0;  // reconstruction (+ weighted KL) term
  double loss_hard = 0.0;  // mean distilled-label NLL (unweighted)
  double loss_soft = 0.0;  // mean omega-weighted soft KL (unweighted)
  double omega_mean = 0.0;
  long long dkd_size = 0;  // distilled pairs collected this epoch
  double dev_answer_acc = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

// Append-only, one record per completed epoch, stored as JSON lines.
struct RunLog {
  std::vector<EpochRecord> records;

  void save(const std::string& path) const;
  static RunLog load(const std::string& path);
  static void append_line(const std::string& path, const EpochRecord& rec);
  static std::string to_json_line(const EpochRecord& rec);
  static EpochRecord from_json_line(const std::string& line);
};

struct TrainOptions {
  // When set, the run directory receives last.{ckpt,json}, best.{ckpt,json},
  // runlog.jsonl and config.txt; an existing compatible runlog resumes the
  // run at the next epoch.
  std::optional<std::string> out_dir;
  int threads = 0;  // <= 0 picks the hardware concurrency
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  Model model;  // parameters of the best-dev epoch
  RunLog log;
  int best_epoch = -1;
  double best_dev_acc = 0.0;
};

// Trains the base model (no latent pathway) by teacher-forced NLL.
// DivergenceError if the loss goes non-finite.
TrainResult pretrain_teacher(const Corpus& train, const Corpus& dev,
                             const TrainConfig& cfg,
                             const TrainOptions& opts = {});

// Trains the student against a frozen teacher: per batch, teacher beams are
// verified against gold answers, correct equations become extra hard labels
// (weight beta), and per-step soft KL against the teacher is weighted by
// gamma times the problem's omega. The teacher is never modified.
TrainResult train_student(const Corpus& train, const Corpus& dev,
                          Model& teacher, const TrainConfig& cfg,
                          const TrainOptions& opts = {});

}  // namespace divkd

#endif
