// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: distillation and training hyperparameters, the flat
// key=value file format, and the canonical serialization that seeds config
// hashes and run-directory echoes.
#ifndef DIVKD_CONFIG_HPP
#define DIVKD_CONFIG_HPP

#include <cstdint>
#include <map>
#include <string>

#include "divkd/common.hpp"

namespace divkd {

struct DistillConfig {
  int beam_k = 5;         // beam width K
  double lambda = 0.8;    // rank attenuation factor, in (0, 1]
  double beta = 0.3;      // hard-label loss weight
  double gamma = 0.1;     // soft-label loss weight
  double tau = 1.0;       // softening temperature
  bool cache_beams = false;  // freeze teacher beams after the first epoch
  // Per-step KL order: false = student||teacher (as the objective is
  // defined), true = the conventional teacher||student direction.
  bool soft_kl_teacher_first = false;

  void validate() const;  // ConfigError on violation
};

struct TrainConfig {
  int epochs = 40;
  int batch_size = 30;
  double lr = 1e-3;
  int lr_halving_period = 20;  // epochs between halvings
  int hidden_dim = 64;
  int embed_dim = 32;
  int latent_dim = 32;
  uint64_t seed = 1;
  int kl_anneal_epochs = 10;  // linear 0 -> 1 ramp of the KL weight
  int max_decode_len = 15;
  bool use_cvae = true;  // student latent pathway; false reduces the student
                         // to the base architecture exactly
  DistillConfig distill;

  void validate() const;

  // Canonical "key=value\n" lines, sorted by key; parse round-trips it.
  std::string to_string() const;
  // 16-hex-digit digest of the canonical form.
  std::string config_hash() const;

  // ConfigError on unknown keys or unparseable values.
  void set_key(const std::string& key, const std::string& value);
  void apply(const std::map<std::string, std::string>& overrides);

  // Learning rate at a 0-based epoch under the halving schedule.
  double lr_at_epoch(int epoch) const;
  // KL annealing weight at a 0-based epoch.
  double kl_weight_at_epoch(int epoch) const;
};

// Flat key=value file; '#' starts a comment, blank lines ignored.
std::map<std::string, std::string> read_config_file(const std::string& path);
TrainConfig load_train_config(const std::string& path);

}  // namespace divkd

#endif
