// SPDX-License-Identifier: Apache-2.0
//
// Network bodies shared by teacher and student: token embeddings, BiGRU
// encoder, goal-driven tree decoder with additive attention, and beam search
// over prefix token sequences. Training passes run on a Tape; inference
// (beam search, evaluation decoding) runs on plain matrices for speed, and a
// consistency test pins the two paths to each other.
#ifndef DIVKD_MODEL_HPP
#define DIVKD_MODEL_HPP

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "divkd/autodiff.hpp"
#include "divkd/config.hpp"
#include "divkd/corpus.hpp"
#include "divkd/expr.hpp"

namespace divkd {

struct ModelConfig {
  int hidden_dim = 64;
  int embed_dim = 32;
  int latent_dim = 32;
  int max_slots = 1;     // capacity of the shared slot-embedding table
  bool use_cvae = false;
  std::vector<OpCode> ops = {OpCode::Add, OpCode::Sub, OpCode::Mul,
                             OpCode::Div, OpCode::Pow};
  std::vector<std::string> vocab_tokens;                  // id order
  std::vector<std::pair<std::string, double>> constants;  // sorted by name

  static ModelConfig from_corpus(const Corpus& corpus, const TrainConfig& cfg,
                                 bool use_cvae);
};

// Per-problem output vocabulary: operators, then constants, then the
// quantity slots this problem actually has (copy-style addressing).
class OutputVocab {
 public:
  OutputVocab(std::vector<OpCode> ops,
              std::vector<std::pair<std::string, double>> constants,
              int n_quantities);

  int size() const { return n_ops() + n_constants() + n_quantities_; }
  int n_ops() const { return static_cast<int>(ops_.size()); }
  int n_constants() const { return static_cast<int>(constants_.size()); }
  int n_quantities() const { return n_quantities_; }

  bool is_op(int index) const { return index >= 0 && index < n_ops(); }
  EqToken token_at(int index) const;       // VocabError if out of range
  int index_of(const EqToken& t) const;    // -1 if not representable
  // VocabError naming the offending token if any index is missing.
  std::vector<int> indices_of(const Equation& eq) const;

 private:
  std::vector<OpCode> ops_;
  std::vector<std::pair<std::string, double>> constants_;
  int n_quantities_;
};

// Tape-resident encoder products, plus the per-problem precomputations the
// decoder reuses every step (attention keys, candidate representations).
struct EncoderOutput {
  Val states;     // n x 2d, per-token bidirectional states
  Val root;       // 1 x 2d, pooled problem vector
  Val attn_keys;  // n x d, states * Wh + b, computed once
  Val cand_repr;  // V x e, output-candidate representations
  Val cand_repr_t;
  int n = 0;
  std::vector<int> slot_positions;  // token position of each quantity slot
  OutputVocab out_vocab;
};

struct DecodeResult {
  Val nll;                       // 1x1, sum of per-step negative log-probs
  std::vector<Val> step_logits;  // 1xV per target token
  std::vector<int> target_indices;
};

struct BeamEntry {
  Equation equation;
  double log_score = 0.0;
  int rank = 0;  // 1-based
};

struct BeamResult {
  std::vector<BeamEntry> entries;  // descending log_score, ranks 1..m
};

enum class LatentMode {
  None,        // base architecture (teacher)
  PriorMean,   // z = prior mean; deterministic evaluation
  PriorSample  // z drawn from the prior; diversity evaluation
};

// One GRU direction over n precomputed input-gate rows (n x 3d); returns the
// per-step hidden states (1 x d each) in scan order. Shared by the encoder
// and the recognition network.
std::vector<Val> gru_scan(Tape& t, Val gates_x, Val U, int n, int d);

class Model {
 public:
  Model(ModelConfig cfg, uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const Vocab& vocab() const { return vocab_; }
  bool has_cvae() const { return cfg_.use_cvae; }

  OutputVocab output_vocab(const Problem& problem) const;

  // --- differentiable paths -------------------------------------------------
  EncoderOutput encode(Tape& tape, const Problem& problem);
  // Goal-stack prefix decoding forced onto `target`; latent_hz (1 x 2d), when
  // present, is added to the root goal.
  DecodeResult decode_teacher_forced(Tape& tape, const EncoderOutput& enc,
                                     const Equation& target,
                                     std::optional<Val> latent_hz);

  // --- inference paths ------------------------------------------------------
  // Raw-sum log-probability beam search; ties broken by token id, then by
  // parent hypothesis. Throws EmptyBeamError if nothing completes within
  // max_len. The rng is consulted only for LatentMode::PriorSample.
  BeamResult beam_search(const Problem& problem, int K, int max_len,
                         LatentMode mode = LatentMode::None,
                         Rng* rng = nullptr);
  // Per-step logits along a forced trajectory (inference twin of
  // decode_teacher_forced).
  std::vector<Matrix> forced_logits(const Problem& problem,
                                    const Equation& target,
                                    LatentMode mode = LatentMode::None,
                                    Rng* rng = nullptr);
  // Sum of per-step log-softmax probabilities of `target`.
  double sequence_log_prob(const Problem& problem, const Equation& target,
                           LatentMode mode = LatentMode::None,
                           Rng* rng = nullptr);

  // --- persistence ----------------------------------------------------------
  // Writes <basename>.ckpt (parameters + optimizer state) and
  // <basename>.json (architecture, vocab, constants).
  void save(const std::string& basename) const;
  static Model load(const std::string& basename);

 private:
  struct EvalEncoding;  // matrix-level encoder products
  EvalEncoding eval_encode(const Problem& problem, LatentMode mode, Rng* rng);
  std::pair<Matrix, Matrix> eval_step(const EvalEncoding& enc,
                                      const Matrix& goal) const;  // logits, ctx
  std::pair<Matrix, Matrix> eval_decompose(const EvalEncoding& enc,
                                           const Matrix& goal,
                                           const Matrix& ctx,
                                           int token_index) const;

  ModelConfig cfg_;
  Vocab vocab_;
  ParamStore store_;
};

}  // namespace divkd

#endif
