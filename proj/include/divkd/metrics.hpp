// SPDX-License-Identifier: Apache-2.0
//
// Evaluation over a frozen model: answer accuracy (rank-1 value match),
// expression accuracy (rank-1 exact structure match), and beam-diversity
// counts (distinct correct equations among the top K, bucketed by the gold
// equation's operator count). All metrics consume beams through a provider
// seam so tests can substitute hand-wired oracles.
#ifndef DIVKD_METRICS_HPP
#define DIVKD_METRICS_HPP

#include <functional>
#include <string>
#include <vector>

#include "divkd/corpus.hpp"
#include "divkd/model.hpp"

namespace divkd {

// Produces the beam for corpus problem `index`. May throw EmptyBeamError;
// the metrics count that problem as incorrect (or zero-diversity). Must be
// safe to call from several threads at once.
using BeamProvider =
    std::function<BeamResult(const Problem& problem, size_t index, int K)>;

// Beams from a model. For LatentMode::PriorSample the draw for problem i,
// sample s comes from a stream derived from (seed, "eval-sample", i, s), so
// results depend only on (model, corpus, seed) — never on thread schedule.
// With samples > 1 (sampled mode only) the per-sample beams are pooled:
// entries deduplicated by token sequence keeping the best score, re-sorted,
// and cut back to the top K.
BeamProvider model_beam_provider(Model& model, LatentMode mode, uint64_t seed,
                                 int max_len, int samples = 1);

// Fraction of problems whose rank-1 equation evaluates to the gold answer.
// EmptyCorpusError on an empty corpus.
double answer_accuracy(const BeamProvider& beams, const Corpus& corpus, int K,
                       int threads = 1);

// Fraction of problems whose rank-1 equation matches the gold token
// sequence exactly.
double expression_accuracy(const BeamProvider& beams, const Corpus& corpus,
                           int K, int threads = 1);

struct DiversityBucket {
  int op_count = 0;  // operators in the gold equation
  int n_problems = 0;
  long long total_distinct_correct = 0;
};

struct DiversityReport {
  std::vector<DiversityBucket> buckets;  // ascending op_count
  std::vector<int> per_problem;          // distinct correct per problem
  long long total_distinct_correct = 0;
  double mean_per_problem = 0.0;
};

// Distinct correct equations among the top-K beam entries of each problem.
DiversityReport diversity_count(const BeamProvider& beams,
                                const Corpus& corpus, int K, int threads = 1);

struct MetricsReport {
  int beam_k = 0;
  double answer_acc = 0.0;
  double expression_acc = 0.0;
  DiversityReport diversity;

  std::string to_jsonl() const;  // line-delimited records
  std::string to_table() const;  // human-readable summary
};

MetricsReport evaluate_model(Model& model, const Corpus& corpus, int K,
                             LatentMode mode, uint64_t seed, int max_len,
                             int threads = 1, int samples = 1);

}  // namespace divkd

#endif
