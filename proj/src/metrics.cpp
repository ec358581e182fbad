// SPDX-License-Identifier: Apache-2.0

#include "divkd/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>

#include "json.hpp"

namespace divkd {

namespace {

void require_nonempty(const Corpus& corpus) {
  if (corpus.problems.empty()) {
    throw EmptyCorpusError("cannot evaluate an empty corpus");
  }
}

int operator_count(const Equation& eq) {
  int n = 0;
  for (const EqToken& t : eq.tokens) {
    if (t.kind == EqToken::Kind::Op) ++n;
  }
  return n;
}

bool rank1_correct(const BeamResult& beam, const Problem& problem) {
  if (beam.entries.empty()) return false;
  EvalOutcome out = evaluate(beam.entries.front().equation, problem.quantities);
  return out.defect == EvalDefect::None &&
         answers_match(out.value, problem.gold_answer);
}

}  // namespace

BeamProvider model_beam_provider(Model& model, LatentMode mode, uint64_t seed,
                                 int max_len, int samples) {
  if (samples < 1) throw ConfigError("samples must be >= 1");
  if (samples > 1 && mode != LatentMode::PriorSample) {
    throw ConfigError("multiple samples need sampled latent decoding");
  }
  return [&model, mode, seed, max_len, samples](const Problem& problem,
                                                size_t index, int K) {
    if (mode != LatentMode::PriorSample) {
      return model.beam_search(problem, K, max_len, mode, nullptr);
    }
    struct Pooled {
      Equation eq;
      std::string key;
      double score;
    };
    std::vector<Pooled> pool;
    for (int s = 0; s < samples; ++s) {
      Rng rng = Rng::derive(seed, "eval-sample",
                            (static_cast<uint64_t>(index) << 16) |
                                static_cast<uint64_t>(s));
      BeamResult one;
      try {
        one = model.beam_search(problem, K, max_len, mode, &rng);
      } catch (const EmptyBeamError&) {
        continue;
      }
      for (BeamEntry& e : one.entries) {
        std::string key = to_prefix_string(e.equation);
        bool merged = false;
        for (Pooled& p : pool) {
          if (p.key == key) {
            p.score = std::max(p.score, e.log_score);
            merged = true;
            break;
          }
        }
        if (!merged) {
          pool.push_back(Pooled{std::move(e.equation), std::move(key),
                                e.log_score});
        }
      }
    }
    if (pool.empty()) {
      throw EmptyBeamError("no complete equation in any sample for problem " +
                           problem.id);
    }
    std::sort(pool.begin(), pool.end(), [](const Pooled& a, const Pooled& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.key < b.key;
    });
    if (static_cast<int>(pool.size()) > K) pool.resize(static_cast<size_t>(K));
    BeamResult out;
    for (size_t i = 0; i < pool.size(); ++i) {
      out.entries.push_back(BeamEntry{std::move(pool[i].eq), pool[i].score,
                                      static_cast<int>(i) + 1});
    }
    return out;
  };
}

double answer_accuracy(const BeamProvider& beams, const Corpus& corpus, int K,
                       int threads) {
  require_nonempty(corpus);
  std::vector<uint8_t> hit(corpus.problems.size(), 0);
  parallel_for(corpus.problems.size(), threads, [&](size_t i) {
    const Problem& p = corpus.problems[i];
    try {
      hit[i] = rank1_correct(beams(p, i, K), p) ? 1 : 0;
    } catch (const EmptyBeamError&) {
      hit[i] = 0;
    }
  });
  long long n = 0;
  for (uint8_t h : hit) n += h;
  return static_cast<double>(n) / static_cast<double>(corpus.problems.size());
}

double expression_accuracy(const BeamProvider& beams, const Corpus& corpus,
                           int K, int threads) {
  require_nonempty(corpus);
  std::vector<uint8_t> hit(corpus.problems.size(), 0);
  parallel_for(corpus.problems.size(), threads, [&](size_t i) {
    const Problem& p = corpus.problems[i];
    try {
      BeamResult beam = beams(p, i, K);
      hit[i] = !beam.entries.empty() &&
                       to_prefix_string(beam.entries.front().equation) ==
                           to_prefix_string(p.gold_equation)
                   ? 1
                   : 0;
    } catch (const EmptyBeamError&) {
      hit[i] = 0;
    }
  });
  long long n = 0;
  for (uint8_t h : hit) n += h;
  return static_cast<double>(n) / static_cast<double>(corpus.problems.size());
}

DiversityReport diversity_count(const BeamProvider& beams,
                                const Corpus& corpus, int K, int threads) {
  require_nonempty(corpus);
  if (K < 1) throw ConfigError("diversity needs K >= 1");
  DiversityReport report;
  report.per_problem.assign(corpus.problems.size(), 0);
  parallel_for(corpus.problems.size(), threads, [&](size_t i) {
    const Problem& p = corpus.problems[i];
    BeamResult beam;
    try {
      beam = beams(p, i, K);
    } catch (const EmptyBeamError&) {
      return;
    }
    std::set<std::string> distinct;
    for (const BeamEntry& entry : beam.entries) {
      if (entry.rank > K) break;
      if (!validate_prefix(entry.equation.tokens)) continue;
      EvalOutcome out = evaluate(entry.equation, p.quantities);
      if (out.defect != EvalDefect::None ||
          !answers_match(out.value, p.gold_answer)) {
        continue;
      }
      distinct.insert(to_prefix_string(entry.equation));
    }
    report.per_problem[i] = static_cast<int>(distinct.size());
  });

  std::map<int, DiversityBucket> buckets;
  for (size_t i = 0; i < corpus.problems.size(); ++i) {
    int ops = operator_count(corpus.problems[i].gold_equation);
    DiversityBucket& b = buckets[ops];
    b.op_count = ops;
    b.n_problems += 1;
    b.total_distinct_correct += report.per_problem[i];
    report.total_distinct_correct += report.per_problem[i];
  }
  for (auto& [ops, b] : buckets) report.buckets.push_back(b);
  report.mean_per_problem = static_cast<double>(report.total_distinct_correct) /
                            static_cast<double>(corpus.problems.size());
  return report;
}

std::string MetricsReport::to_jsonl() const {
  using nlohmann::json;
  std::string out;
  {
    json j;
    j["beam_k"] = beam_k;
    j["metric"] = "answer_accuracy";
    j["value"] = answer_acc;
    out += j.dump();
    out += '\n';
  }
  {
    json j;
    j["beam_k"] = beam_k;
    j["metric"] = "expression_accuracy";
    j["value"] = expression_acc;
    out += j.dump();
    out += '\n';
  }
  for (const DiversityBucket& b : diversity.buckets) {
    json j;
    j["distinct_correct"] = b.total_distinct_correct;
    j["metric"] = "diversity_bucket";
    j["op_count"] = b.op_count;
    j["problems"] = b.n_problems;
    out += j.dump();
    out += '\n';
  }
  {
    json j;
    j["distinct_correct"] = diversity.total_distinct_correct;
    j["mean_per_problem"] = diversity.mean_per_problem;
    j["metric"] = "diversity_total";
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string MetricsReport::to_table() const {
  char buf[160];
  std::string out;
  std::snprintf(buf, sizeof(buf), "answer accuracy      %.6f\n", answer_acc);
  out += buf;
  std::snprintf(buf, sizeof(buf), "expression accuracy  %.6f\n",
                expression_acc);
  out += buf;
  std::snprintf(buf, sizeof(buf),
                "diversity: distinct correct among top-%d\n", beam_k);
  out += buf;
  for (const DiversityBucket& b : diversity.buckets) {
    std::snprintf(buf, sizeof(buf),
                  "  ops=%-2d  problems=%-6d total=%-8lld mean=%.6f\n",
                  b.op_count, b.n_problems, b.total_distinct_correct,
                  b.n_problems > 0
                      ? static_cast<double>(b.total_distinct_correct) /
                            static_cast<double>(b.n_problems)
                      : 0.0);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "  overall total=%lld mean=%.6f\n",
                diversity.total_distinct_correct, diversity.mean_per_problem);
  out += buf;
  return out;
}

MetricsReport evaluate_model(Model& model, const Corpus& corpus, int K,
                             LatentMode mode, uint64_t seed, int max_len,
                             int threads, int samples) {
  MetricsReport report;
  report.beam_k = K;
  BeamProvider beams = model_beam_provider(model, mode, seed, max_len, samples);
  report.answer_acc = answer_accuracy(beams, corpus, K, threads);
  report.expression_acc = expression_accuracy(beams, corpus, K, threads);
  report.diversity = diversity_count(beams, corpus, K, threads);
  return report;
}

}  // namespace divkd
