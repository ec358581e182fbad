// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance gate. Each numbered check prints exactly one
// PASS/FAIL line on stdout; the process exits non-zero if any fails.
// Every expected value is produced by an oracle implemented here,
// independently of the library code under test: recursive expression
// evaluation, central finite differences, closed-form and Monte-Carlo KL,
// exhaustive sequence enumeration, and byte-level file comparison.

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "divkd/config.hpp"
#include "divkd/corpus.hpp"
#include "divkd/cvae.hpp"
#include "divkd/distill.hpp"
#include "divkd/expr.hpp"
#include "divkd/metrics.hpp"
#include "divkd/model.hpp"
#include "divkd/train.hpp"

using namespace divkd;

namespace {

struct CheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void expect(bool ok, const std::string& what) {
  if (!ok) throw CheckFailure(what);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

struct TempTree {
  std::filesystem::path path;
  explicit TempTree(const std::string& label) {
    path = std::filesystem::temp_directory_path() /
           ("divkd-accept-" + label + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempTree() { std::filesystem::remove_all(path); }
  std::string sub(const std::string& name) const {
    return (path / name).string();
  }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  expect(in.good(), "cannot read " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// A problem whose text is its slots plus filler words.
Problem slot_problem(const std::string& id, std::vector<double> quantities) {
  Problem p;
  p.id = id;
  p.tokens.push_back("the");
  for (size_t i = 0; i < quantities.size(); ++i) {
    p.tokens.push_back("N" + std::to_string(i));
    p.tokens.push_back("and");
  }
  p.quantities = std::move(quantities);
  if (p.quantities.size() >= 2) {
    p.gold_equation = parse_prefix_string("+ N0 N1");
    p.gold_answer = p.quantities[0] + p.quantities[1];
  } else {
    p.gold_equation = parse_prefix_string("N0");
    p.gold_answer = p.quantities[0];
  }
  return p;
}

Corpus corpus_of(std::vector<Problem> problems) {
  Corpus c;
  for (Problem& p : problems) {
    for (const std::string& tok : p.tokens) c.vocab.add(tok);
    c.problems.push_back(std::move(p));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Independent expression evaluator (recursive descent over prefix tokens).
// ---------------------------------------------------------------------------

std::optional<double> oracle_eval_at(const std::vector<EqToken>& tokens,
                                     size_t& pos,
                                     const std::vector<double>& quantities) {
  if (pos >= tokens.size()) return std::nullopt;
  const EqToken& t = tokens[pos++];
  switch (t.kind) {
    case EqToken::Kind::Quantity: {
      if (t.quantity < 0 ||
          t.quantity >= static_cast<int>(quantities.size())) {
        return std::nullopt;
      }
      return quantities[static_cast<size_t>(t.quantity)];
    }
    case EqToken::Kind::Constant:
      return t.value;
    case EqToken::Kind::Op: {
      std::optional<double> a = oracle_eval_at(tokens, pos, quantities);
      if (!a) return std::nullopt;
      std::optional<double> b = oracle_eval_at(tokens, pos, quantities);
      if (!b) return std::nullopt;
      double r = 0.0;
      switch (t.op) {
        case OpCode::Add: r = *a + *b; break;
        case OpCode::Sub: r = *a - *b; break;
        case OpCode::Mul: r = *a * *b; break;
        case OpCode::Div:
          if (std::fabs(*b) <= 1e-12) return std::nullopt;
          r = *a / *b;
          break;
        case OpCode::Pow: r = std::pow(*a, *b); break;
      }
      if (!std::isfinite(r)) return std::nullopt;
      return r;
    }
  }
  return std::nullopt;
}

std::optional<double> oracle_eval(const Equation& eq,
                                  const std::vector<double>& quantities) {
  size_t pos = 0;
  std::optional<double> v = oracle_eval_at(eq.tokens, pos, quantities);
  if (!v || pos != eq.tokens.size()) return std::nullopt;
  return v;
}

bool oracle_answers_match(double a, double b) {
  return std::fabs(a - b) <=
         1e-4 * std::max({1.0, std::fabs(a), std::fabs(b)});
}

// ---------------------------------------------------------------------------
// 1. Backpropagated gradients match central finite differences on the full
//    composite training objective.
// ---------------------------------------------------------------------------

void check_gradients(std::string& detail) {
  auto t0 = std::chrono::steady_clock::now();
  int coords_checked = 0;
  double worst = 0.0;

  for (int trial = 0; trial < 20; ++trial) {
    uint64_t seed = 1000 + static_cast<uint64_t>(trial);
    Corpus c = generate_toy_corpus(6, seed);
    TrainConfig cfg;
    cfg.hidden_dim = 6;
    cfg.embed_dim = 5;
    cfg.latent_dim = 4;
    Model student(ModelConfig::from_corpus(c, cfg, true), seed);
    Model teacher(ModelConfig::from_corpus(c, cfg, false), seed + 77);
    const Problem& p = c.problems[static_cast<size_t>(trial) %
                                  c.problems.size()];

    Rng er = Rng::derive(seed, "accept-grad-eps");
    Matrix eps1(1, cfg.latent_dim), eps2(1, cfg.latent_dim);
    for (int j = 0; j < cfg.latent_dim; ++j) eps1(0, j) = er.normal();
    for (int j = 0; j < cfg.latent_dim; ++j) eps2(0, j) = er.normal();

    Equation second_label = parse_prefix_string("+ N0 N0");
    std::vector<Matrix> teacher_logits =
        teacher.forced_logits(p, p.gold_equation, LatentMode::None);

    DistillConfig dc;
    dc.beta = 0.3;
    dc.gamma = 0.1;
    dc.tau = 1.5;
    dc.soft_kl_teacher_first = (trial % 2 == 1);

    auto run = [&](bool with_grad) -> double {
      Tape t;
      EncoderOutput enc = student.encode(t, p);
      CvaeLossParts parts =
          cvae_loss(t, student, enc, p.gold_equation, 0.7, eps1);
      Val hard_a = hard_label_nll(t, student, enc, p.gold_equation, eps2);
      Val hard_b = hard_label_nll(t, student, enc, second_label, eps1);
      Val hard = t.scale(t.add(hard_a, hard_b), 0.5);
      Val soft = t.scale(soft_distill_kl(t, parts.decode.step_logits,
                                         teacher_logits, dc.tau,
                                         dc.soft_kl_teacher_first),
                         0.6);  // stands in for the omega weighting
      Val total = total_loss(t, parts.total, hard, soft, dc);
      double v = t.value(total)(0, 0);
      if (with_grad) t.backward(total);
      return v;
    };

    student.params().zero_grads();
    run(true);
    std::map<std::string, Matrix> analytic;
    for (Parameter* pr : student.params().all()) analytic[pr->name] = pr->grad;

    Rng coords = Rng::derive(seed, "accept-grad-coords");
    for (Parameter* pr : student.params().all()) {
      int n = static_cast<int>(pr->value.size());
      int picks = std::min(3, n);
      for (int k = 0; k < picks; ++k) {
        int idx = static_cast<int>(coords.next_below(
            static_cast<uint64_t>(n)));
        double* x = pr->value.data() + idx;
        double saved = *x;
        double h = 1e-5 * std::max(1.0, std::fabs(saved));
        *x = saved + h;
        double up = run(false);
        *x = saved - h;
        double down = run(false);
        *x = saved;
        double fd = (up - down) / (2.0 * h);
        double an = analytic[pr->name].data()[idx];
        double rel = std::fabs(an - fd) /
                     std::max({1.0, std::fabs(an), std::fabs(fd)});
        worst = std::max(worst, rel);
        expect(rel <= 1e-4,
               fmt("gradient mismatch at %s[%d]: analytic %.10g vs fd %.10g "
                   "(rel %.3g)",
                   pr->name.c_str(), idx, an, fd, rel));
        ++coords_checked;
      }
    }
  }

  double wall = seconds_since(t0);
  expect(wall < 60.0, fmt("gradient check took %.1fs (budget 60s)", wall));
  detail = fmt("%d coordinates, worst rel err %.2e, %.1fs", coords_checked,
               worst, wall);
}

// ---------------------------------------------------------------------------
// 2. The latent KL term matches the diagonal-Gaussian closed form and a
//    Monte-Carlo estimate.
// ---------------------------------------------------------------------------

double lib_kl(const Matrix& mu_q, const Matrix& lv_q, const Matrix& mu_p,
              const Matrix& lv_p) {
  Tape t;
  GaussianParams q{t.input(mu_q), t.input(lv_q)};
  GaussianParams p{t.input(mu_p), t.input(lv_p)};
  return t.value(kl_divergence(t, q, p))(0, 0);
}

double closed_kl(const Matrix& mu_q, const Matrix& lv_q, const Matrix& mu_p,
                 const Matrix& lv_p) {
  double s = 0.0;
  for (int j = 0; j < mu_q.cols(); ++j) {
    double vq = std::exp(lv_q(0, j));
    double vp = std::exp(lv_p(0, j));
    double dm = mu_q(0, j) - mu_p(0, j);
    s += 0.5 * (lv_p(0, j) - lv_q(0, j)) + (vq + dm * dm) / (2.0 * vp) - 0.5;
  }
  return s;
}

void check_gaussian_kl(std::string& detail) {
  auto t0 = std::chrono::steady_clock::now();

  {  // identical distributions
    Rng r = Rng::derive(21, "accept-kl-ident");
    Matrix mu(1, 8), lv(1, 8);
    for (int j = 0; j < 8; ++j) mu(0, j) = r.uniform(-2, 2);
    for (int j = 0; j < 8; ++j) lv(0, j) = r.uniform(-1, 1);
    double v = lib_kl(mu, lv, mu, lv);
    expect(std::fabs(v) <= 1e-9,
           fmt("KL of identical Gaussians is %.3g, expected 0", v));
  }

  {  // a unit mean shift contributes exactly one half per dimension
    Matrix z1 = Matrix::Zero(1, 1), o1 = Matrix::Ones(1, 1);
    double v = lib_kl(z1, z1, o1, z1);
    expect(std::fabs(v - 0.5) <= 1e-12,
           fmt("KL(N(0,1)||N(1,1)) is %.12g, expected 0.5", v));
    Matrix z8 = Matrix::Zero(1, 8), o8 = Matrix::Ones(1, 8);
    double v8 = lib_kl(z8, z8, o8, z8);
    expect(std::fabs(v8 - 4.0) <= 1e-12,
           fmt("8-dim unit-shift KL is %.12g, expected 4", v8));
  }

  double worst_rel = 0.0;
  for (int pair = 0; pair < 10; ++pair) {
    Matrix mu_q(1, 8), lv_q(1, 8), mu_p(1, 8), lv_p(1, 8);
    double cf = 0.0;
    // deterministic redraws keep the KL large enough that a 1% band is
    // meaningful against Monte-Carlo noise at 100k samples
    for (uint64_t attempt = 0;; ++attempt) {
      Rng r = Rng::derive(3000 + static_cast<uint64_t>(pair),
                          "accept-kl-pair", attempt);
      for (int j = 0; j < 8; ++j) {
        mu_q(0, j) = r.uniform(-1.5, 1.5);
        lv_q(0, j) = r.uniform(-1.0, 1.0);
        mu_p(0, j) = r.uniform(-1.5, 1.5);
        lv_p(0, j) = r.uniform(-1.0, 1.0);
      }
      cf = closed_kl(mu_q, lv_q, mu_p, lv_p);
      if (cf >= 4.0) break;
    }
    double lib = lib_kl(mu_q, lv_q, mu_p, lv_p);
    expect(std::fabs(lib - cf) <= 1e-9 * std::max(1.0, cf),
           fmt("library KL %.12g vs closed form %.12g", lib, cf));

    Rng mc = Rng::derive(4000 + static_cast<uint64_t>(pair), "accept-kl-mc");
    const int n_samples = 100000;
    double acc = 0.0;
    for (int s = 0; s < n_samples; ++s) {
      double term = 0.0;
      for (int j = 0; j < 8; ++j) {
        double z = mu_q(0, j) + std::exp(0.5 * lv_q(0, j)) * mc.normal();
        double dq = z - mu_q(0, j), dp = z - mu_p(0, j);
        double lq = -0.5 * (lv_q(0, j) + dq * dq * std::exp(-lv_q(0, j)));
        double lp = -0.5 * (lv_p(0, j) + dp * dp * std::exp(-lv_p(0, j)));
        term += lq - lp;
      }
      acc += term;
    }
    double estimate = acc / n_samples;
    double rel = std::fabs(estimate - lib) / lib;
    worst_rel = std::max(worst_rel, rel);
    expect(rel <= 0.01,
           fmt("Monte-Carlo KL %.6g vs library %.6g (rel %.3g)", estimate,
               lib, rel));
  }

  double wall = seconds_since(t0);
  expect(wall < 60.0, fmt("KL check took %.1fs (budget 60s)", wall));
  detail = fmt("10 pairs, worst MC deviation %.2f%%, %.1fs", 100 * worst_rel,
               wall);
}

// ---------------------------------------------------------------------------
// 3. The rank-attenuated correctness weight: fixed table plus monotonicity
//    under flips and promotions.
// ---------------------------------------------------------------------------

double oracle_omega(int K, double lambda, const std::vector<int>& ranks) {
  double s = 0.0;
  for (int r : ranks) s += std::pow(lambda, r);
  return s / K;
}

void check_omega(std::string& detail) {
  struct Case {
    int K;
    double lambda;
    std::vector<int> ranks;
  };
  const std::vector<Case> table = {
      {5, 0.8, {}},              // nothing correct -> 0
      {1, 1.0, {1}},             // single correct at full weight -> 1
      {5, 1.0, {1, 2, 3, 4, 5}}, // everything correct, no attenuation -> 1
      {5, 0.8, {1}},
      {5, 0.8, {5}},
      {5, 0.8, {1, 2}},
      {5, 0.8, {1, 2, 3, 4, 5}},
      {5, 0.5, {1, 3}},
      {3, 0.9, {2, 3}},
      {4, 0.25, {1, 4}},
      {8, 0.65, {2, 5, 7}},
      {2, 0.8, {1, 2}},
  };
  for (const Case& c : table) {
    double got = omega_weight(c.K, c.lambda, c.ranks);
    double want = oracle_omega(c.K, c.lambda, c.ranks);
    expect(std::fabs(got - want) <= 1e-12,
           fmt("omega(K=%d, lambda=%g) = %.12g, expected %.12g", c.K,
               c.lambda, got, want));
    expect(got >= 0.0 && got <= 1.0, "omega out of [0, 1]");
  }
  expect(omega_weight(5, 0.8, {}) == 0.0, "empty correct set must weigh 0");
  expect(omega_weight(1, 1.0, {1}) == 1.0, "perfect single beam must weigh 1");

  Rng r = Rng::derive(606, "accept-omega");
  int flips = 0, promotions = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    int K = 1 + static_cast<int>(r.next_below(8));
    bool promote_trial = (trial % 2 == 1);
    double lambda = promote_trial ? r.uniform(0.05, 0.95)  // strict under <1
                                  : r.uniform(0.05, 1.0);
    std::vector<bool> correct(static_cast<size_t>(K));
    for (int i = 0; i < K; ++i) correct[static_cast<size_t>(i)] =
        r.next_below(2) == 0;

    auto ranks_of = [&](const std::vector<bool>& mask) {
      std::vector<int> ranks;
      for (int i = 0; i < K; ++i) {
        if (mask[static_cast<size_t>(i)]) ranks.push_back(i + 1);
      }
      return ranks;
    };

    if (!promote_trial) {
      std::vector<int> wrong;
      for (int i = 0; i < K; ++i) {
        if (!correct[static_cast<size_t>(i)]) wrong.push_back(i);
      }
      if (wrong.empty()) continue;
      int flip = wrong[r.next_below(wrong.size())];
      double before = omega_weight(K, lambda, ranks_of(correct));
      correct[static_cast<size_t>(flip)] = true;
      double after = omega_weight(K, lambda, ranks_of(correct));
      expect(after > before,
             fmt("flipping rank %d to correct did not raise omega "
                 "(%.12g -> %.12g)",
                 flip + 1, before, after));
      ++flips;
    } else {
      std::vector<int> moves;  // correct index with a wrong slot above it
      for (int i = 0; i < K; ++i) {
        if (!correct[static_cast<size_t>(i)]) continue;
        for (int j = 0; j < i; ++j) {
          if (!correct[static_cast<size_t>(j)]) moves.push_back(i * K + j);
        }
      }
      if (moves.empty()) continue;
      int mv = moves[r.next_below(moves.size())];
      int from = mv / K, to = mv % K;
      double before = omega_weight(K, lambda, ranks_of(correct));
      correct[static_cast<size_t>(from)] = false;
      correct[static_cast<size_t>(to)] = true;
      double after = omega_weight(K, lambda, ranks_of(correct));
      expect(after > before,
             fmt("promoting a correct entry from rank %d to %d did not "
                 "raise omega (%.12g -> %.12g)",
                 from + 1, to + 1, before, after));
      ++promotions;
    }
  }
  expect(flips >= 300 && promotions >= 200, "too few effective trials");
  detail = fmt("%zu table cases, %d flips, %d promotions",
               table.size(), flips, promotions);
}

// ---------------------------------------------------------------------------
// 4. Beam search reproduces the exhaustive top-K on model families small
//    enough to enumerate completely.
// ---------------------------------------------------------------------------

void enumerate_complete(const OutputVocab& ov, int max_len,
                        std::vector<int>& cur, int pending,
                        std::vector<std::vector<int>>& out) {
  if (pending == 0) {
    out.push_back(cur);
    return;
  }
  if (static_cast<int>(cur.size()) + pending > max_len) return;
  for (int tok = 0; tok < ov.size(); ++tok) {
    cur.push_back(tok);
    enumerate_complete(ov, max_len, cur, pending + (ov.is_op(tok) ? 1 : -1),
                       out);
    cur.pop_back();
  }
}

void check_beam_exactness(std::string& detail) {
  struct Family {
    std::vector<OpCode> ops;
    int n_slots;
  };
  const std::vector<Family> families = {
      {{OpCode::Add}, 3},
      {{OpCode::Add, OpCode::Sub}, 2},
  };
  const int K = 5, max_len = 3;
  int compared = 0;

  for (int trial = 0; trial < 50; ++trial) {
    const Family& fam = families[static_cast<size_t>(trial % 2)];
    uint64_t seed = 4000 + static_cast<uint64_t>(trial);

    std::vector<double> qs;
    for (int i = 0; i < fam.n_slots; ++i) qs.push_back(2.0 + i);
    Corpus c = corpus_of({slot_problem("p", qs)});
    TrainConfig cfg;
    cfg.hidden_dim = 4 + trial % 5;
    cfg.embed_dim = 3 + trial % 4;
    cfg.latent_dim = 3;
    ModelConfig mc = ModelConfig::from_corpus(c, cfg, false);
    mc.ops = fam.ops;
    Model m(mc, seed);
    const Problem& p = c.problems[0];
    OutputVocab ov = m.output_vocab(p);

    std::vector<std::vector<int>> sequences;
    std::vector<int> cur;
    enumerate_complete(ov, max_len, cur, 1, sequences);

    struct Scored {
      std::vector<int> seq;
      double score;
    };
    std::vector<Scored> scored;
    for (const std::vector<int>& seq : sequences) {
      Equation eq;
      for (int tok : seq) eq.tokens.push_back(ov.token_at(tok));
      scored.push_back({seq, m.sequence_log_prob(p, eq)});
    }
    std::sort(scored.begin(), scored.end(),
              [](const Scored& a, const Scored& b) {
                if (a.score != b.score) return a.score > b.score;
                return a.seq < b.seq;
              });
    size_t want = std::min<size_t>(K, scored.size());

    BeamResult beam = m.beam_search(p, K, max_len);
    expect(beam.entries.size() == want,
           fmt("trial %d: beam has %zu entries, enumeration says %zu", trial,
               beam.entries.size(), want));
    for (size_t i = 0; i < want; ++i) {
      std::vector<int> got = ov.indices_of(beam.entries[i].equation);
      expect(got == scored[i].seq,
             fmt("trial %d: rank %zu sequence differs from the exhaustive "
                 "top-%d",
                 trial, i + 1, K));
      expect(std::fabs(beam.entries[i].log_score - scored[i].score) <= 1e-9,
             fmt("trial %d: rank %zu score %.12g vs enumerated %.12g", trial,
                 i + 1, beam.entries[i].log_score, scored[i].score));
      ++compared;
    }
  }
  detail = fmt("50 parameterizations, %d ranked entries identical", compared);
}

// ---------------------------------------------------------------------------
// 5. Answer verification: fuzzed beams with planted near-misses; nothing
//    wrong may enter the distilled label set.
// ---------------------------------------------------------------------------

Equation random_equation(Rng& r, int n_quantities, int max_len) {
  const OpCode all_ops[] = {OpCode::Add, OpCode::Sub, OpCode::Mul,
                            OpCode::Div, OpCode::Pow};
  Equation eq;
  int pending = 1;
  while (pending > 0) {
    int remaining = max_len - static_cast<int>(eq.tokens.size());
    // branching adds one op and one pending leaf; keep it feasible in-place
    bool must_close = pending >= remaining - 1;
    if (!must_close && r.next_below(100) < 45) {
      eq.tokens.push_back(
          EqToken::make_op(all_ops[r.next_below(5)]));
      ++pending;
    } else {
      eq.tokens.push_back(EqToken::make_quantity(
          static_cast<int>(r.next_below(static_cast<uint64_t>(n_quantities)))));
      --pending;
    }
  }
  return eq;
}

void check_verification(std::string& detail) {
  DistillConfig dc;
  dc.beam_k = 5;

  long long entries_checked = 0, planted_rejects = 0, planted_admits = 0;
  long long labels_checked = 0;

  for (int i = 0; i < 10000; ++i) {
    Rng r = Rng::derive(5000 + static_cast<uint64_t>(i), "accept-verify");
    int nq = 1 + static_cast<int>(r.next_below(4));
    std::vector<double> qs;
    for (int k = 0; k < nq; ++k) {
      double v = r.uniform(0.5, 20.0);
      if (r.next_below(8) == 0) v = -v;
      qs.push_back(v);
    }

    Equation gold;
    std::optional<double> g;
    for (int attempt = 0; attempt < 200; ++attempt) {
      gold = random_equation(r, nq, 7);
      g = oracle_eval(gold, qs);
      if (g && std::fabs(*g) <= 1e6) break;
      g.reset();
    }
    if (!g) continue;

    Problem p;
    p.id = "f" + std::to_string(i);
    p.quantities = qs;
    p.gold_equation = gold;
    p.gold_answer = *g;

    double magnitude = std::max(1.0, std::fabs(*g));
    auto planted = [&](double delta) {
      Equation eq;
      eq.tokens.push_back(EqToken::make_op(OpCode::Add));
      eq.tokens.push_back(EqToken::make_constant(delta));
      eq.tokens.insert(eq.tokens.end(), gold.tokens.begin(),
                       gold.tokens.end());
      return eq;
    };
    Equation near_miss = planted(2e-4 * magnitude);   // just outside
    Equation near_hit = planted(0.5e-4 * magnitude);  // just inside

    BeamResult beam;
    auto push = [&](Equation eq, double score) {
      BeamEntry e;
      e.equation = std::move(eq);
      e.log_score = score;
      e.rank = static_cast<int>(beam.entries.size()) + 1;
      beam.entries.push_back(std::move(e));
    };
    push(gold, -0.1);
    push(near_miss, -0.2);
    push(random_equation(r, nq, 7), -0.3);
    push(near_hit, -0.4);
    push(random_equation(r, nq, 7), -0.5);
    size_t near_miss_at = 1, near_hit_at = 3;

    VerifiedBeam vb = verify_beam(beam, p, dc);
    expect(vb.correct.size() == beam.entries.size(),
           "verification flag count mismatch");

    for (size_t j = 0; j < beam.entries.size(); ++j) {
      std::optional<double> v = oracle_eval(beam.entries[j].equation, qs);
      bool should_admit = v.has_value() && oracle_answers_match(*v, *g);
      expect(vb.correct[j] == should_admit,
             fmt("problem %d entry %zu: verifier says %d, oracle says %d "
                 "(value %s, gold %.10g)",
                 i, j, static_cast<int>(vb.correct[j]),
                 static_cast<int>(should_admit),
                 v ? fmt("%.10g", *v).c_str() : "defect", *g));
      ++entries_checked;
    }
    expect(!vb.correct[near_miss_at], "a near-miss slipped through");
    expect(vb.correct[near_hit_at], "an in-tolerance answer was rejected");
    ++planted_rejects;
    ++planted_admits;

    HardLabelSet labels;
    append_hard_labels(p, vb, labels);
    for (const HardLabel& hl : labels.pairs) {
      std::optional<double> v = oracle_eval(hl.equation, qs);
      expect(v.has_value() && oracle_answers_match(*v, *g),
             fmt("problem %d: a wrong equation entered the label set", i));
      ++labels_checked;
    }
  }

  expect(planted_rejects >= 9000, "too few fuzz cases survived generation");
  detail = fmt("%lld entries verified, %lld planted near-misses rejected, "
               "%lld labels audited",
               entries_checked, planted_rejects, labels_checked);
}

// ---------------------------------------------------------------------------
// 6. With the latent pathway and both distillation weights off, student
//    training IS base training, bit for bit.
// ---------------------------------------------------------------------------

void expect_same_bytes(const std::string& a, const std::string& b) {
  expect(slurp(a) == slurp(b), "files differ: " + a + " vs " + b);
}

void expect_same_records_except_wall(const std::vector<EpochRecord>& a,
                                     const std::vector<EpochRecord>& b) {
  expect(a.size() == b.size(), "epoch record counts differ");
  for (size_t i = 0; i < a.size(); ++i) {
    expect(a[i].epoch == b[i].epoch && a[i].loss_total == b[i].loss_total &&
               a[i].loss_cvae == b[i].loss_cvae &&
               a[i].loss_hard == b[i].loss_hard &&
               a[i].loss_soft == b[i].loss_soft &&
               a[i].omega_mean == b[i].omega_mean &&
               a[i].dkd_size == b[i].dkd_size &&
               a[i].dev_answer_acc == b[i].dev_answer_acc &&
               a[i].lr == b[i].lr,
           fmt("epoch %zu records differ", i));
  }
}

void check_reduction(std::string& detail) {
  TempTree tmp("reduce");
  Corpus all = generate_toy_corpus(300, 11);
  auto [train, dev, test] = split(all, 0.8, 0.2, 0.0, 42);

  TrainConfig cfg;
  cfg.hidden_dim = 24;
  cfg.embed_dim = 12;
  cfg.latent_dim = 8;
  cfg.epochs = 5;
  cfg.max_decode_len = 13;
  cfg.seed = 9;
  cfg.use_cvae = false;
  cfg.distill.beta = 0.0;
  cfg.distill.gamma = 0.0;

  TrainOptions base_opts;
  base_opts.threads = 2;
  base_opts.out_dir = tmp.sub("base");
  TrainResult base = pretrain_teacher(train, dev, cfg, base_opts);

  TrainOptions stud_opts = base_opts;
  stud_opts.out_dir = tmp.sub("student");
  TrainResult stud = train_student(train, dev, base.model, cfg, stud_opts);

  expect_same_records_except_wall(base.log.records, stud.log.records);
  for (const char* f : {"last.ckpt", "last.json", "best.ckpt", "best.json",
                        "config.txt"}) {
    expect_same_bytes(tmp.sub("base") + "/" + f, tmp.sub("student") + "/" + f);
  }
  for (const EpochRecord& rec : stud.log.records) {
    expect(rec.loss_hard == 0.0 && rec.loss_soft == 0.0 &&
               rec.omega_mean == 0.0 && rec.dkd_size == 0,
           "distillation bookkeeping leaked into the reduced run");
  }
  detail = fmt("5 epochs on %zu problems, checkpoints byte-identical",
               train.problems.size());
}

// ---------------------------------------------------------------------------
// 7. On the synthetic task, the distilled student matches or beats its
//    teacher on answers and strictly beats it on beam diversity.
// ---------------------------------------------------------------------------

void check_distillation_gain(std::string& detail) {
  const int seeds = 3;
  double teacher_acc[seeds], student_acc[seeds];
  long long teacher_div = 0, student_div = 0;
  double max_wall = 0.0;

  for (int s = 0; s < seeds; ++s) {
    auto t0 = std::chrono::steady_clock::now();
    Corpus all = generate_toy_corpus(2000, 100 + static_cast<uint64_t>(s));
    auto [train, dev, test] = split(all, 0.8, 0.1, 0.1, 42);

    TrainConfig tcfg;  // library defaults: 40 epochs, hidden 64, beam 5
    tcfg.seed = 10 + static_cast<uint64_t>(s);
    tcfg.use_cvae = false;
    TrainOptions opts;
    opts.threads = 0;  // hardware concurrency
    TrainResult teacher = pretrain_teacher(train, dev, tcfg, opts);
    teacher_acc[s] = teacher.best_dev_acc;
    std::fprintf(stderr, "  [seed %d] teacher dev %.4f (%.0fs)\n", s,
                 teacher_acc[s], seconds_since(t0));

    TrainConfig scfg = tcfg;
    scfg.use_cvae = true;
    scfg.distill.cache_beams = true;  // the teacher is frozen; beams repeat
    TrainResult student = train_student(train, dev, teacher.model, scfg, opts);
    student_acc[s] = student.best_dev_acc;
    std::fprintf(stderr, "  [seed %d] student dev %.4f (%.0fs)\n", s,
                 student_acc[s], seconds_since(t0));

    MetricsReport tm = evaluate_model(teacher.model, dev, 5, LatentMode::None,
                                      77, tcfg.max_decode_len, 0);
    MetricsReport sm = evaluate_model(student.model, dev, 5,
                                      LatentMode::PriorMean, 77,
                                      scfg.max_decode_len, 0);
    teacher_div += tm.diversity.total_distinct_correct;
    student_div += sm.diversity.total_distinct_correct;

    double wall = seconds_since(t0);
    max_wall = std::max(max_wall, wall);
    expect(wall < 900.0, fmt("seed %d took %.0fs (budget 900s)", s, wall));
  }

  double t_mean = (teacher_acc[0] + teacher_acc[1] + teacher_acc[2]) / 3.0;
  double s_mean = (student_acc[0] + student_acc[1] + student_acc[2]) / 3.0;
  expect(t_mean >= 0.90,
         fmt("teacher dev accuracy %.4f/%.4f/%.4f (mean %.4f) below 0.90",
             teacher_acc[0], teacher_acc[1], teacher_acc[2], t_mean));
  expect(s_mean >= t_mean,
         fmt("student mean %.4f fell below teacher mean %.4f", s_mean,
             t_mean));
  expect(student_div > teacher_div,
         fmt("student diversity %lld not above teacher %lld", student_div,
             teacher_div));
  detail = fmt("teacher %.3f/%.3f/%.3f student %.3f/%.3f/%.3f, "
               "diversity %lld vs %lld, slowest seed %.0fs",
               teacher_acc[0], teacher_acc[1], teacher_acc[2], student_acc[0],
               student_acc[1], student_acc[2], student_div, teacher_div,
               max_wall);
}

// ---------------------------------------------------------------------------
// 8. Two runs of the whole pipeline produce byte-identical artifacts.
// ---------------------------------------------------------------------------

void run_pipeline_once(const std::string& root) {
  std::filesystem::create_directories(root);
  Corpus all = generate_toy_corpus(60, 3);
  auto [train, dev, test] = split(all, 0.8, 0.2, 0.0, 42);
  save_corpus(train, root + "/train.jsonl");
  save_corpus(dev, root + "/dev.jsonl");

  TrainConfig cfg;
  cfg.hidden_dim = 12;
  cfg.embed_dim = 8;
  cfg.latent_dim = 6;
  cfg.epochs = 3;
  cfg.batch_size = 10;
  cfg.max_decode_len = 9;
  cfg.distill.beam_k = 3;
  cfg.seed = 5;
  cfg.use_cvae = false;

  TrainOptions opts;
  opts.threads = 4;
  opts.out_dir = root + "/teacher";
  TrainResult teacher = pretrain_teacher(train, dev, cfg, opts);

  TrainConfig scfg = cfg;
  scfg.use_cvae = true;
  opts.out_dir = root + "/student";
  TrainResult student = train_student(train, dev, teacher.model, scfg, opts);

  MetricsReport plain = evaluate_model(student.model, dev, 3,
                                       LatentMode::PriorMean, 9, 9, 4);
  MetricsReport sampled = evaluate_model(student.model, dev, 3,
                                         LatentMode::PriorSample, 9, 9, 4, 2);
  std::ofstream(root + "/metrics.jsonl") << plain.to_jsonl();
  std::ofstream(root + "/metrics_sampled.jsonl") << sampled.to_jsonl();
  std::ofstream(root + "/metrics.txt") << plain.to_table();
}

void check_reproducibility(std::string& detail) {
  TempTree tmp("repro");
  run_pipeline_once(tmp.sub("a"));
  run_pipeline_once(tmp.sub("b"));

  int files = 0;
  for (const char* model_dir : {"teacher", "student"}) {
    for (const char* f : {"last.ckpt", "last.json", "best.ckpt", "best.json",
                          "config.txt"}) {
      expect_same_bytes(tmp.sub("a") + "/" + model_dir + "/" + f,
                        tmp.sub("b") + "/" + model_dir + "/" + f);
      ++files;
    }
    RunLog la = RunLog::load(tmp.sub("a") + "/" + model_dir + "/runlog.jsonl");
    RunLog lb = RunLog::load(tmp.sub("b") + "/" + model_dir + "/runlog.jsonl");
    expect_same_records_except_wall(la.records, lb.records);
  }
  for (const char* f : {"train.jsonl", "dev.jsonl", "metrics.jsonl",
                        "metrics_sampled.jsonl", "metrics.txt"}) {
    expect_same_bytes(tmp.sub("a") + "/" + f, tmp.sub("b") + "/" + f);
    ++files;
  }
  detail = fmt("%d artifacts byte-identical, run logs equal minus wall time",
               files);
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    void (*fn)(std::string&);
  };
  const Criterion criteria[] = {
      {"backpropagated gradients match finite differences", check_gradients},
      {"latent KL matches closed form and Monte Carlo", check_gaussian_kl},
      {"rank-attenuated correctness weight is monotone", check_omega},
      {"beam search reproduces the exhaustive top-K", check_beam_exactness},
      {"answer verification admits no wrong equation", check_verification},
      {"disabling latent and distillation reproduces base training",
       check_reduction},
      {"distilled student matches its teacher and diversifies its beams",
       check_distillation_gain},
      {"the full pipeline is bitwise reproducible", check_reproducibility},
  };

  bool all_ok = true;
  for (const Criterion& c : criteria) {
    std::string d;
    try {
      c.fn(d);
      std::string line = std::string("PASS: ") + c.name;
      if (!d.empty()) line += "  [" + d + "]";
      std::printf("%s\n", line.c_str());
    } catch (const std::exception& e) {
      std::printf("FAIL: %s (%s)\n", c.name, e.what());
      all_ok = false;
    }
    std::fflush(stdout);
  }
  return all_ok ? 0 : 1;
}
