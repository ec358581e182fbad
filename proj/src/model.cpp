// SPDX-License-Identifier: Apache-2.0

#include "divkd/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace divkd {

using nlohmann::json;

namespace {

// "N<k>" -> k, -1 for anything else.
int slot_index(const std::string& token) {
  if (token.size() < 2 || token[0] != 'N') return -1;
  int idx = 0;
  for (size_t i = 1; i < token.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(token[i]))) return -1;
    idx = idx * 10 + (token[i] - '0');
  }
  return idx;
}

Eigen::RowVectorXd log_softmax(const Matrix& logits) {
  double mx = logits.maxCoeff();
  double lse = std::log((logits.array() - mx).exp().sum());
  return logits.row(0).array() - mx - lse;
}

}  // namespace

// ---------------------------------------------------------------------------
// OutputVocab
// ---------------------------------------------------------------------------

OutputVocab::OutputVocab(std::vector<OpCode> ops,
                         std::vector<std::pair<std::string, double>> constants,
                         int n_quantities)
    : ops_(std::move(ops)),
      constants_(std::move(constants)),
      n_quantities_(n_quantities) {
  if (ops_.empty()) throw ConfigError("output vocabulary needs operators");
  if (n_quantities_ < 0) throw ConfigError("negative quantity count");
}

EqToken OutputVocab::token_at(int index) const {
  if (index < 0 || index >= size()) {
    throw VocabError("output token index " + std::to_string(index) +
                     " out of range");
  }
  if (index < n_ops()) return EqToken::make_op(ops_[static_cast<size_t>(index)]);
  index -= n_ops();
  if (index < n_constants()) {
    const auto& [name, value] = constants_[static_cast<size_t>(index)];
    return EqToken::make_constant(name, value);
  }
  return EqToken::make_quantity(index - n_constants());
}

int OutputVocab::index_of(const EqToken& t) const {
  switch (t.kind) {
    case EqToken::Kind::Op: {
      auto it = std::find(ops_.begin(), ops_.end(), t.op);
      if (it == ops_.end()) return -1;
      return static_cast<int>(it - ops_.begin());
    }
    case EqToken::Kind::Constant: {
      for (size_t i = 0; i < constants_.size(); ++i) {
        if (constants_[i].first == t.name) {
          return n_ops() + static_cast<int>(i);
        }
      }
      return -1;
    }
    case EqToken::Kind::Quantity: {
      if (t.quantity < 0 || t.quantity >= n_quantities_) return -1;
      return n_ops() + n_constants() + t.quantity;
    }
  }
  return -1;
}

std::vector<int> OutputVocab::indices_of(const Equation& eq) const {
  std::vector<int> out;
  out.reserve(eq.tokens.size());
  for (const EqToken& t : eq.tokens) {
    int idx = index_of(t);
    if (idx < 0) {
      throw VocabError("equation token '" +
                       to_prefix_string(Equation{{t}}) +
                       "' is not in the output vocabulary");
    }
    out.push_back(idx);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model construction and persistence
// ---------------------------------------------------------------------------

ModelConfig ModelConfig::from_corpus(const Corpus& corpus,
                                     const TrainConfig& cfg, bool use_cvae) {
  ModelConfig mc;
  mc.hidden_dim = cfg.hidden_dim;
  mc.embed_dim = cfg.embed_dim;
  mc.latent_dim = cfg.latent_dim;
  mc.max_slots = std::max(1, max_quantity_count(corpus));
  mc.use_cvae = use_cvae;
  mc.vocab_tokens = corpus.vocab.tokens();
  mc.constants.assign(corpus.constants.begin(), corpus.constants.end());
  return mc;
}

Model::Model(ModelConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
  if (cfg_.hidden_dim <= 0 || cfg_.embed_dim <= 0 || cfg_.latent_dim <= 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (cfg_.ops.empty()) throw ConfigError("model needs at least one operator");
  if (cfg_.max_slots <= 0) throw ConfigError("max_slots must be positive");

  for (const std::string& tok : cfg_.vocab_tokens) vocab_.add(tok);
  cfg_.vocab_tokens = vocab_.tokens();  // normalized: <unk> guaranteed at 0

  const int d = cfg_.hidden_dim;
  const int e = cfg_.embed_dim;
  const int l = cfg_.latent_dim;
  const int n_ops = static_cast<int>(cfg_.ops.size());
  const int n_const = static_cast<int>(cfg_.constants.size());

  // Weights draw Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); embedding tables
  // scale by the embedding width instead since their rows are selected, not
  // contracted. Biases start at zero.
  auto weight = [&](const std::string& name, int rows, int cols) {
    store_.create_uniform(name, rows, cols, 1.0 / std::sqrt(rows), init_seed);
  };
  auto embedding = [&](const std::string& name, int rows, int cols) {
    store_.create_uniform(name, rows, cols, 1.0 / std::sqrt(cols), init_seed);
  };
  auto bias = [&](const std::string& name, int cols) {
    store_.create(name, 1, cols);
  };
  auto gru = [&](const std::string& prefix) {
    weight(prefix + ".W", e, 3 * d);
    weight(prefix + ".U", d, 3 * d);
    bias(prefix + ".b", 3 * d);
  };

  embedding("emb.word", vocab_.size(), e);
  embedding("emb.slot", cfg_.max_slots, e);
  gru("enc.fw");
  gru("enc.bw");
  weight("dec.attn.Wq", 2 * d, d);
  weight("dec.attn.Wh", 2 * d, d);
  bias("dec.attn.b", d);
  weight("dec.attn.v", d, 1);
  weight("dec.score.W", 4 * d, e);
  bias("dec.score.b", e);
  embedding("dec.embed.op", n_ops, e);
  if (n_const > 0) embedding("dec.embed.const", n_const, e);
  weight("dec.embed.quant", 2 * d, e);
  weight("dec.left.W", 4 * d + e, 2 * d);
  bias("dec.left.b", 2 * d);
  weight("dec.right.W", 4 * d + e, 2 * d);
  bias("dec.right.b", 2 * d);

  if (cfg_.use_cvae) {
    weight("cvae.posterior.gru.fw.W", e, 3 * d);
    weight("cvae.posterior.gru.fw.U", d, 3 * d);
    bias("cvae.posterior.gru.fw.b", 3 * d);
    weight("cvae.posterior.gru.bw.W", e, 3 * d);
    weight("cvae.posterior.gru.bw.U", d, 3 * d);
    bias("cvae.posterior.gru.bw.b", 3 * d);
    weight("cvae.posterior.mu.W", 4 * d, l);
    bias("cvae.posterior.mu.b", l);
    weight("cvae.posterior.sig.W", 4 * d, l);
    bias("cvae.posterior.sig.b", l);
    weight("cvae.prior.mu.W", 2 * d, l);
    bias("cvae.prior.mu.b", l);
    weight("cvae.prior.sig.W", 2 * d, l);
    bias("cvae.prior.sig.b", l);
    weight("cvae.proj.W", l, 2 * d);
  }

  store_.set_seed(init_seed);
}

OutputVocab Model::output_vocab(const Problem& problem) const {
  return OutputVocab(cfg_.ops, cfg_.constants,
                     static_cast<int>(problem.quantities.size()));
}

void Model::save(const std::string& basename) const {
  store_.save(basename + ".ckpt");
  json j;
  j["hidden_dim"] = cfg_.hidden_dim;
  j["embed_dim"] = cfg_.embed_dim;
  j["latent_dim"] = cfg_.latent_dim;
  j["max_slots"] = cfg_.max_slots;
  j["use_cvae"] = cfg_.use_cvae;
  std::vector<std::string> ops;
  for (OpCode op : cfg_.ops) ops.push_back(std::string(1, op_symbol(op)));
  j["ops"] = ops;
  j["vocab"] = cfg_.vocab_tokens;
  json consts = json::array();
  for (const auto& [name, value] : cfg_.constants) {
    consts.push_back(json::array({name, value}));
  }
  j["constants"] = consts;
  std::ofstream out(basename + ".json");
  if (!out) throw FileError("cannot write " + basename + ".json");
  out << j.dump(2) << '\n';
  if (!out) throw FileError("failed writing " + basename + ".json");
}

Model Model::load(const std::string& basename) {
  std::ifstream in(basename + ".json");
  if (!in) throw FileError("cannot open " + basename + ".json");
  json j = json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) {
    throw FormatError(basename + ".json: invalid model description");
  }
  try {
    ModelConfig cfg;
    cfg.hidden_dim = j.at("hidden_dim").get<int>();
    cfg.embed_dim = j.at("embed_dim").get<int>();
    cfg.latent_dim = j.at("latent_dim").get<int>();
    cfg.max_slots = j.at("max_slots").get<int>();
    cfg.use_cvae = j.at("use_cvae").get<bool>();
    cfg.ops.clear();
    for (const auto& s : j.at("ops")) {
      auto op = op_from_symbol(s.get<std::string>());
      if (!op) throw FormatError("unknown operator " + s.get<std::string>());
      cfg.ops.push_back(*op);
    }
    cfg.vocab_tokens = j.at("vocab").get<std::vector<std::string>>();
    cfg.constants.clear();
    for (const auto& c : j.at("constants")) {
      cfg.constants.emplace_back(c.at(0).get<std::string>(),
                                 c.at(1).get<double>());
    }
    Model model(std::move(cfg), 0);
    model.store_.load_into(basename + ".ckpt");
    return model;
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(basename + ".json: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Differentiable encoder / decoder
// ---------------------------------------------------------------------------

std::vector<Val> gru_scan(Tape& t, Val gates_x, Val U, int n, int d) {
  Val h = t.input(Matrix::Zero(1, d));
  std::vector<Val> states;
  states.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Val gx = t.slice_rows(gates_x, i, 1);
    Val gh = t.matmul(h, U);
    Val r = t.sigmoid(t.add(t.slice_cols(gx, 0, d), t.slice_cols(gh, 0, d)));
    Val z = t.sigmoid(t.add(t.slice_cols(gx, d, d), t.slice_cols(gh, d, d)));
    Val cand = t.tanh(t.add(t.slice_cols(gx, 2 * d, d),
                            t.elem_mul(r, t.slice_cols(gh, 2 * d, d))));
    // h' = (1 - z) * cand + z * h, folded as cand + z * (h - cand).
    h = t.add(cand, t.elem_mul(z, t.sub(h, cand)));
    states.push_back(h);
  }
  return states;
}

EncoderOutput Model::encode(Tape& t, const Problem& problem) {
  const int d = cfg_.hidden_dim;
  const int n = static_cast<int>(problem.tokens.size());
  if (n == 0) throw FormatError("problem " + problem.id + " has no tokens");

  const int nq = static_cast<int>(problem.quantities.size());
  Val emb_word = t.param(store_.get("emb.word"));
  Val emb_slot = t.param(store_.get("emb.slot"));

  std::vector<int> slot_positions(static_cast<size_t>(nq), -1);
  std::vector<Val> rows;
  rows.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const std::string& tok = problem.tokens[static_cast<size_t>(i)];
    int slot = slot_index(tok);
    if (slot >= 0 && slot < nq) {
      if (slot >= cfg_.max_slots) {
        throw VocabError("quantity slot " + tok +
                         " exceeds the model's slot capacity");
      }
      if (slot_positions[static_cast<size_t>(slot)] < 0) {
        slot_positions[static_cast<size_t>(slot)] = i;
      }
      rows.push_back(t.slice_rows(emb_slot, slot, 1));
      continue;
    }
    int id = vocab_.id(tok);
    if (id < 0) throw VocabError("unknown token: " + tok);
    rows.push_back(t.slice_rows(emb_word, id, 1));
  }
  Val X = t.concat_rows(rows);  // n x e

  // Forward direction reads X top-down, backward direction bottom-up; both
  // input-gate banks are computed with one matmul each.
  Val gx_fw = t.add(t.matmul(X, t.param(store_.get("enc.fw.W"))),
                    t.param(store_.get("enc.fw.b")));
  std::vector<Val> rev;
  rev.reserve(static_cast<size_t>(n));
  for (int i = n - 1; i >= 0; --i) rev.push_back(t.slice_rows(X, i, 1));
  Val X_rev = t.concat_rows(rev);
  Val gx_bw = t.add(t.matmul(X_rev, t.param(store_.get("enc.bw.W"))),
                    t.param(store_.get("enc.bw.b")));

  std::vector<Val> fw =
      gru_scan(t, gx_fw, t.param(store_.get("enc.fw.U")), n, d);
  std::vector<Val> bw_rev =
      gru_scan(t, gx_bw, t.param(store_.get("enc.bw.U")), n, d);

  std::vector<Val> state_rows;
  state_rows.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    state_rows.push_back(t.concat_cols(
        {fw[static_cast<size_t>(i)], bw_rev[static_cast<size_t>(n - 1 - i)]}));
  }
  Val states = t.concat_rows(state_rows);  // n x 2d
  Val root = t.add(t.slice_rows(states, n - 1, 1), t.slice_rows(states, 0, 1));

  // Attention keys and output-candidate representations are fixed for the
  // whole decode, so build them once here.
  Val keys = t.add(t.matmul(states, t.param(store_.get("dec.attn.Wh"))),
                   t.param(store_.get("dec.attn.b")));

  OutputVocab ov = output_vocab(problem);
  std::vector<Val> cand_parts;
  cand_parts.push_back(t.param(store_.get("dec.embed.op")));
  if (ov.n_constants() > 0) {
    cand_parts.push_back(t.param(store_.get("dec.embed.const")));
  }
  if (nq > 0) {
    std::vector<Val> slot_states;
    slot_states.reserve(static_cast<size_t>(nq));
    for (int k = 0; k < nq; ++k) {
      int pos = slot_positions[static_cast<size_t>(k)];
      if (pos < 0) {
        throw VocabError("problem " + problem.id + ": quantity slot N" +
                         std::to_string(k) + " does not occur in the text");
      }
      slot_states.push_back(t.slice_rows(states, pos, 1));
    }
    cand_parts.push_back(t.matmul(t.concat_rows(slot_states),
                                  t.param(store_.get("dec.embed.quant"))));
  }
  Val R = t.concat_rows(cand_parts);  // V x e
  Val Rt = t.transpose(R);

  return EncoderOutput{states, root, keys, R, Rt, n, std::move(slot_positions),
                       std::move(ov)};
}

DecodeResult Model::decode_teacher_forced(Tape& t, const EncoderOutput& enc,
                                          const Equation& target,
                                          std::optional<Val> latent_hz) {
  if (!validate_prefix(target.tokens)) {
    throw FormatError("decode target is not a valid prefix equation");
  }
  std::vector<int> indices = enc.out_vocab.indices_of(target);

  Val Wq = t.param(store_.get("dec.attn.Wq"));
  Val v = t.param(store_.get("dec.attn.v"));
  Val Ws = t.param(store_.get("dec.score.W"));
  Val bs = t.param(store_.get("dec.score.b"));
  Val Wl = t.param(store_.get("dec.left.W"));
  Val bl = t.param(store_.get("dec.left.b"));
  Val Wr = t.param(store_.get("dec.right.W"));
  Val br = t.param(store_.get("dec.right.b"));

  Val root = latent_hz ? t.add(enc.root, *latent_hz) : enc.root;
  std::vector<Val> stack{root};
  std::vector<Val> step_logits;
  std::vector<Val> nll_terms;
  step_logits.reserve(indices.size());
  nll_terms.reserve(indices.size());

  for (size_t step = 0; step < indices.size(); ++step) {
    Val goal = stack.back();
    stack.pop_back();

    // Additive attention against the precomputed keys, then candidate
    // scoring by dot product in embedding space. This arithmetic has an
    // inference twin in eval_step below; keep the two in lockstep.
    Val pre = t.tanh(t.add(enc.attn_keys, t.matmul(goal, Wq)));
    Val alpha = t.softmax_row(t.transpose(t.matmul(pre, v)));
    Val ctx = t.matmul(alpha, enc.states);
    Val u = t.tanh(t.add(t.matmul(t.concat_cols({goal, ctx}), Ws), bs));
    Val logits = t.matmul(u, enc.cand_repr_t);

    int target_idx = indices[step];
    Val logp = t.log_softmax_row(logits);
    nll_terms.push_back(t.neg(t.pick(logp, 0, target_idx)));
    step_logits.push_back(logits);

    if (enc.out_vocab.is_op(target_idx)) {
      Val tok_repr = t.slice_rows(enc.cand_repr, target_idx, 1);
      Val inp = t.concat_cols({goal, ctx, tok_repr});
      Val left = t.tanh(t.add(t.matmul(inp, Wl), bl));
      Val right = t.tanh(t.add(t.matmul(inp, Wr), br));
      stack.push_back(right);  // left child is decoded first
      stack.push_back(left);
    }
  }

  Val nll = t.sum(t.concat_cols(nll_terms));
  return DecodeResult{nll, std::move(step_logits), std::move(indices)};
}

// ---------------------------------------------------------------------------
// Inference twins (matrix arithmetic, no tape)
// ---------------------------------------------------------------------------

struct Model::EvalEncoding {
  Matrix states;  // n x 2d
  Matrix root;    // 1 x 2d, latent projection already folded in
  Matrix keys;    // n x d
  Matrix R;       // V x e
  Matrix Rt;      // e x V
  OutputVocab ov;
};

Model::EvalEncoding Model::eval_encode(const Problem& problem, LatentMode mode,
                                       Rng* rng) {
  Tape t;
  EncoderOutput enc = encode(t, problem);
  Matrix root = t.value(enc.root);

  if (mode != LatentMode::None) {
    if (!cfg_.use_cvae) {
      throw ConfigError("latent decoding requested on a model without a "
                        "latent pathway");
    }
    Matrix mu = root * store_.get("cvae.prior.mu.W").value +
                store_.get("cvae.prior.mu.b").value;
    Matrix z = mu;
    if (mode == LatentMode::PriorSample) {
      if (rng == nullptr) {
        throw ConfigError("sampled latent decoding requires an rng");
      }
      Matrix lv = (root * store_.get("cvae.prior.sig.W").value +
                   store_.get("cvae.prior.sig.b").value)
                      .cwiseMax(-10.0)
                      .cwiseMin(10.0);
      for (Eigen::Index i = 0; i < z.cols(); ++i) {
        z(0, i) += std::exp(0.5 * lv(0, i)) * rng->normal();
      }
    }
    root += z * store_.get("cvae.proj.W").value;
  }

  Matrix R = t.value(enc.cand_repr);
  return EvalEncoding{t.value(enc.states), std::move(root),
                      t.value(enc.attn_keys), R, R.transpose(),
                      enc.out_vocab};
}

std::pair<Matrix, Matrix> Model::eval_step(const EvalEncoding& enc,
                                           const Matrix& goal) const {
  // Inference twin of the attention + scoring block in
  // decode_teacher_forced; keep the two in lockstep.
  Matrix qk = goal * store_.get("dec.attn.Wq").value;
  Matrix pre = (enc.keys.rowwise() + qk.row(0)).array().tanh();
  Matrix scores = (pre * store_.get("dec.attn.v").value).transpose();  // 1 x n
  double mx = scores.maxCoeff();
  Eigen::ArrayXXd ex = (scores.array() - mx).exp();
  Matrix alpha = ex / ex.sum();
  Matrix ctx = alpha * enc.states;  // 1 x 2d

  Matrix qc(1, goal.cols() + ctx.cols());
  qc << goal, ctx;
  Matrix u = ((qc * store_.get("dec.score.W").value).rowwise() +
              store_.get("dec.score.b").value.row(0))
                 .array()
                 .tanh();
  Matrix logits = u * enc.Rt;  // 1 x V
  return {std::move(logits), std::move(ctx)};
}

std::pair<Matrix, Matrix> Model::eval_decompose(const EvalEncoding& enc,
                                                const Matrix& goal,
                                                const Matrix& ctx,
                                                int token_index) const {
  Matrix inp(1, goal.cols() + ctx.cols() + enc.R.cols());
  inp << goal, ctx, enc.R.row(token_index);
  Matrix left = ((inp * store_.get("dec.left.W").value).rowwise() +
                 store_.get("dec.left.b").value.row(0))
                    .array()
                    .tanh();
  Matrix right = ((inp * store_.get("dec.right.W").value).rowwise() +
                  store_.get("dec.right.b").value.row(0))
                     .array()
                     .tanh();
  return {std::move(left), std::move(right)};
}

std::vector<Matrix> Model::forced_logits(const Problem& problem,
                                         const Equation& target,
                                         LatentMode mode, Rng* rng) {
  if (!validate_prefix(target.tokens)) {
    throw FormatError("decode target is not a valid prefix equation");
  }
  EvalEncoding enc = eval_encode(problem, mode, rng);
  std::vector<int> indices = enc.ov.indices_of(target);

  std::vector<Matrix> out;
  out.reserve(indices.size());
  std::vector<Matrix> stack{enc.root};
  for (int idx : indices) {
    Matrix goal = stack.back();
    stack.pop_back();
    auto [logits, ctx] = eval_step(enc, goal);
    out.push_back(logits);
    if (enc.ov.is_op(idx)) {
      auto [left, right] = eval_decompose(enc, goal, ctx, idx);
      stack.push_back(std::move(right));
      stack.push_back(std::move(left));
    }
  }
  return out;
}

double Model::sequence_log_prob(const Problem& problem, const Equation& target,
                                LatentMode mode, Rng* rng) {
  std::vector<Matrix> logits = forced_logits(problem, target, mode, rng);
  OutputVocab ov = output_vocab(problem);
  std::vector<int> indices = ov.indices_of(target);
  double total = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    total += log_softmax(logits[i])(indices[i]);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Beam search
// ---------------------------------------------------------------------------

namespace {

struct Hypothesis {
  std::vector<int> tokens;
  std::vector<Matrix> stack;  // pending goals, top at back
  double score = 0.0;
};

struct Completed {
  std::vector<int> tokens;
  double score = 0.0;
};

}  // namespace

BeamResult Model::beam_search(const Problem& problem, int K, int max_len,
                              LatentMode mode, Rng* rng) {
  if (K < 1) throw ConfigError("beam width must be >= 1");
  if (max_len < 1) throw ConfigError("max_len must be >= 1");

  EvalEncoding enc = eval_encode(problem, mode, rng);
  const int V = enc.ov.size();

  std::vector<Hypothesis> alive;
  alive.push_back(Hypothesis{{}, {enc.root}, 0.0});
  std::vector<Completed> pool;

  for (int len = 1; len <= max_len && !alive.empty(); ++len) {
    // Score every extension of every alive hypothesis.
    struct Cand {
      double score;
      int hyp;
      int tok;
    };
    std::vector<Cand> cands;
    cands.reserve(alive.size() * static_cast<size_t>(V));
    std::vector<Matrix> ctxs(alive.size());
    std::vector<Eigen::RowVectorXd> logps(alive.size());
    for (size_t h = 0; h < alive.size(); ++h) {
      auto [logits, ctx] = eval_step(enc, alive[h].stack.back());
      ctxs[h] = std::move(ctx);
      logps[h] = log_softmax(logits);
      for (int v = 0; v < V; ++v) {
        cands.push_back(Cand{alive[h].score + logps[h](v),
                             static_cast<int>(h), v});
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.tok != b.tok) return a.tok < b.tok;
      return a.hyp < b.hyp;
    });

    // Fill the K beam slots in score order. Completions take a slot and move
    // to the pool; extensions that can no longer finish within max_len are
    // dead ends and are skipped without consuming a slot.
    std::vector<Hypothesis> next;
    int slots = 0;
    for (const Cand& c : cands) {
      if (slots >= K) break;
      const Hypothesis& parent = alive[static_cast<size_t>(c.hyp)];
      bool is_op = enc.ov.is_op(c.tok);
      int pending = static_cast<int>(parent.stack.size()) - 1 + (is_op ? 2 : 0);
      std::vector<int> tokens = parent.tokens;
      tokens.push_back(c.tok);
      if (pending == 0) {
        pool.push_back(Completed{std::move(tokens), c.score});
        ++slots;
        continue;
      }
      if (len + pending > max_len) continue;  // dead end
      Hypothesis h;
      h.tokens = std::move(tokens);
      h.score = c.score;
      h.stack.assign(parent.stack.begin(), parent.stack.end() - 1);
      if (is_op) {
        auto [left, right] = eval_decompose(
            enc, parent.stack.back(), ctxs[static_cast<size_t>(c.hyp)], c.tok);
        h.stack.push_back(std::move(right));
        h.stack.push_back(std::move(left));
      }
      next.push_back(std::move(h));
      ++slots;
    }
    alive = std::move(next);
  }

  if (pool.empty()) {
    throw EmptyBeamError("no complete equation within " +
                         std::to_string(max_len) + " tokens for problem " +
                         problem.id);
  }
  std::sort(pool.begin(), pool.end(), [](const Completed& a, const Completed& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::lexicographical_compare(a.tokens.begin(), a.tokens.end(),
                                        b.tokens.begin(), b.tokens.end());
  });
  if (static_cast<int>(pool.size()) > K) pool.resize(static_cast<size_t>(K));

  BeamResult result;
  result.entries.reserve(pool.size());
  for (size_t i = 0; i < pool.size(); ++i) {
    BeamEntry entry;
    for (int idx : pool[i].tokens) {
      entry.equation.tokens.push_back(enc.ov.token_at(idx));
    }
    entry.log_score = pool[i].score;
    entry.rank = static_cast<int>(i) + 1;
    result.entries.push_back(std::move(entry));
  }
  return result;
}

}  // namespace divkd
