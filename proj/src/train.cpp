// SPDX-License-Identifier: Apache-2.0

#include "divkd/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <thread>

#include "json.hpp"

#include "divkd/cvae.hpp"
#include "divkd/distill.hpp"
#include "divkd/metrics.hpp"

namespace divkd {

using nlohmann::json;

namespace {

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

Matrix draw_eps(Rng& rng, int latent_dim) {
  Matrix eps(1, latent_dim);
  for (Eigen::Index i = 0; i < eps.cols(); ++i) eps(0, i) = rng.normal();
  return eps;
}

void clip_gradients(ParamStore& ps, int epoch, size_t batch) {
  double sq = 0.0;
  for (Parameter* p : ps.all()) sq += p->grad.squaredNorm();
  double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) {
    throw DivergenceError("non-finite gradients at epoch " +
                          std::to_string(epoch) + ", batch " +
                          std::to_string(batch));
  }
  if (norm > kGradClipNorm) {
    double s = kGradClipNorm / norm;
    for (Parameter* p : ps.all()) p->grad *= s;
  }
}

std::map<std::string, Parameter> snapshot_params(ParamStore& ps) {
  std::map<std::string, Parameter> snap;
  for (Parameter* p : ps.all()) snap.emplace(p->name, *p);
  return snap;
}

void restore_params(ParamStore& ps, std::map<std::string, Parameter>& snap) {
  for (auto& [name, src] : snap) {
    Parameter& dst = ps.get(name);
    dst.value = src.value;
    dst.grad = src.grad;
    dst.m = src.m;
    dst.v = src.v;
  }
}

// One epoch's shuffled visit order; a pure function of (seed, epoch) so a
// resumed run replays the exact schedule.
std::vector<size_t> epoch_order(size_t n, uint64_t seed, int epoch) {
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng = Rng::derive(seed, "epoch-shuffle", static_cast<uint64_t>(epoch));
  rng.shuffle(order);
  return order;
}

// Shared body for teacher pre-training (teacher == nullptr) and student
// training. With beta == gamma == 0 the distillation machinery is skipped
// entirely, which makes student training with no latent pathway reproduce
// base training arithmetic exactly.
TrainResult run_training(Model model, Model* teacher, const Corpus& train,
                         const Corpus& dev, const TrainConfig& cfg,
                         const TrainOptions& opts) {
  cfg.validate();
  if (train.problems.empty()) {
    throw EmptyCorpusError("training split is empty");
  }
  if (static_cast<size_t>(cfg.batch_size) > train.problems.size()) {
    throw ConfigError("batch_size " + std::to_string(cfg.batch_size) +
                      " exceeds training corpus size " +
                      std::to_string(train.problems.size()));
  }
  const DistillConfig& dc = cfg.distill;
  const bool distilling = teacher != nullptr && (dc.beta > 0.0 || dc.gamma > 0.0);
  const int threads = resolve_threads(opts.threads);
  const size_t n_train = train.problems.size();

  model.params().set_config_hash(cfg.config_hash());

  namespace fs = std::filesystem;
  std::string dir = opts.out_dir.value_or("");
  auto at = [&dir](const char* name) { return dir + "/" + name; };
  RunLog log;
  int start_epoch = 0;
  if (!dir.empty()) {
    fs::create_directories(dir);
    if (fs::exists(at("runlog.jsonl")) && fs::exists(at("last.ckpt"))) {
      log = RunLog::load(at("runlog.jsonl"));
      if (!log.records.empty()) {
        Model prev = Model::load(at("last"));
        if (prev.params().config_hash() != cfg.config_hash()) {
          throw CheckpointError(dir +
                                " holds a run with a different configuration");
        }
        model = std::move(prev);
        start_epoch = log.records.back().epoch + 1;
      }
    }
    std::ofstream cfg_echo(at("config.txt"));
    if (!cfg_echo) throw FileError("cannot write " + at("config.txt"));
    cfg_echo << cfg.to_string();
  }

  int best_epoch = -1;
  double best_acc = -1.0;
  for (const EpochRecord& r : log.records) {
    if (r.dev_answer_acc > best_acc) {
      best_acc = r.dev_answer_acc;
      best_epoch = r.epoch;
    }
  }
  std::map<std::string, Parameter> best_snapshot;

  // Cached teacher beams when freezing after the first pass is requested.
  std::vector<VerifiedBeam> beam_cache(distilling && dc.cache_beams ? n_train
                                                                    : 0);
  std::vector<uint8_t> beam_cached(beam_cache.size(), 0);

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<size_t> order = epoch_order(n_train, cfg.seed, epoch);
    const double lr = cfg.lr_at_epoch(epoch);
    const double kl_w = cfg.kl_weight_at_epoch(epoch);

    double ep_cvae = 0.0, ep_hard = 0.0, ep_soft = 0.0, omega_sum = 0.0;
    long long dkd_total = 0;
    int n_batches = 0;

    for (size_t bstart = 0; bstart < n_train;
         bstart += static_cast<size_t>(cfg.batch_size)) {
      const size_t bend =
          std::min(bstart + static_cast<size_t>(cfg.batch_size), n_train);
      const size_t B = bend - bstart;

      // Teacher verification is read-only on the frozen teacher and runs in
      // parallel across the batch; everything downstream is sequential.
      std::vector<VerifiedBeam> verified(B);
      std::vector<HardLabelSet> labels(B);
      long long dkd_batch = 0;
      if (distilling) {
        parallel_for(B, threads, [&](size_t j) {
          const size_t pidx = order[bstart + j];
          if (dc.cache_beams && beam_cached[pidx]) {
            verified[j] = beam_cache[pidx];
            return;
          }
          const Problem& p = train.problems[pidx];
          try {
            BeamResult beam =
                teacher->beam_search(p, dc.beam_k, cfg.max_decode_len);
            verified[j] = verify_beam(beam, p, dc);
          } catch (const EmptyBeamError&) {
            verified[j] = VerifiedBeam{};
          }
          if (dc.cache_beams) {
            beam_cache[pidx] = verified[j];
            beam_cached[pidx] = 1;
          }
        });
        for (size_t j = 0; j < B; ++j) {
          append_hard_labels(train.problems[order[bstart + j]], verified[j],
                             labels[j]);
          dkd_batch += static_cast<long long>(labels[j].pairs.size());
        }
      }

      model.params().zero_grads();
      double b_cvae = 0.0, b_hard = 0.0, b_soft = 0.0;
      for (size_t j = 0; j < B; ++j) {
        const size_t pidx = order[bstart + j];
        const Problem& p = train.problems[pidx];
        const uint64_t stream_idx =
            (static_cast<uint64_t>(epoch) << 32) | static_cast<uint64_t>(pidx);

        Tape t;
        EncoderOutput enc = model.encode(t, p);
        Val recon;
        std::vector<Val>* student_logits = nullptr;
        std::optional<CvaeLossParts> parts;
        std::optional<DecodeResult> plain;
        if (model.has_cvae()) {
          Rng eps_rng = Rng::derive(cfg.seed, "cvae-eps", stream_idx);
          Matrix eps = draw_eps(eps_rng, cfg.latent_dim);
          parts = cvae_loss(t, model, enc, p.gold_equation, kl_w, eps);
          recon = parts->total;
          student_logits = &parts->decode.step_logits;
        } else {
          plain = model.decode_teacher_forced(t, enc, p.gold_equation,
                                              std::nullopt);
          recon = plain->nll;
          student_logits = &plain->step_logits;
        }

        Val loss = t.scale(recon, 1.0 / static_cast<double>(B));

        if (distilling && dc.beta > 0.0 && !labels[j].pairs.empty() &&
            dkd_batch > 0) {
          Rng hard_rng = Rng::derive(cfg.seed, "hard-eps", stream_idx);
          std::vector<Val> terms;
          terms.reserve(labels[j].pairs.size());
          for (const HardLabel& hl : labels[j].pairs) {
            if (model.has_cvae()) {
              Matrix eps = draw_eps(hard_rng, cfg.latent_dim);
              terms.push_back(
                  hard_label_nll(t, model, enc, hl.equation, eps));
            } else {
              terms.push_back(
                  model.decode_teacher_forced(t, enc, hl.equation, std::nullopt)
                      .nll);
            }
          }
          Val hard_sum = t.sum(t.concat_cols(terms));
          loss = t.add(loss, t.scale(hard_sum, dc.beta /
                                                   static_cast<double>(dkd_batch)));
          b_hard += t.value(hard_sum)(0, 0) / static_cast<double>(dkd_batch);
        }

        if (distilling && dc.gamma > 0.0 && verified[j].omega > 0.0) {
          std::vector<Matrix> teacher_logits =
              teacher->forced_logits(p, p.gold_equation);
          Val soft = soft_distill_kl(t, *student_logits, teacher_logits,
                                     dc.tau, dc.soft_kl_teacher_first);
          loss = t.add(loss,
                       t.scale(soft, dc.gamma * verified[j].omega /
                                         static_cast<double>(B)));
          b_soft += verified[j].omega * t.value(soft)(0, 0) /
                    static_cast<double>(B);
        }

        b_cvae += t.value(recon)(0, 0) / static_cast<double>(B);
        t.backward(loss);
      }

      if (!std::isfinite(b_cvae) || !std::isfinite(b_hard) ||
          !std::isfinite(b_soft)) {
        throw DivergenceError("non-finite training loss at epoch " +
                              std::to_string(epoch) + ", batch " +
                              std::to_string(n_batches));
      }
      clip_gradients(model.params(), epoch, static_cast<size_t>(n_batches));
      adam_step(model.params(), lr);

      ep_cvae += b_cvae;
      ep_hard += b_hard;
      ep_soft += b_soft;
      if (distilling) {
        for (size_t j = 0; j < B; ++j) omega_sum += verified[j].omega;
        dkd_total += dkd_batch;
      }
      ++n_batches;
    }

    ep_cvae /= n_batches;
    ep_hard /= n_batches;
    ep_soft /= n_batches;

    double dev_acc = 0.0;
    if (!dev.problems.empty()) {
      LatentMode mode =
          model.has_cvae() ? LatentMode::PriorMean : LatentMode::None;
      BeamProvider beams =
          model_beam_provider(model, mode, cfg.seed, cfg.max_decode_len);
      dev_acc = answer_accuracy(beams, dev, dc.beam_k, threads);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss_cvae = ep_cvae;
    rec.loss_hard = ep_hard;
    rec.loss_soft = ep_soft;
    rec.loss_total = ep_cvae + dc.beta * ep_hard + dc.gamma * ep_soft;
    rec.omega_mean =
        distilling ? omega_sum / static_cast<double>(n_train) : 0.0;
    rec.dkd_size = dkd_total;
    rec.dev_answer_acc = dev_acc;
    rec.lr = lr;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    log.records.push_back(rec);

    if (!dir.empty()) {
      RunLog::append_line(at("runlog.jsonl"), rec);
      model.save(at("last"));
    }
    if (dev_acc > best_acc) {
      best_acc = dev_acc;
      best_epoch = epoch;
      best_snapshot = snapshot_params(model.params());
      if (!dir.empty()) model.save(at("best"));
    }
    if (opts.on_epoch) opts.on_epoch(rec);
  }

  if (!best_snapshot.empty()) {
    restore_params(model.params(), best_snapshot);
  } else if (best_epoch >= 0 && !dir.empty() && fs::exists(at("best.ckpt"))) {
    // Resumed run that never improved on the loaded epochs.
    model = Model::load(at("best"));
  }

  TrainResult result{std::move(model), std::move(log), best_epoch,
                     best_acc < 0.0 ? 0.0 : best_acc};
  return result;
}

}  // namespace

std::string RunLog::to_json_line(const EpochRecord& r) {
  json j;
  j["dev_answer_acc"] = r.dev_answer_acc;
  j["dkd_size"] = r.dkd_size;
  j["epoch"] = r.epoch;
  j["loss_cvae"] = r.loss_cvae;
  j["loss_hard"] = r.loss_hard;
  j["loss_soft"] = r.loss_soft;
  j["loss_total"] = r.loss_total;
  j["lr"] = r.lr;
  j["omega_mean"] = r.omega_mean;
  j["wall_seconds"] = r.wall_seconds;
  return j.dump();
}

EpochRecord RunLog::from_json_line(const std::string& line) {
  json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object()) {
    throw FormatError("invalid run-log record: " + line);
  }
  try {
    EpochRecord r;
    r.epoch = j.at("epoch").get<int>();
    r.loss_total = j.at("loss_total").get<double>();
    r.loss_cvae = j.at("loss_cvae").get<double>();
    r.loss_hard = j.at("loss_hard").get<double>();
    r.loss_soft = j.at("loss_soft").get<double>();
    r.omega_mean = j.at("omega_mean").get<double>();
    r.dkd_size = j.at("dkd_size").get<long long>();
    r.dev_answer_acc = j.at("dev_answer_acc").get<double>();
    r.lr = j.at("lr").get<double>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("invalid run-log record: ") + e.what());
  }
}

void RunLog::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write " + path);
  for (const EpochRecord& r : records) out << to_json_line(r) << '\n';
  if (!out) throw FileError("failed writing " + path);
}

RunLog RunLog::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open " + path);
  RunLog log;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      log.records.push_back(from_json_line(line));
    } catch (const Error& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return log;
}

void RunLog::append_line(const std::string& path, const EpochRecord& rec) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw FileError("cannot write " + path);
  out << to_json_line(rec) << '\n';
  if (!out) throw FileError("failed writing " + path);
}

TrainResult pretrain_teacher(const Corpus& train, const Corpus& dev,
                             const TrainConfig& cfg, const TrainOptions& opts) {
  Model model(ModelConfig::from_corpus(train, cfg, /*use_cvae=*/false),
              cfg.seed);
  return run_training(std::move(model), nullptr, train, dev, cfg, opts);
}

TrainResult train_student(const Corpus& train, const Corpus& dev,
                          Model& teacher, const TrainConfig& cfg,
                          const TrainOptions& opts) {
  Model model(ModelConfig::from_corpus(train, cfg, cfg.use_cvae), cfg.seed);
  return run_training(std::move(model), &teacher, train, dev, cfg, opts);
}

}  // namespace divkd
