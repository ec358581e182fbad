// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Everything here goes through the C interface in
// divkd.h; the binary holds no pipeline logic of its own beyond flag
// plumbing, corpus splitting choices, and file placement.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "divkd.h"

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitDivergence = 4;

int exit_code_for(divkd_status s) {
  switch (s) {
    case DIVKD_OK:
      return 0;
    case DIVKD_ERR_INVALID_ARGUMENT:
    case DIVKD_ERR_CONFIG:
      return kExitUsage;
    case DIVKD_ERR_DIVERGENCE:
      return kExitDivergence;
    case DIVKD_ERR_INTERNAL:
      return 1;
    default:
      return kExitData;
  }
}

void check(divkd_status s) {
  if (s != DIVKD_OK) {
    std::cerr << "error: " << divkd_last_error() << "\n";
    std::exit(exit_code_for(s));
  }
}

struct CorpusHandle {
  divkd_corpus* p = nullptr;
  ~CorpusHandle() { divkd_corpus_destroy(p); }
};
struct ModelHandle {
  divkd_model* p = nullptr;
  ~ModelHandle() { divkd_model_destroy(p); }
};
struct ConfigHandle {
  divkd_config* p = nullptr;
  ~ConfigHandle() { divkd_config_destroy(p); }
};
struct CString {
  char* p = nullptr;
  ~CString() { divkd_string_destroy(p); }
};

void ensure_parent_dir(const std::string& path) {
  std::filesystem::path parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(parent, ec);
  }
}

void write_file_or_die(const std::string& path, const char* text) {
  ensure_parent_dir(path);
  std::ofstream out(path);
  if (!out || !(out << text)) {
    std::cerr << "error: cannot write " << path << "\n";
    std::exit(kExitData);
  }
}

// Deterministic corpus partitioning shared by the train/eval subcommands.
// The split seed is independent of the training seed so that teacher,
// student and evaluation agree on the partition by default.
struct SplitSpec {
  double train = 0.8;
  double dev = 0.1;
  double test = 0.1;
  uint64_t seed = 42;

  void add_flags(CLI::App* cmd) {
    cmd->add_option("--split-train", train, "Training fraction")
        ->capture_default_str();
    cmd->add_option("--split-dev", dev, "Dev fraction")->capture_default_str();
    cmd->add_option("--split-test", test, "Test fraction")
        ->capture_default_str();
    cmd->add_option("--split-seed", seed, "Partition shuffle seed")
        ->capture_default_str();
  }
};

struct SplitCorpora {
  CorpusHandle train, dev, test;
};

void split_corpus(const CorpusHandle& full, const SplitSpec& spec,
                  SplitCorpora& out) {
  check(divkd_corpus_split(full.p, spec.train, spec.dev, spec.test, spec.seed,
                           &out.train.p, &out.dev.p, &out.test.p));
}

// Hyperparameter overrides: raw strings forwarded to the config layer so
// that parsing and validation live in one place. Flags win over --config.
class ConfigFlags {
 public:
  void add(CLI::App* cmd, const std::string& flag, const std::string& key,
           const std::string& help) {
    auto& slot = values_[key];
    opts_.emplace_back(cmd->add_option(flag, slot, help), key);
  }

  void add_train_flags(CLI::App* cmd) {
    add(cmd, "--seed", "seed", "Training seed");
    add(cmd, "--epochs", "epochs", "Training epochs");
    add(cmd, "--batch-size", "batch_size", "Batch size");
    add(cmd, "--lr", "lr", "Initial learning rate");
    add(cmd, "--lr-halving-period", "lr_halving_period",
        "Epochs between halvings of the learning rate");
    add(cmd, "--hidden-dim", "hidden_dim", "Encoder/decoder hidden width");
    add(cmd, "--embed-dim", "embed_dim", "Embedding width");
    add(cmd, "--latent-dim", "latent_dim", "Latent width");
    add(cmd, "--kl-anneal-epochs", "kl_anneal_epochs",
        "Epochs over which the KL weight ramps to 1");
    add(cmd, "--max-decode-len", "max_decode_len",
        "Maximum decoded equation length");
    add(cmd, "--use-cvae", "use_cvae",
        "Give the student a latent pathway (true/false)");
    add(cmd, "--beam-k", "beam_k", "Beam width");
    add(cmd, "--lambda", "lambda", "Rank attenuation factor");
    add(cmd, "--beta", "beta", "Hard-distillation weight");
    add(cmd, "--gamma", "gamma", "Soft-distillation weight");
    add(cmd, "--tau", "tau", "Soft-distillation temperature");
    add(cmd, "--cache-beams", "cache_beams",
        "Freeze teacher beams after their first computation (true/false)");
    add(cmd, "--soft-kl-teacher-first", "soft_kl_teacher_first",
        "Use KL(teacher || student) instead of KL(student || teacher)");
  }

  void apply(divkd_config* cfg) const {
    for (const auto& [opt, key] : opts_) {
      if (opt->count() > 0) {
        check(divkd_config_set(cfg, key.c_str(), values_.at(key).c_str()));
      }
    }
  }

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::pair<CLI::Option*, std::string>> opts_;
};

void build_config(ConfigHandle& cfg, const std::string& config_file,
                  const ConfigFlags& flags) {
  check(divkd_config_create(&cfg.p));
  if (!config_file.empty()) check(divkd_config_load_file(cfg.p, config_file.c_str()));
  flags.apply(cfg.p);
}

void print_epoch_line(const char* line, void*) {
  std::fputs(line, stdout);
  std::fputc('\n', stdout);
  std::fflush(stdout);
}

int parse_mode(const std::string& name, divkd_model* model) {
  if (name == "none") return DIVKD_MODE_NONE;
  if (name == "prior-mean") return DIVKD_MODE_PRIOR_MEAN;
  if (name == "sampled") return DIVKD_MODE_PRIOR_SAMPLE;
  if (name == "auto") {
    int has = 0;
    check(divkd_model_has_latent(model, &has));
    return has ? DIVKD_MODE_PRIOR_MEAN : DIVKD_MODE_NONE;
  }
  std::cerr << "error: unknown mode '" << name
            << "' (expected none, prior-mean, sampled, auto)\n";
  std::exit(kExitUsage);
}

divkd_corpus* pick_part(const std::string& part, const CorpusHandle& full,
                        SplitCorpora& parts, const SplitSpec& spec) {
  if (part == "all") return full.p;
  split_corpus(full, spec, parts);
  if (part == "train") return parts.train.p;
  if (part == "dev") return parts.dev.p;
  if (part == "test") return parts.test.p;
  std::cerr << "error: unknown part '" << part
            << "' (expected train, dev, test, all)\n";
  std::exit(kExitUsage);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Math-word-problem solver: seq2tree teacher, latent-variable "
               "student, adaptive distillation"};
  app.set_version_flag("--version", divkd_version());
  app.require_subcommand(1);

  // ----- gen-corpus ---------------------------------------------------------
  auto* gen = app.add_subcommand("gen-corpus",
                                 "Generate a synthetic training corpus");
  int gen_n = 2000;
  uint64_t gen_seed = 1;
  std::string gen_out;
  gen->add_option("--n", gen_n, "Number of problems")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Generator seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Output corpus path (JSON lines)")
      ->required();
  gen->callback([&] {
    CorpusHandle c;
    check(divkd_corpus_generate(gen_n, gen_seed, &c.p));
    ensure_parent_dir(gen_out);
    check(divkd_corpus_save(c.p, gen_out.c_str()));
    size_t n = 0;
    check(divkd_corpus_size(c.p, &n));
    std::cout << "wrote " << n << " problems to " << gen_out << "\n";
  });

  // ----- ingest -------------------------------------------------------------
  auto* ing = app.add_subcommand(
      "ingest", "Convert raw problem records into the canonical corpus format");
  std::string ing_in, ing_out;
  ing->add_option("--in", ing_in, "Raw JSON-lines source")->required();
  ing->add_option("--out", ing_out, "Output corpus path")->required();
  ing->callback([&] {
    CorpusHandle c;
    CString report;
    check(divkd_corpus_ingest(ing_in.c_str(), &c.p, &report.p));
    ensure_parent_dir(ing_out);
    check(divkd_corpus_save(c.p, ing_out.c_str()));
    if (report.p != nullptr) std::cout << report.p << "\n";
  });

  // ----- train-teacher ------------------------------------------------------
  auto* tt = app.add_subcommand("train-teacher",
                                "Pre-train the base seq2tree model");
  std::string tt_corpus, tt_out_dir, tt_config;
  int tt_threads = 0;
  SplitSpec tt_split;
  ConfigFlags tt_flags;
  tt->add_option("--corpus", tt_corpus, "Corpus path")->required();
  tt->add_option("--out-dir", tt_out_dir, "Run directory")->required();
  tt->add_option("--config", tt_config, "key=value configuration file");
  tt->add_option("--threads", tt_threads,
                 "Worker threads (0 = hardware concurrency)")
      ->capture_default_str();
  tt_split.add_flags(tt);
  tt_flags.add_train_flags(tt);
  tt->callback([&] {
    CorpusHandle full;
    check(divkd_corpus_load(tt_corpus.c_str(), &full.p));
    SplitCorpora parts;
    split_corpus(full, tt_split, parts);
    ConfigHandle cfg;
    build_config(cfg, tt_config, tt_flags);
    check(divkd_train_teacher(parts.train.p, parts.dev.p, cfg.p,
                              tt_out_dir.c_str(), tt_threads, print_epoch_line,
                              nullptr));
    std::cout << "teacher checkpoints in " << tt_out_dir << " (best, last)\n";
  });

  // ----- train-student ------------------------------------------------------
  auto* ts = app.add_subcommand(
      "train-student",
      "Train the latent-variable student against a frozen teacher");
  std::string ts_corpus, ts_out_dir, ts_config, ts_teacher;
  int ts_threads = 0;
  SplitSpec ts_split;
  ConfigFlags ts_flags;
  ts->add_option("--corpus", ts_corpus, "Corpus path")->required();
  ts->add_option("--teacher-checkpoint,--teacher", ts_teacher,
                 "Teacher checkpoint basename (the best/last prefix)")
      ->required();
  ts->add_option("--out-dir", ts_out_dir, "Run directory")->required();
  ts->add_option("--config", ts_config, "key=value configuration file");
  ts->add_option("--threads", ts_threads,
                 "Worker threads (0 = hardware concurrency)")
      ->capture_default_str();
  ts_split.add_flags(ts);
  ts_flags.add_train_flags(ts);
  ts->callback([&] {
    CorpusHandle full;
    check(divkd_corpus_load(ts_corpus.c_str(), &full.p));
    SplitCorpora parts;
    split_corpus(full, ts_split, parts);
    ConfigHandle cfg;
    build_config(cfg, ts_config, ts_flags);
    check(divkd_train_student(parts.train.p, parts.dev.p, ts_teacher.c_str(),
                              cfg.p, ts_out_dir.c_str(), ts_threads,
                              print_epoch_line, nullptr));
    std::cout << "student checkpoints in " << ts_out_dir << " (best, last)\n";
  });

  // ----- eval -----------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "Accuracy and diversity metrics");
  std::string ev_model, ev_corpus, ev_part = "test", ev_mode = "auto", ev_out;
  int ev_beam_k = 5, ev_threads = 0, ev_max_len = 15, ev_samples = 1;
  uint64_t ev_seed = 1;
  SplitSpec ev_split;
  ev->add_option("--model", ev_model, "Checkpoint basename")->required();
  ev->add_option("--corpus", ev_corpus, "Corpus path")->required();
  ev->add_option("--part", ev_part, "train, dev, test or all")
      ->capture_default_str();
  ev->add_option("--mode", ev_mode,
                 "Latent decoding: none, prior-mean, sampled, auto")
      ->capture_default_str();
  ev->add_option("--beam-k", ev_beam_k, "Beam width")->capture_default_str();
  ev->add_option("--samples", ev_samples,
                 "Sampled-mode beams pooled per problem")
      ->capture_default_str();
  ev->add_option("--seed", ev_seed, "Evaluation seed")->capture_default_str();
  ev->add_option("--threads", ev_threads, "Worker threads")
      ->capture_default_str();
  ev->add_option("--max-len", ev_max_len, "Maximum decoded length")
      ->capture_default_str();
  ev->add_option("--out", ev_out, "Also write the report records here");
  ev_split.add_flags(ev);
  ev->callback([&] {
    ModelHandle model;
    check(divkd_model_load(ev_model.c_str(), &model.p));
    CorpusHandle full;
    check(divkd_corpus_load(ev_corpus.c_str(), &full.p));
    SplitCorpora parts;
    divkd_corpus* corpus = pick_part(ev_part, full, parts, ev_split);
    int mode = parse_mode(ev_mode, model.p);
    CString jsonl, table;
    check(divkd_evaluate(model.p, corpus, ev_beam_k, mode, ev_seed, ev_max_len,
                         ev_threads, ev_samples, &jsonl.p, &table.p));
    std::fputs(jsonl.p, stdout);
    std::fputs(table.p, stdout);
    if (!ev_out.empty()) write_file_or_die(ev_out, jsonl.p);
  });

  // ----- dump-beams / distill-labels -----------------------------------------
  struct DumpFlags {
    std::string model, corpus, part = "all", mode = "auto", out;
    int beam_k = 5, threads = 0, max_len = 15;
    uint64_t seed = 1;
    SplitSpec split;
  };
  auto add_dump_flags = [](CLI::App* cmd, DumpFlags& f) {
    cmd->add_option("--model", f.model, "Checkpoint basename")->required();
    cmd->add_option("--corpus", f.corpus, "Corpus path")->required();
    cmd->add_option("--part", f.part, "train, dev, test or all")
        ->capture_default_str();
    cmd->add_option("--mode", f.mode,
                    "Latent decoding: none, prior-mean, sampled, auto")
        ->capture_default_str();
    cmd->add_option("--beam-k", f.beam_k, "Beam width")->capture_default_str();
    cmd->add_option("--seed", f.seed, "Sampling seed")->capture_default_str();
    cmd->add_option("--threads", f.threads, "Worker threads")
        ->capture_default_str();
    cmd->add_option("--max-len", f.max_len, "Maximum decoded length")
        ->capture_default_str();
    cmd->add_option("--out", f.out, "Output path (- for stdout)")
        ->capture_default_str();
    f.split.add_flags(cmd);
  };
  auto run_dump = [](const DumpFlags& f, bool correct_only) {
    ModelHandle model;
    check(divkd_model_load(f.model.c_str(), &model.p));
    CorpusHandle full;
    check(divkd_corpus_load(f.corpus.c_str(), &full.p));
    SplitCorpora parts;
    SplitSpec split_copy = f.split;
    divkd_corpus* corpus = pick_part(f.part, full, parts, split_copy);
    int mode = parse_mode(f.mode, model.p);
    CString jsonl;
    check(divkd_dump_beams(model.p, corpus, f.beam_k, mode, f.seed, f.max_len,
                           f.threads, correct_only ? 1 : 0, &jsonl.p));
    if (f.out.empty() || f.out == "-") {
      std::fputs(jsonl.p, stdout);
    } else {
      write_file_or_die(f.out, jsonl.p);
    }
  };

  auto* db = app.add_subcommand(
      "dump-beams", "Write every beam entry with its verification verdict");
  auto db_flags = std::make_shared<DumpFlags>();
  add_dump_flags(db, *db_flags);
  db->callback([db_flags, run_dump] { run_dump(*db_flags, false); });

  auto* dl = app.add_subcommand(
      "distill-labels",
      "Write answer-verified beam equations (the distilled label export)");
  auto dl_flags = std::make_shared<DumpFlags>();
  add_dump_flags(dl, *dl_flags);
  dl->callback([dl_flags, run_dump] { run_dump(*dl_flags, true); });

  // ----- inspect --------------------------------------------------------------
  auto* ins = app.add_subcommand(
      "inspect", "Side-by-side view of one problem and its verified beam");
  std::string in_model, in_corpus, in_id, in_mode = "auto";
  int in_beam_k = 5, in_max_len = 15;
  uint64_t in_seed = 1;
  ins->add_option("--model", in_model, "Checkpoint basename")->required();
  ins->add_option("--corpus", in_corpus, "Corpus path")->required();
  ins->add_option("--id", in_id, "Problem id")->required();
  ins->add_option("--mode", in_mode,
                  "Latent decoding: none, prior-mean, sampled, auto")
      ->capture_default_str();
  ins->add_option("--beam-k", in_beam_k, "Beam width")->capture_default_str();
  ins->add_option("--seed", in_seed, "Sampling seed")->capture_default_str();
  ins->add_option("--max-len", in_max_len, "Maximum decoded length")
      ->capture_default_str();
  ins->callback([&] {
    ModelHandle model;
    check(divkd_model_load(in_model.c_str(), &model.p));
    CorpusHandle corpus;
    check(divkd_corpus_load(in_corpus.c_str(), &corpus.p));
    int mode = parse_mode(in_mode, model.p);
    CString text;
    check(divkd_inspect(model.p, corpus.p, in_id.c_str(), in_beam_k, mode,
                        in_seed, in_max_len, &text.p));
    std::fputs(text.p, stdout);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  return 0;
}
