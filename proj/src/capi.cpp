// SPDX-License-Identifier: Apache-2.0

#include "divkd.h"

#include <cstdlib>
#include <cstring>
#include <sstream>
#include <string>
#include <utility>

#include "divkd/config.hpp"
#include "divkd/corpus.hpp"
#include "divkd/distill.hpp"
#include "divkd/metrics.hpp"
#include "divkd/model.hpp"
#include "divkd/train.hpp"

struct divkd_config {
  divkd::TrainConfig cfg;
};

struct divkd_corpus {
  divkd::Corpus corpus;
};

struct divkd_model {
  divkd::Model model;
};

namespace {

thread_local std::string g_last_error;

divkd_status fail(divkd_status s, const std::string& what) {
  g_last_error = what;
  return s;
}

// Runs the body and maps the library's exception taxonomy onto status codes.
template <typename Fn>
divkd_status guard(Fn&& fn) noexcept {
  try {
    fn();
    g_last_error.clear();
    return DIVKD_OK;
  } catch (const divkd::ParseError& e) {
    return fail(DIVKD_ERR_PARSE, e.what());
  } catch (const divkd::FormatError& e) {
    return fail(DIVKD_ERR_FORMAT, e.what());
  } catch (const divkd::FileError& e) {
    return fail(DIVKD_ERR_FILE, e.what());
  } catch (const divkd::VocabError& e) {
    return fail(DIVKD_ERR_VOCAB, e.what());
  } catch (const divkd::CheckpointError& e) {
    return fail(DIVKD_ERR_CHECKPOINT, e.what());
  } catch (const divkd::DivergenceError& e) {
    return fail(DIVKD_ERR_DIVERGENCE, e.what());
  } catch (const divkd::EmptyBeamError& e) {
    return fail(DIVKD_ERR_EMPTY, e.what());
  } catch (const divkd::EmptyCorpusError& e) {
    return fail(DIVKD_ERR_EMPTY, e.what());
  } catch (const divkd::ConfigError& e) {
    return fail(DIVKD_ERR_CONFIG, e.what());
  } catch (const divkd::Error& e) {
    return fail(DIVKD_ERR_INTERNAL, e.what());
  } catch (const std::exception& e) {
    return fail(DIVKD_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(DIVKD_ERR_INTERNAL, "unknown error");
  }
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) return nullptr;
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

divkd_status require(bool ok, const char* what) {
  return ok ? DIVKD_OK : fail(DIVKD_ERR_INVALID_ARGUMENT, what);
}

bool latent_mode_of(int mode, divkd::LatentMode* out) {
  switch (mode) {
    case DIVKD_MODE_NONE:
      *out = divkd::LatentMode::None;
      return true;
    case DIVKD_MODE_PRIOR_MEAN:
      *out = divkd::LatentMode::PriorMean;
      return true;
    case DIVKD_MODE_PRIOR_SAMPLE:
      *out = divkd::LatentMode::PriorSample;
      return true;
    default:
      return false;
  }
}

divkd::TrainOptions make_options(const char* out_dir, int threads,
                                 divkd_epoch_callback on_epoch, void* user) {
  divkd::TrainOptions opts;
  if (out_dir != nullptr && out_dir[0] != '\0') opts.out_dir = out_dir;
  opts.threads = threads;
  if (on_epoch != nullptr) {
    opts.on_epoch = [on_epoch, user](const divkd::EpochRecord& rec) {
      std::string line = divkd::RunLog::to_json_line(rec);
      on_epoch(line.c_str(), user);
    };
  }
  return opts;
}

}  // namespace

extern "C" {

const char* divkd_version(void) { return "1.0.0"; }

const char* divkd_last_error(void) { return g_last_error.c_str(); }

void divkd_string_destroy(char* s) { std::free(s); }

/* ----- configuration ----------------------------------------------------- */

divkd_status divkd_config_create(divkd_config** out) {
  if (divkd_status s = require(out != nullptr, "null output"); s != DIVKD_OK)
    return s;
  return guard([&] { *out = new divkd_config{divkd::TrainConfig{}}; });
}

void divkd_config_destroy(divkd_config* cfg) { delete cfg; }

divkd_status divkd_config_load_file(divkd_config* cfg, const char* path) {
  if (divkd_status s = require(cfg != nullptr && path != nullptr,
                               "null config or path");
      s != DIVKD_OK)
    return s;
  return guard([&] {
    for (const auto& [key, value] : divkd::read_config_file(path)) {
      cfg->cfg.set_key(key, value);
    }
  });
}

divkd_status divkd_config_set(divkd_config* cfg, const char* key,
                              const char* value) {
  if (divkd_status s = require(cfg != nullptr && key != nullptr &&
                                   value != nullptr,
                               "null config, key or value");
      s != DIVKD_OK)
    return s;
  return guard([&] { cfg->cfg.set_key(key, value); });
}

divkd_status divkd_config_to_string(const divkd_config* cfg, char** out) {
  if (divkd_status s = require(cfg != nullptr && out != nullptr,
                               "null config or output");
      s != DIVKD_OK)
    return s;
  return guard([&] { *out = copy_string(cfg->cfg.to_string()); });
}

/* ----- corpus ------------------------------------------------------------ */

divkd_status divkd_corpus_generate(int n, uint64_t seed, divkd_corpus** out) {
  if (divkd_status s = require(out != nullptr, "null output"); s != DIVKD_OK)
    return s;
  return guard(
      [&] { *out = new divkd_corpus{divkd::generate_toy_corpus(n, seed)}; });
}

divkd_status divkd_corpus_ingest(const char* path, divkd_corpus** out,
                                 char** report) {
  if (divkd_status s = require(path != nullptr && out != nullptr,
                               "null path or output");
      s != DIVKD_OK)
    return s;
  return guard([&] {
    divkd::IngestReport rep;
    divkd::Corpus corpus = divkd::ingest_math23k(path, &rep);
    if (report != nullptr) *report = copy_string(rep.summary());
    *out = new divkd_corpus{std::move(corpus)};
  });
}

divkd_status divkd_corpus_load(const char* path, divkd_corpus** out) {
  if (divkd_status s = require(path != nullptr && out != nullptr,
                               "null path or output");
      s != DIVKD_OK)
    return s;
  return guard([&] { *out = new divkd_corpus{divkd::load_corpus(path)}; });
}

divkd_status divkd_corpus_save(const divkd_corpus* corpus, const char* path) {
  if (divkd_status s = require(corpus != nullptr && path != nullptr,
                               "null corpus or path");
      s != DIVKD_OK)
    return s;
  return guard([&] { divkd::save_corpus(corpus->corpus, path); });
}

divkd_status divkd_corpus_split(const divkd_corpus* corpus, double train_ratio,
                                double dev_ratio, double test_ratio,
                                uint64_t seed, divkd_corpus** train,
                                divkd_corpus** dev, divkd_corpus** test) {
  if (divkd_status s = require(corpus != nullptr && train != nullptr &&
                                   dev != nullptr && test != nullptr,
                               "null corpus or output");
      s != DIVKD_OK)
    return s;
  return guard([&] {
    auto [tr, dv, te] = divkd::split(corpus->corpus, train_ratio, dev_ratio,
                                     test_ratio, seed);
    *train = new divkd_corpus{std::move(tr)};
    *dev = new divkd_corpus{std::move(dv)};
    *test = new divkd_corpus{std::move(te)};
  });
}

divkd_status divkd_corpus_size(const divkd_corpus* corpus, size_t* out) {
  if (divkd_status s = require(corpus != nullptr && out != nullptr,
                               "null corpus or output");
      s != DIVKD_OK)
    return s;
  *out = corpus->corpus.problems.size();
  return DIVKD_OK;
}

void divkd_corpus_destroy(divkd_corpus* corpus) { delete corpus; }

/* ----- training ---------------------------------------------------------- */

divkd_status divkd_train_teacher(const divkd_corpus* train,
                                 const divkd_corpus* dev,
                                 const divkd_config* cfg, const char* out_dir,
                                 int threads, divkd_epoch_callback on_epoch,
                                 void* user) {
  if (divkd_status s = require(train != nullptr && dev != nullptr &&
                                   cfg != nullptr,
                               "null corpus or config");
      s != DIVKD_OK)
    return s;
  return guard([&] {
    divkd::pretrain_teacher(train->corpus, dev->corpus, cfg->cfg,
                            make_options(out_dir, threads, on_epoch, user));
  });
}

divkd_status divkd_train_student(const divkd_corpus* train,
                                 const divkd_corpus* dev,
                                 const char* teacher_basename,
                                 const divkd_config* cfg, const char* out_dir,
                                 int threads, divkd_epoch_callback on_epoch,
                                 void* user) {
  if (divkd_status s = require(train != nullptr && dev != nullptr &&
                                   cfg != nullptr && teacher_basename != nullptr,
                               "null corpus, config or teacher checkpoint");
      s != DIVKD_OK)
    return s;
  return guard([&] {
    divkd::Model teacher = divkd::Model::load(teacher_basename);
    divkd::train_student(train->corpus, dev->corpus, teacher, cfg->cfg,
                         make_options(out_dir, threads, on_epoch, user));
  });
}

/* ----- models and evaluation --------------------------------------------- */

divkd_status divkd_model_load(const char* basename, divkd_model** out) {
  if (divkd_status s = require(basename != nullptr && out != nullptr,
                               "null basename or output");
      s != DIVKD_OK)
    return s;
  return guard(
      [&] { *out = new divkd_model{divkd::Model::load(basename)}; });
}

void divkd_model_destroy(divkd_model* model) { delete model; }

divkd_status divkd_model_has_latent(const divkd_model* model, int* out) {
  if (divkd_status s = require(model != nullptr && out != nullptr,
                               "null model or output");
      s != DIVKD_OK)
    return s;
  *out = model->model.has_cvae() ? 1 : 0;
  return DIVKD_OK;
}

divkd_status divkd_evaluate(divkd_model* model, const divkd_corpus* corpus,
                            int beam_k, int mode, uint64_t seed, int max_len,
                            int threads, int samples, char** jsonl_out,
                            char** table_out) {
  if (divkd_status s = require(model != nullptr && corpus != nullptr,
                               "null model or corpus");
      s != DIVKD_OK)
    return s;
  divkd::LatentMode lm;
  if (!latent_mode_of(mode, &lm)) {
    return fail(DIVKD_ERR_INVALID_ARGUMENT, "unknown latent mode");
  }
  return guard([&] {
    divkd::MetricsReport report =
        divkd::evaluate_model(model->model, corpus->corpus, beam_k, lm, seed,
                              max_len, threads, samples);
    if (jsonl_out != nullptr) *jsonl_out = copy_string(report.to_jsonl());
    if (table_out != nullptr) *table_out = copy_string(report.to_table());
  });
}

divkd_status divkd_dump_beams(divkd_model* model, const divkd_corpus* corpus,
                              int beam_k, int mode, uint64_t seed, int max_len,
                              int threads, int correct_only,
                              char** jsonl_out) {
  if (divkd_status s = require(model != nullptr && corpus != nullptr &&
                                   jsonl_out != nullptr,
                               "null model, corpus or output");
      s != DIVKD_OK)
    return s;
  divkd::LatentMode lm;
  if (!latent_mode_of(mode, &lm)) {
    return fail(DIVKD_ERR_INVALID_ARGUMENT, "unknown latent mode");
  }
  return guard([&] {
    const divkd::Corpus& c = corpus->corpus;
    divkd::DistillConfig dc;
    dc.beam_k = beam_k;
    divkd::BeamProvider beams =
        divkd::model_beam_provider(model->model, lm, seed, max_len);
    std::vector<std::string> chunks(c.problems.size());
    divkd::parallel_for(c.problems.size(), threads, [&](size_t i) {
      const divkd::Problem& p = c.problems[i];
      try {
        divkd::VerifiedBeam vb = divkd::verify_beam(beams(p, i, beam_k), p, dc);
        std::ostringstream os;
        divkd::write_beam_dump(os, p, vb, correct_only != 0);
        chunks[i] = os.str();
      } catch (const divkd::EmptyBeamError&) {
        chunks[i].clear();
      }
    });
    std::string all;
    for (const std::string& chunk : chunks) all += chunk;
    *jsonl_out = copy_string(all);
  });
}

divkd_status divkd_inspect(divkd_model* model, const divkd_corpus* corpus,
                           const char* problem_id, int beam_k, int mode,
                           uint64_t seed, int max_len, char** text_out) {
  if (divkd_status s = require(model != nullptr && corpus != nullptr &&
                                   problem_id != nullptr && text_out != nullptr,
                               "null model, corpus, id or output");
      s != DIVKD_OK)
    return s;
  divkd::LatentMode lm;
  if (!latent_mode_of(mode, &lm)) {
    return fail(DIVKD_ERR_INVALID_ARGUMENT, "unknown latent mode");
  }
  return guard([&] {
    const divkd::Corpus& c = corpus->corpus;
    const divkd::Problem* problem = nullptr;
    size_t index = 0;
    for (size_t i = 0; i < c.problems.size(); ++i) {
      if (c.problems[i].id == problem_id) {
        problem = &c.problems[i];
        index = i;
        break;
      }
    }
    if (problem == nullptr) {
      throw divkd::FormatError(std::string("no problem with id ") + problem_id);
    }

    std::ostringstream os;
    os << "problem " << problem->id << "\n";
    os << "text:";
    for (const std::string& tok : problem->tokens) os << ' ' << tok;
    os << "\nquantities:";
    for (double q : problem->quantities) os << ' ' << divkd::format_double(q);
    os << "\ngold: " << divkd::to_prefix_string(problem->gold_equation)
       << "   (" << divkd::render_infix(problem->gold_equation)
       << " = " << divkd::format_double(problem->gold_answer) << ")\n";

    divkd::BeamProvider beams =
        divkd::model_beam_provider(model->model, lm, seed, max_len);
    os << "beam (K=" << beam_k << "):\n";
    try {
      divkd::DistillConfig dc;
      dc.beam_k = beam_k;
      divkd::VerifiedBeam vb =
          divkd::verify_beam(beams(*problem, index, beam_k), *problem, dc);
      for (size_t i = 0; i < vb.beam.entries.size(); ++i) {
        const divkd::BeamEntry& entry = vb.beam.entries[i];
        os << "  rank " << entry.rank << "  score "
           << divkd::format_double(entry.log_score) << "  "
           << divkd::to_prefix_string(entry.equation) << "  -> ";
        if (vb.values[i].defect == divkd::EvalDefect::None) {
          os << divkd::format_double(vb.values[i].value);
        } else {
          os << "(defect)";
        }
        os << (vb.correct[i] ? "  correct" : "  wrong") << "\n";
      }
      os << "omega: " << divkd::format_double(vb.omega) << "\n";
    } catch (const divkd::EmptyBeamError&) {
      os << "  (no complete equation within " << max_len << " tokens)\n";
    }
    *text_out = copy_string(os.str());
  });
}

} /* extern "C" */
