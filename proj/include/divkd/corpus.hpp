// SPDX-License-Identifier: Apache-2.0
//
// Dataset model: problems with slot-mapped quantities, Math23K-format
// ingestion, a deterministic synthetic-corpus generator, splitting and the
// canonical line-delimited JSON serialization.
#ifndef DIVKD_CORPUS_HPP
#define DIVKD_CORPUS_HPP

#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "divkd/expr.hpp"

namespace divkd {

// Token string interning. Id 0 is always the unknown-token sentinel so that
// models trained on one corpus can encode text containing unseen words.
class Vocab {
 public:
  Vocab();

  int add(const std::string& token);          // existing id if present
  int id(const std::string& token) const;     // -1 if absent
  int id_or_unk(const std::string& token) const;
  const std::string& token(int id) const;     // VocabError if out of range
  int size() const { return static_cast<int>(to_token_.size()); }

  const std::vector<std::string>& tokens() const { return to_token_; }

  static constexpr const char* kUnknown = "<unk>";

 private:
  std::unordered_map<std::string, int> to_id_;
  std::vector<std::string> to_token_;
};

struct Problem {
  std::string id;
  std::vector<std::string> tokens;  // number literals replaced by "N<i>"
  std::vector<double> quantities;   // value of slot N<i>
  Equation gold_equation;           // prefix, over slots and constants
  double gold_answer = 0.0;
};

enum class SplitTag { Train, Dev, Test };
const char* split_name(SplitTag tag);

struct Corpus {
  std::vector<Problem> problems;
  Vocab vocab;             // covers every token occurring in problems
  ConstantMap constants;   // constants referenced by gold equations
  SplitTag tag = SplitTag::Train;

  size_t size() const { return problems.size(); }
  bool empty() const { return problems.empty(); }
};

// Largest quantity count over all problems (0 for an empty corpus).
int max_quantity_count(const Corpus& corpus);

// Throws FormatError if the problem breaks either invariant: a quantity
// index out of range, or a gold equation that does not reproduce the gold
// answer under answers_match.
void check_problem_invariants(const Problem& p);

// Recognizes a single number-literal token: plain decimals ("7", "3.14"),
// percents ("60%" -> 0.6) and parenthesized fractions ("(3/5)" -> 0.6).
std::optional<double> parse_number_token(std::string_view token);

// Replaces each number-literal token with a fresh slot "N<i>" in order of
// appearance and collects the slot values.
std::pair<std::vector<std::string>, std::vector<double>> map_number_tokens(
    const std::vector<std::string>& raw_tokens);

// Inverse of map_number_tokens for well-formed problems: slots substituted
// by their canonically formatted values.
std::vector<std::string> realize_tokens(const Problem& p);

struct IngestReport {
  size_t total_records = 0;
  size_t kept = 0;
  std::map<std::string, size_t> dropped;  // reason -> count

  size_t total_dropped() const;
  std::string summary() const;  // single human-readable line
};

const ConstantMap& default_ingest_constants();  // {1, 3.14}

// Reads line-delimited records {id, segmented_text, equation: "x=...", ans}.
// Gold equations are rewritten over text slots; numbers absent from the text
// resolve through `constants` (else the record is dropped). Records whose
// equation fails to reproduce the stated answer are dropped, never repaired.
// Throws FileError if the path cannot be read; malformed records are counted
// in the report, not fatal.
Corpus ingest_math23k(const std::string& path, IngestReport* report = nullptr,
                      const ConstantMap& constants = default_ingest_constants());

// Synthetic generator. Each template is a semantic formula with surface
// variants; a variant fixes the order in which the formula's operands appear
// in the text (slot_roles[i] = operand index bound to slot N<i>) and the
// gold equation over those slots.
struct ToyTemplate {
  std::string name;  // e.g. "a*(b+c)"
  int n_operands = 2;
  struct Variant {
    std::vector<std::string> tokens;  // pattern; "N<i>" entries are slots
    std::vector<int> slot_roles;
    std::string gold_prefix;
  };
  std::vector<Variant> variants;
};
using TemplateSet = std::vector<ToyTemplate>;

const TemplateSet& default_toy_templates();

// Deterministic in (n_problems, seed, templates); templates are cycled in
// order so every prefix of the corpus keeps the template mix balanced.
Corpus generate_toy_corpus(int n_problems, uint64_t seed,
                           const TemplateSet& templates = default_toy_templates());

// Deterministic shuffle then partition; vocab and constants are shared by
// all three parts. Ratios must sum to 1 (ConfigError otherwise).
std::tuple<Corpus, Corpus, Corpus> split(const Corpus& corpus,
                                         double train_ratio, double dev_ratio,
                                         double test_ratio, uint64_t seed);

// Canonical format: one JSON object per line with fields id, tokens,
// quantities, equation_prefix, answer. Loading rebuilds vocab and constants
// and revalidates every problem invariant.
void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

}  // namespace divkd

#endif
