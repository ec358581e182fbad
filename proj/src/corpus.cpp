// SPDX-License-Identifier: Apache-2.0

#include "divkd/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace divkd {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Vocab
// ---------------------------------------------------------------------------

Vocab::Vocab() { add(kUnknown); }

int Vocab::add(const std::string& token) {
  auto [it, inserted] = to_id_.try_emplace(token, size());
  if (inserted) to_token_.push_back(token);
  return it->second;
}

int Vocab::id(const std::string& token) const {
  auto it = to_id_.find(token);
  return it == to_id_.end() ? -1 : it->second;
}

int Vocab::id_or_unk(const std::string& token) const {
  int i = id(token);
  return i < 0 ? 0 : i;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) {
    throw VocabError("token id " + std::to_string(id) + " out of range");
  }
  return to_token_[static_cast<size_t>(id)];
}

const char* split_name(SplitTag tag) {
  switch (tag) {
    case SplitTag::Train: return "train";
    case SplitTag::Dev: return "dev";
    case SplitTag::Test: return "test";
  }
  return "unknown";
}

int max_quantity_count(const Corpus& corpus) {
  size_t m = 0;
  for (const Problem& p : corpus.problems) {
    m = std::max(m, p.quantities.size());
  }
  return static_cast<int>(m);
}

void check_problem_invariants(const Problem& p) {
  for (const EqToken& t : p.gold_equation.tokens) {
    if (t.kind == EqToken::Kind::Quantity &&
        (t.quantity < 0 ||
         static_cast<size_t>(t.quantity) >= p.quantities.size())) {
      throw FormatError("problem " + p.id + ": quantity slot N" +
                        std::to_string(t.quantity) + " out of range");
    }
  }
  EvalOutcome out = evaluate(p.gold_equation, p.quantities);
  if (!out.ok()) {
    throw FormatError("problem " + p.id + ": gold equation defect: " +
                      defect_name(out.defect));
  }
  if (!answers_match(out.value, p.gold_answer)) {
    throw FormatError("problem " + p.id +
                      ": gold equation evaluates to " + format_double(out.value) +
                      ", stated answer is " + format_double(p.gold_answer));
  }
}

// ---------------------------------------------------------------------------
// Number-token recognition and slot mapping
// ---------------------------------------------------------------------------

namespace {

std::optional<double> parse_plain_number(std::string_view s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace

std::optional<double> parse_number_token(std::string_view token) {
  if (token.empty()) return std::nullopt;
  if (token.back() == '%') {
    auto v = parse_plain_number(token.substr(0, token.size() - 1));
    if (v) return *v / 100.0;
    return std::nullopt;
  }
  if (token.front() == '(' && token.back() == ')') {
    std::string_view inner = token.substr(1, token.size() - 2);
    size_t slash = inner.find('/');
    if (slash != std::string_view::npos) {
      auto num = parse_plain_number(inner.substr(0, slash));
      auto den = parse_plain_number(inner.substr(slash + 1));
      if (num && den && std::fabs(*den) >= 1e-12) return *num / *den;
    }
    return std::nullopt;
  }
  return parse_plain_number(token);
}

std::pair<std::vector<std::string>, std::vector<double>> map_number_tokens(
    const std::vector<std::string>& raw_tokens) {
  std::vector<std::string> tokens;
  std::vector<double> quantities;
  tokens.reserve(raw_tokens.size());
  for (const std::string& tok : raw_tokens) {
    if (auto v = parse_number_token(tok)) {
      tokens.push_back("N" + std::to_string(quantities.size()));
      quantities.push_back(*v);
    } else {
      tokens.push_back(tok);
    }
  }
  return {std::move(tokens), std::move(quantities)};
}

std::vector<std::string> realize_tokens(const Problem& p) {
  std::vector<std::string> out;
  out.reserve(p.tokens.size());
  for (const std::string& tok : p.tokens) {
    bool is_slot = tok.size() >= 2 && tok[0] == 'N' &&
                   std::all_of(tok.begin() + 1, tok.end(), [](char c) {
                     return std::isdigit(static_cast<unsigned char>(c));
                   });
    if (is_slot) {
      size_t idx = std::stoul(tok.substr(1));
      if (idx < p.quantities.size()) {
        out.push_back(format_double(p.quantities[idx]));
        continue;
      }
    }
    out.push_back(tok);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Math23K ingestion
// ---------------------------------------------------------------------------

size_t IngestReport::total_dropped() const {
  size_t n = 0;
  for (const auto& [reason, count] : dropped) n += count;
  return n;
}

std::string IngestReport::summary() const {
  std::ostringstream os;
  os << "kept " << kept << "/" << total_records << " records";
  if (!dropped.empty()) {
    os << " (dropped:";
    for (const auto& [reason, count] : dropped) {
      os << ' ' << reason << '=' << count;
    }
    os << ')';
  }
  return os.str();
}

const ConstantMap& default_ingest_constants() {
  static const ConstantMap kConstants = {{"1", 1.0}, {"3.14", 3.14}};
  return kConstants;
}

namespace {

bool near_equal(double a, double b) {
  return std::fabs(a - b) <= 1e-9 * std::max({1.0, std::fabs(a), std::fabs(b)});
}

bool number_boundary(char c) {
  return !(std::isdigit(static_cast<unsigned char>(c)) || c == '.' ||
           c == '%');
}

// Rewrites every occurrence of a text number's original spelling into its
// slot token, longest spellings first so "12" is never clipped by "1" or
// "2". Occurrences embedded inside a longer literal are left alone.
std::string substitute_slots(const std::string& equation,
                             const std::vector<std::string>& spellings,
                             const std::vector<int>& slots) {
  std::vector<size_t> order(spellings.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return spellings[a].size() > spellings[b].size();
  });
  std::string out;
  size_t i = 0;
  while (i < equation.size()) {
    bool matched = false;
    for (size_t oi : order) {
      const std::string& sp = spellings[oi];
      if (sp.empty() || equation.compare(i, sp.size(), sp) != 0) continue;
      if (i > 0 && !number_boundary(equation[i - 1])) continue;
      size_t end = i + sp.size();
      if (end < equation.size() && !number_boundary(equation[end])) continue;
      out += " N" + std::to_string(slots[oi]) + " ";
      i = end;
      matched = true;
      break;
    }
    if (!matched) out += equation[i++];
  }
  return out;
}

std::string json_to_string(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number()) return format_double(v.get<double>());
  throw FormatError("field is neither string nor number");
}

std::vector<std::string> split_whitespace(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string word;
  while (is >> word) out.push_back(word);
  return out;
}

// Renumbers ids densely, interns every token and collects the constants the
// gold equations actually use.
void finalize_corpus(Corpus& corpus) {
  corpus.constants.clear();
  for (size_t i = 0; i < corpus.problems.size(); ++i) {
    Problem& p = corpus.problems[i];
    p.id = std::to_string(i);
    for (const std::string& tok : p.tokens) corpus.vocab.add(tok);
    for (const EqToken& t : p.gold_equation.tokens) {
      if (t.kind == EqToken::Kind::Constant) {
        corpus.constants.emplace(t.name, t.value);
      }
    }
  }
}

}  // namespace

Corpus ingest_math23k(const std::string& path, IngestReport* report,
                      const ConstantMap& constants) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open " + path);

  IngestReport local;
  IngestReport& rep = report ? *report : local;
  rep = IngestReport{};

  auto drop = [&rep](const char* reason) { ++rep.dropped[reason]; };

  Corpus corpus;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    ++rep.total_records;

    json rec = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (rec.is_discarded() || !rec.is_object() || !rec.contains("id") ||
        !rec.contains("segmented_text") || !rec.contains("equation") ||
        !rec.contains("ans")) {
      drop("bad_json");
      continue;
    }

    Problem p;
    std::string equation;
    std::string ans;
    try {
      p.id = json_to_string(rec["id"]);
      equation = rec["equation"].get<std::string>();
      ans = json_to_string(rec["ans"]);
      std::vector<std::string> raw =
          split_whitespace(rec["segmented_text"].get<std::string>());
      auto [tokens, quantities] = map_number_tokens(raw);
      p.tokens = std::move(tokens);
      p.quantities = std::move(quantities);
    } catch (const std::exception&) {
      drop("bad_json");
      continue;
    }

    auto answer = parse_number_token(ans);
    if (!answer) {
      drop("bad_answer");
      continue;
    }
    p.gold_answer = *answer;

    // Strip the "x=" head, then rewrite text-number spellings into slots.
    size_t eq_start = equation.find('=');
    if (eq_start != std::string::npos && eq_start <= 2) {
      equation.erase(0, eq_start + 1);
    }
    std::vector<std::string> spellings;
    std::vector<int> slots;
    {
      std::vector<std::string> raw =
          split_whitespace(rec["segmented_text"].get<std::string>());
      int slot = 0;
      for (const std::string& tok : raw) {
        if (parse_number_token(tok)) {
          // Duplicated spellings resolve to their first slot.
          if (std::find(spellings.begin(), spellings.end(), tok) ==
              spellings.end()) {
            spellings.push_back(tok);
            slots.push_back(slot);
          }
          ++slot;
        }
      }
    }
    equation = substitute_slots(equation, spellings, slots);

    try {
      p.gold_equation = infix_to_prefix(equation);
    } catch (const ParseError&) {
      drop("bad_equation");
      continue;
    }

    // Numbers still left in the equation either match a quantity by value
    // (spelling variants like "8.0") or come from the constant list.
    bool unmapped = false;
    for (EqToken& t : p.gold_equation.tokens) {
      if (t.kind != EqToken::Kind::Constant) continue;
      bool resolved = false;
      for (size_t qi = 0; qi < p.quantities.size() && !resolved; ++qi) {
        if (near_equal(t.value, p.quantities[qi])) {
          t = EqToken::make_quantity(static_cast<int>(qi));
          resolved = true;
        }
      }
      if (resolved) continue;
      for (const auto& [name, value] : constants) {
        if (near_equal(t.value, value)) {
          t = EqToken::make_constant(name, value);
          resolved = true;
          break;
        }
      }
      if (!resolved) {
        unmapped = true;
        break;
      }
    }
    if (unmapped) {
      drop("unmapped_number");
      continue;
    }

    EvalOutcome out = evaluate(p.gold_equation, p.quantities);
    if (!out.ok()) {
      drop("eval_defect");
      continue;
    }
    if (!answers_match(out.value, p.gold_answer)) {
      drop("answer_mismatch");
      continue;
    }

    corpus.problems.push_back(std::move(p));
    ++rep.kept;
  }

  finalize_corpus(corpus);
  return corpus;
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

const TemplateSet& default_toy_templates() {
  // Order matters: templates are cycled, and all but the final one admit
  // multiple correct equations (commutativity/distributivity), which keeps
  // every prefix of the corpus mostly multi-solution.
  static const TemplateSet kTemplates = {
      {"a+b", 2,
       {{{"w00", "w01", "N0", "w02", "N1", "w03", "w04"}, {0, 1}, "+ N0 N1"},
        {{"w05", "N0", "w06", "N1", "w01", "w07"}, {1, 0}, "+ N1 N0"}}},
      {"a*b", 2,
       {{{"w08", "w09", "N0", "w10", "N1", "w11"}, {0, 1}, "* N0 N1"},
        {{"w12", "N0", "w13", "N1", "w09", "w14"}, {1, 0}, "* N1 N0"}}},
      {"a*(b+c)", 3,
       {{{"w15", "N0", "w16", "N1", "w17", "N2", "w18", "w19"},
         {0, 1, 2},
         "* N0 + N1 N2"},
        {{"w20", "N0", "w21", "N1", "w22", "N2", "w16", "w23"},
         {1, 2, 0},
         "* N2 + N0 N1"}}},
      {"a*b+a*c", 3,
       {{{"w24", "N0", "w25", "N1", "w26", "N2", "w27"},
         {0, 1, 2},
         "+ * N0 N1 * N0 N2"},
        {{"w28", "N0", "w29", "N1", "w30", "N2", "w25", "w31"},
         {1, 0, 2},
         "+ * N1 N0 * N1 N2"}}},
      {"(a+b)*c", 3,
       {{{"w32", "N0", "w33", "N1", "w34", "N2", "w35"},
         {0, 1, 2},
         "* + N0 N1 N2"},
        {{"w36", "N0", "w37", "N1", "w38", "N2", "w33", "w39"},
         {2, 0, 1},
         "* + N1 N2 N0"}}},
      {"a-b", 2,
       {{{"w40", "w41", "N0", "w42", "N1", "w43"}, {0, 1}, "- N0 N1"},
        {{"w44", "N0", "w45", "N1", "w46", "w47"}, {1, 0}, "- N1 N0"}}},
  };
  return kTemplates;
}

Corpus generate_toy_corpus(int n_problems, uint64_t seed,
                           const TemplateSet& templates) {
  if (n_problems <= 0) throw ConfigError("n_problems must be positive");
  if (templates.empty()) throw ConfigError("template set is empty");

  Corpus corpus;
  corpus.problems.reserve(static_cast<size_t>(n_problems));
  for (int i = 0; i < n_problems; ++i) {
    const ToyTemplate& tmpl = templates[static_cast<size_t>(i) % templates.size()];
    Rng rng = Rng::derive(seed, "toy-problem", static_cast<uint64_t>(i));

    const auto& variant =
        tmpl.variants[rng.next_below(tmpl.variants.size())];

    // Operand values are small integers; subtraction operands are ordered
    // so answers stay nonnegative.
    std::vector<double> values(static_cast<size_t>(tmpl.n_operands));
    for (double& v : values) v = 2.0 + static_cast<double>(rng.next_below(11));
    if (tmpl.name == "a-b" && values[0] < values[1]) {
      std::swap(values[0], values[1]);
    }

    Problem p;
    p.id = std::to_string(i);
    p.tokens = variant.tokens;
    p.quantities.reserve(variant.slot_roles.size());
    for (int role : variant.slot_roles) {
      p.quantities.push_back(values[static_cast<size_t>(role)]);
    }
    p.gold_equation = parse_prefix_string(variant.gold_prefix);
    EvalOutcome out = evaluate(p.gold_equation, p.quantities);
    p.gold_answer = out.value;
    corpus.problems.push_back(std::move(p));
  }
  finalize_corpus(corpus);
  return corpus;
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

std::tuple<Corpus, Corpus, Corpus> split(const Corpus& corpus,
                                         double train_ratio, double dev_ratio,
                                         double test_ratio, uint64_t seed) {
  if (std::fabs(train_ratio + dev_ratio + test_ratio - 1.0) > 1e-9) {
    throw ConfigError("split ratios must sum to 1");
  }
  if (train_ratio < 0 || dev_ratio < 0 || test_ratio < 0) {
    throw ConfigError("split ratios must be nonnegative");
  }

  std::vector<size_t> order(corpus.problems.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::derive(seed, "split");
  rng.shuffle(order);

  double n = static_cast<double>(order.size());
  size_t n_train = static_cast<size_t>(std::floor(n * train_ratio + 1e-9));
  size_t n_dev = static_cast<size_t>(std::floor(n * dev_ratio + 1e-9));
  n_train = std::min(n_train, order.size());
  n_dev = std::min(n_dev, order.size() - n_train);

  auto take = [&](size_t begin, size_t count, SplitTag tag) {
    Corpus part;
    part.vocab = corpus.vocab;
    part.constants = corpus.constants;
    part.tag = tag;
    part.problems.reserve(count);
    for (size_t k = 0; k < count; ++k) {
      Problem p = corpus.problems[order[begin + k]];
      p.id = std::to_string(k);
      part.problems.push_back(std::move(p));
    }
    return part;
  };

  Corpus train = take(0, n_train, SplitTag::Train);
  Corpus dev = take(n_train, n_dev, SplitTag::Dev);
  Corpus test = take(n_train + n_dev, order.size() - n_train - n_dev,
                     SplitTag::Test);
  return {std::move(train), std::move(dev), std::move(test)};
}

// ---------------------------------------------------------------------------
// Canonical serialization
// ---------------------------------------------------------------------------

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write " + path);
  for (const Problem& p : corpus.problems) {
    json j;
    j["id"] = p.id;
    j["tokens"] = p.tokens;
    j["quantities"] = p.quantities;
    j["equation_prefix"] = to_prefix_string(p.gold_equation);
    j["answer"] = p.gold_answer;
    out << j.dump() << '\n';
  }
  if (!out) throw FileError("failed writing " + path);
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open " + path);

  Corpus corpus;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    try {
      json rec = json::parse(line);
      Problem p;
      p.id = json_to_string(rec.at("id"));
      p.tokens = rec.at("tokens").get<std::vector<std::string>>();
      p.quantities = rec.at("quantities").get<std::vector<double>>();
      p.gold_equation =
          parse_prefix_string(rec.at("equation_prefix").get<std::string>());
      p.gold_answer = rec.at("answer").get<double>();
      check_problem_invariants(p);
      corpus.problems.push_back(std::move(p));
    } catch (const std::exception& e) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": " +
                        e.what());
    }
  }
  finalize_corpus(corpus);
  return corpus;
}

}  // namespace divkd
