// SPDX-License-Identifier: Apache-2.0

#include "divkd/expr.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>

namespace divkd {

char op_symbol(OpCode op) {
  switch (op) {
    case OpCode::Add: return '+';
    case OpCode::Sub: return '-';
    case OpCode::Mul: return '*';
    case OpCode::Div: return '/';
    case OpCode::Pow: return '^';
  }
  return '?';
}

std::optional<OpCode> op_from_symbol(std::string_view s) {
  if (s == "+") return OpCode::Add;
  if (s == "-" || s == "−") return OpCode::Sub;  // U+2212 minus sign
  if (s == "*" || s == "×") return OpCode::Mul;  // U+00D7 multiplication
  if (s == "/" || s == "÷") return OpCode::Div;  // U+00F7 division
  if (s == "^" || s == "**") return OpCode::Pow;
  return std::nullopt;
}

int op_precedence(OpCode op) {
  switch (op) {
    case OpCode::Add:
    case OpCode::Sub: return 1;
    case OpCode::Mul:
    case OpCode::Div: return 2;
    case OpCode::Pow: return 3;
  }
  return 0;
}

bool op_right_assoc(OpCode op) { return op == OpCode::Pow; }

EqToken EqToken::make_op(OpCode op) {
  EqToken t;
  t.kind = Kind::Op;
  t.op = op;
  return t;
}

EqToken EqToken::make_quantity(int index) {
  EqToken t;
  t.kind = Kind::Quantity;
  t.quantity = index;
  return t;
}

EqToken EqToken::make_constant(double value) {
  return make_constant(format_double(value), value);
}

EqToken EqToken::make_constant(std::string name, double value) {
  EqToken t;
  t.kind = Kind::Constant;
  t.name = std::move(name);
  t.value = value;
  return t;
}

bool EqToken::operator==(const EqToken& o) const {
  if (kind != o.kind) return false;
  switch (kind) {
    case Kind::Op: return op == o.op;
    case Kind::Quantity: return quantity == o.quantity;
    case Kind::Constant: return name == o.name && value == o.value;
  }
  return false;
}

const char* defect_name(EvalDefect d) {
  switch (d) {
    case EvalDefect::None: return "none";
    case EvalDefect::DivisionByZero: return "division_by_zero";
    case EvalDefect::Overflow: return "overflow";
    case EvalDefect::InvalidQuantityIndex: return "invalid_quantity_index";
    case EvalDefect::MalformedPrefix: return "malformed_prefix";
  }
  return "unknown";
}

bool validate_prefix(std::span<const EqToken> tokens) {
  if (tokens.empty()) return false;
  // One pending operand to start with; operators add one, operands settle
  // one. The count must stay positive until the final token closes it out.
  long pending = 1;
  for (size_t i = 0; i < tokens.size(); ++i) {
    pending += tokens[i].is_op() ? 1 : -1;
    if (pending == 0) return i + 1 == tokens.size();
    if (pending < 0) return false;
  }
  return false;
}

namespace {

constexpr double kDivEps = 1e-12;

EvalOutcome eval_subtree(const std::vector<EqToken>& toks, size_t& i,
                         std::span<const double> quantities,
                         const ConstantMap& constants) {
  const EqToken& t = toks[i++];
  switch (t.kind) {
    case EqToken::Kind::Quantity: {
      if (t.quantity < 0 ||
          static_cast<size_t>(t.quantity) >= quantities.size()) {
        return EvalOutcome::bad(EvalDefect::InvalidQuantityIndex);
      }
      return EvalOutcome::good(quantities[static_cast<size_t>(t.quantity)]);
    }
    case EqToken::Kind::Constant: {
      auto it = constants.find(t.name);
      return EvalOutcome::good(it != constants.end() ? it->second : t.value);
    }
    case EqToken::Kind::Op: {
      EvalOutcome lhs = eval_subtree(toks, i, quantities, constants);
      if (!lhs.ok()) return lhs;
      EvalOutcome rhs = eval_subtree(toks, i, quantities, constants);
      if (!rhs.ok()) return rhs;
      double v = 0.0;
      switch (t.op) {
        case OpCode::Add: v = lhs.value + rhs.value; break;
        case OpCode::Sub: v = lhs.value - rhs.value; break;
        case OpCode::Mul: v = lhs.value * rhs.value; break;
        case OpCode::Div:
          if (std::fabs(rhs.value) < kDivEps) {
            return EvalOutcome::bad(EvalDefect::DivisionByZero);
          }
          v = lhs.value / rhs.value;
          break;
        case OpCode::Pow: v = std::pow(lhs.value, rhs.value); break;
      }
      if (!std::isfinite(v)) return EvalOutcome::bad(EvalDefect::Overflow);
      return EvalOutcome::good(v);
    }
  }
  return EvalOutcome::bad(EvalDefect::MalformedPrefix);
}

}  // namespace

EvalOutcome evaluate(const Equation& eq, std::span<const double> quantities,
                     const ConstantMap& constants) {
  if (!validate_prefix(eq.tokens)) {
    return EvalOutcome::bad(EvalDefect::MalformedPrefix);
  }
  size_t i = 0;
  return eval_subtree(eq.tokens, i, quantities, constants);
}

bool answers_match(double predicted, double gold) {
  double scale = std::max({1.0, std::fabs(predicted), std::fabs(gold)});
  return std::fabs(predicted - gold) <= kAnswerRelTol * scale;
}

// ---------------------------------------------------------------------------
// Infix parsing
// ---------------------------------------------------------------------------

namespace {

struct LexTok {
  enum class Kind { Number, Quantity, Op, LParen, RParen, End };
  Kind kind = Kind::End;
  OpCode op = OpCode::Add;
  double value = 0.0;
  int quantity = 0;
  size_t offset = 0;
};

class Lexer {
 public:
  explicit Lexer(std::string_view text) : text_(text) { tokenize(); }

  const std::vector<LexTok>& tokens() const { return toks_; }

 private:
  void tokenize() {
    size_t i = 0;
    while (i < text_.size()) {
      char c = text_[i];
      if (std::isspace(static_cast<unsigned char>(c))) {
        ++i;
        continue;
      }
      if (c == '(') {
        toks_.push_back({LexTok::Kind::LParen, OpCode::Add, 0.0, 0, i});
        ++i;
        continue;
      }
      if (c == ')') {
        toks_.push_back({LexTok::Kind::RParen, OpCode::Add, 0.0, 0, i});
        ++i;
        continue;
      }
      if (c == 'N' && i + 1 < text_.size() &&
          std::isdigit(static_cast<unsigned char>(text_[i + 1]))) {
        size_t j = i + 1;
        int idx = 0;
        while (j < text_.size() &&
               std::isdigit(static_cast<unsigned char>(text_[j]))) {
          idx = idx * 10 + (text_[j] - '0');
          ++j;
        }
        toks_.push_back({LexTok::Kind::Quantity, OpCode::Add, 0.0, idx, i});
        i = j;
        continue;
      }
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(text_.data() + i,
                                         text_.data() + text_.size(), v);
        if (ec != std::errc()) {
          throw ParseError("invalid number", i);
        }
        size_t j = static_cast<size_t>(ptr - text_.data());
        if (j < text_.size() && text_[j] == '%') {
          v /= 100.0;  // "12%" is the literal 0.12
          ++j;
        }
        toks_.push_back({LexTok::Kind::Number, OpCode::Add, v, 0, i});
        i = j;
        continue;
      }
      if (auto op = match_operator(i)) {
        toks_.push_back({LexTok::Kind::Op, *op, 0.0, 0, i});
        continue;  // match_operator advanced i
      }
      throw ParseError("unexpected character", i);
    }
    toks_.push_back({LexTok::Kind::End, OpCode::Add, 0.0, 0, text_.size()});
  }

  // Matches one operator spelling at i and advances past it, accepting the
  // unicode multiplication/division/minus signs and "**" for power.
  std::optional<OpCode> match_operator(size_t& i) {
    static constexpr std::array<std::pair<std::string_view, OpCode>, 9> kOps =
        {{{"**", OpCode::Pow},
          {"+", OpCode::Add},
          {"-", OpCode::Sub},
          {"−", OpCode::Sub},
          {"*", OpCode::Mul},
          {"×", OpCode::Mul},
          {"/", OpCode::Div},
          {"÷", OpCode::Div},
          {"^", OpCode::Pow}}};
    for (const auto& [spelling, op] : kOps) {
      if (text_.substr(i, spelling.size()) == spelling) {
        i += spelling.size();
        return op;
      }
    }
    return std::nullopt;
  }

  std::string_view text_;
  std::vector<LexTok> toks_;
};

class InfixParser {
 public:
  explicit InfixParser(std::string_view text) : lexer_(text) {}

  Equation parse() {
    Equation eq;
    parse_expr(0, eq.tokens);
    const LexTok& t = peek();
    if (t.kind != LexTok::Kind::End) {
      throw ParseError("unexpected trailing input", t.offset);
    }
    return eq;
  }

 private:
  const LexTok& peek() const { return lexer_.tokens()[pos_]; }
  const LexTok& advance() { return lexer_.tokens()[pos_++]; }

  // Precedence climbing; emits the subexpression in prefix order into `out`.
  void parse_expr(int min_prec, std::vector<EqToken>& out) {
    std::vector<EqToken> lhs;
    parse_primary(lhs);
    while (peek().kind == LexTok::Kind::Op) {
      OpCode op = peek().op;
      int prec = op_precedence(op);
      if (prec < min_prec) break;
      advance();
      std::vector<EqToken> rhs;
      parse_expr(op_right_assoc(op) ? prec : prec + 1, rhs);
      std::vector<EqToken> combined;
      combined.reserve(1 + lhs.size() + rhs.size());
      combined.push_back(EqToken::make_op(op));
      combined.insert(combined.end(), lhs.begin(), lhs.end());
      combined.insert(combined.end(), rhs.begin(), rhs.end());
      lhs = std::move(combined);
    }
    out.insert(out.end(), lhs.begin(), lhs.end());
  }

  void parse_primary(std::vector<EqToken>& out) {
    const LexTok& t = advance();
    switch (t.kind) {
      case LexTok::Kind::Number:
        out.push_back(EqToken::make_constant(t.value));
        return;
      case LexTok::Kind::Quantity:
        out.push_back(EqToken::make_quantity(t.quantity));
        return;
      case LexTok::Kind::LParen: {
        parse_expr(0, out);
        const LexTok& close = advance();
        if (close.kind != LexTok::Kind::RParen) {
          throw ParseError("expected ')'", close.offset);
        }
        return;
      }
      case LexTok::Kind::Op:
        // A leading minus binds to an immediately following number literal;
        // there is no general unary operator in this grammar.
        if (t.op == OpCode::Sub && peek().kind == LexTok::Kind::Number) {
          out.push_back(EqToken::make_constant(-advance().value));
          return;
        }
        throw ParseError("expected operand", t.offset);
      default:
        throw ParseError("unexpected end of input", t.offset);
    }
  }

  Lexer lexer_;
  size_t pos_ = 0;
};

}  // namespace

Equation infix_to_prefix(std::string_view text) {
  return InfixParser(text).parse();
}

namespace {

struct Rendered {
  std::string text;
  bool is_op = false;
  OpCode op = OpCode::Add;
};

Rendered render_subtree(const std::vector<EqToken>& toks, size_t& i) {
  const EqToken& t = toks[i++];
  switch (t.kind) {
    case EqToken::Kind::Quantity:
      return {"N" + std::to_string(t.quantity), false, OpCode::Add};
    case EqToken::Kind::Constant:
      return {t.name, false, OpCode::Add};
    case EqToken::Kind::Op: {
      Rendered lhs = render_subtree(toks, i);
      Rendered rhs = render_subtree(toks, i);
      int prec = op_precedence(t.op);
      // Parenthesize exactly when reparsing would otherwise regroup: a
      // same-precedence child on the non-associating side, or any child
      // binding looser than this operator.
      bool wrap_l = lhs.is_op && (op_precedence(lhs.op) < prec ||
                                  (op_precedence(lhs.op) == prec &&
                                   op_right_assoc(t.op)));
      bool wrap_r = rhs.is_op && (op_precedence(rhs.op) < prec ||
                                  (op_precedence(rhs.op) == prec &&
                                   !op_right_assoc(t.op)));
      std::string text;
      text += wrap_l ? "(" + lhs.text + ")" : lhs.text;
      text += ' ';
      text += op_symbol(t.op);
      text += ' ';
      text += wrap_r ? "(" + rhs.text + ")" : rhs.text;
      return {std::move(text), true, t.op};
    }
  }
  return {"?", false, OpCode::Add};
}

}  // namespace

std::string render_infix(const Equation& eq) {
  if (!validate_prefix(eq.tokens)) {
    throw FormatError("cannot render malformed prefix expression");
  }
  size_t i = 0;
  return render_subtree(eq.tokens, i).text;
}

std::string to_prefix_string(const Equation& eq) {
  std::string out;
  for (size_t i = 0; i < eq.tokens.size(); ++i) {
    if (i > 0) out += ' ';
    const EqToken& t = eq.tokens[i];
    switch (t.kind) {
      case EqToken::Kind::Op: out += op_symbol(t.op); break;
      case EqToken::Kind::Quantity:
        out += "N" + std::to_string(t.quantity);
        break;
      case EqToken::Kind::Constant: out += t.name; break;
    }
  }
  return out;
}

Equation parse_prefix_string(std::string_view text) {
  Equation eq;
  std::vector<size_t> offsets;
  size_t i = 0;
  while (i < text.size()) {
    if (std::isspace(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    size_t start = i;
    while (i < text.size() &&
           !std::isspace(static_cast<unsigned char>(text[i]))) {
      ++i;
    }
    std::string_view word = text.substr(start, i - start);
    offsets.push_back(start);
    if (auto op = op_from_symbol(word)) {
      eq.tokens.push_back(EqToken::make_op(*op));
      continue;
    }
    if (word.size() >= 2 && word[0] == 'N' &&
        std::isdigit(static_cast<unsigned char>(word[1]))) {
      int idx = 0;
      bool all_digits = true;
      for (size_t k = 1; k < word.size(); ++k) {
        if (!std::isdigit(static_cast<unsigned char>(word[k]))) {
          all_digits = false;
          break;
        }
        idx = idx * 10 + (word[k] - '0');
      }
      if (all_digits) {
        eq.tokens.push_back(EqToken::make_quantity(idx));
        continue;
      }
    }
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(word.data(), word.data() + word.size(), v);
    if (ec != std::errc() || ptr != word.data() + word.size()) {
      throw ParseError("unrecognized token", start);
    }
    eq.tokens.push_back(EqToken::make_constant(std::string(word), v));
  }
  if (eq.tokens.empty()) {
    throw ParseError("empty expression", text.size());
  }
  // Structural check with a pinpointed offset: report the token where the
  // sequence closed early, or the end of input if it never closed.
  long pending = 1;
  for (size_t k = 0; k < eq.tokens.size(); ++k) {
    pending += eq.tokens[k].is_op() ? 1 : -1;
    if (pending == 0 && k + 1 != eq.tokens.size()) {
      throw ParseError("trailing tokens after complete expression",
                       offsets[k + 1]);
    }
  }
  if (pending != 0) {
    throw ParseError("incomplete prefix expression", text.size());
  }
  return eq;
}

// ---------------------------------------------------------------------------
// Exhaustive enumeration
// ---------------------------------------------------------------------------

namespace {

void enumerate_rec(int max_tokens, int n_quantities,
                   const std::vector<EqToken>& constants,
                   std::vector<EqToken>& prefix, long pending,
                   const std::function<void(const Equation&)>& visit) {
  int used = static_cast<int>(prefix.size());
  // Operands first so shorter equations sort ahead of deeper ones.
  for (int q = 0; q < n_quantities; ++q) {
    prefix.push_back(EqToken::make_quantity(q));
    if (pending == 1) {
      visit(Equation{prefix});
    } else {
      enumerate_rec(max_tokens, n_quantities, constants, prefix, pending - 1,
                    visit);
    }
    prefix.pop_back();
  }
  for (const EqToken& c : constants) {
    prefix.push_back(c);
    if (pending == 1) {
      visit(Equation{prefix});
    } else {
      enumerate_rec(max_tokens, n_quantities, constants, prefix, pending - 1,
                    visit);
    }
    prefix.pop_back();
  }
  // An operator leaves pending+1 operands open, each costing at least one
  // more token; prune branches that can no longer finish within budget.
  if (used + static_cast<int>(pending) + 2 > max_tokens) return;
  for (int o = 0; o < kNumOperators; ++o) {
    prefix.push_back(EqToken::make_op(static_cast<OpCode>(o)));
    enumerate_rec(max_tokens, n_quantities, constants, prefix, pending + 1,
                  visit);
    prefix.pop_back();
  }
}

}  // namespace

void enumerate_equations(int max_tokens, int n_quantities,
                         const std::vector<EqToken>& constants,
                         const std::function<void(const Equation&)>& visit) {
  if (max_tokens < 1 || (n_quantities <= 0 && constants.empty())) return;
  std::vector<EqToken> prefix;
  prefix.reserve(static_cast<size_t>(max_tokens));
  enumerate_rec(max_tokens, n_quantities, constants, prefix, 1, visit);
}

std::vector<Equation> enumerate_equations(int max_tokens, int n_quantities,
                                          const std::vector<EqToken>& constants) {
  std::vector<Equation> out;
  enumerate_equations(max_tokens, n_quantities, constants,
                      [&](const Equation& eq) { out.push_back(eq); });
  return out;
}

}  // namespace divkd
