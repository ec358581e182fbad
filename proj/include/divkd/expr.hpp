// SPDX-License-Identifier: Apache-2.0
//
// Prefix-equation algebra: token model, validation, infix parsing, numeric
// evaluation and exhaustive enumeration. Everything here is pure and
// thread-safe; this module is the ground truth every other component is
// checked against.
#ifndef DIVKD_EXPR_HPP
#define DIVKD_EXPR_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "divkd/common.hpp"

namespace divkd {

enum class OpCode : uint8_t { Add, Sub, Mul, Div, Pow };

inline constexpr int kNumOperators = 5;

// Canonical serialized spelling (+ - * / ^). All five operators are binary.
char op_symbol(OpCode op);
std::optional<OpCode> op_from_symbol(std::string_view s);
int op_precedence(OpCode op);
bool op_right_assoc(OpCode op);

struct EqToken {
  enum class Kind : uint8_t { Op, Quantity, Constant };

  Kind kind = Kind::Constant;
  OpCode op = OpCode::Add;  // Kind::Op
  int quantity = 0;         // Kind::Quantity, index into Problem quantities
  std::string name;         // Kind::Constant, canonical decimal literal
  double value = 0.0;       // Kind::Constant

  static EqToken make_op(OpCode op);
  static EqToken make_quantity(int index);
  static EqToken make_constant(double value);
  static EqToken make_constant(std::string name, double value);

  bool is_op() const { return kind == Kind::Op; }
  bool operator==(const EqToken& o) const;
};

struct Equation {
  std::vector<EqToken> tokens;  // prefix order

  bool operator==(const Equation& o) const { return tokens == o.tokens; }
  size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
};

enum class EvalDefect : uint8_t {
  None,
  DivisionByZero,
  Overflow,
  InvalidQuantityIndex,
  MalformedPrefix,
};

const char* defect_name(EvalDefect d);

struct EvalOutcome {
  double value = 0.0;
  EvalDefect defect = EvalDefect::None;

  bool ok() const { return defect == EvalDefect::None; }
  static EvalOutcome good(double v) { return {v, EvalDefect::None}; }
  static EvalOutcome bad(EvalDefect d) { return {0.0, d}; }
};

using ConstantMap = std::map<std::string, double>;

// True iff the token sequence is a single well-formed prefix expression:
// counter starts at 1, each operator adds one pending operand, each operand
// consumes one, and the counter reaches zero exactly at the last token.
bool validate_prefix(std::span<const EqToken> tokens);

// Numeric evaluation. Never throws: defects are reported through the outcome.
// A divisor with magnitude below 1e-12 is a DivisionByZero defect; any
// non-finite intermediate is Overflow. Constants resolve through `constants`
// when the name is present, else through the token's embedded value.
EvalOutcome evaluate(const Equation& eq, std::span<const double> quantities,
                     const ConstantMap& constants = {});

// |predicted - gold| <= 1e-4 * max(1, |predicted|, |gold|). The symmetric
// form keeps the relation an equivalence-like predicate for testing.
bool answers_match(double predicted, double gold);
inline constexpr double kAnswerRelTol = 1e-4;

// Parses an infix expression over + - * / ^ (unicode x, division sign and
// minus accepted, ** as power), decimal numbers, percent-suffixed numbers
// ("3%" -> 0.03) and quantity slots "N<k>". Precedence ^ > * / > + -, with ^
// right-associative and the rest left-associative. Throws ParseError with
// the character offset of the first bad token.
Equation infix_to_prefix(std::string_view text);

// Fully deterministic inverse of infix_to_prefix: emits the minimal
// parenthesization that reparses to the identical token sequence.
std::string render_infix(const Equation& eq);

// Space-separated serialization, e.g. "* N0 + N1 N2".
std::string to_prefix_string(const Equation& eq);
Equation parse_prefix_string(std::string_view text);

// Visits every prefix-valid equation with at most max_tokens tokens over the
// five operators, quantity slots N0..N{n_quantities-1} and the given
// constants, each exactly once in a fixed deterministic order.
void enumerate_equations(int max_tokens, int n_quantities,
                         const std::vector<EqToken>& constants,
                         const std::function<void(const Equation&)>& visit);
std::vector<Equation> enumerate_equations(int max_tokens, int n_quantities,
                                          const std::vector<EqToken>& constants);

}  // namespace divkd

#endif
