// SPDX-License-Identifier: Apache-2.0
//
// Prefix-equation algebra: validation, evaluation against an independent
// recursive oracle, infix parsing/rendering, serialization round trips and
// exhaustive enumeration counts.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "divkd/common.hpp"
#include "divkd/expr.hpp"

using namespace divkd;

namespace {

// Independent oracle: recursive tree walk, separate from the library's
// stack evaluator. Returns nullopt on any defect.
std::optional<double> oracle_eval(const std::vector<EqToken>& toks, size_t& pos,
                                  const std::vector<double>& q) {
  if (pos >= toks.size()) return std::nullopt;
  const EqToken t = toks[pos++];
  if (t.kind == EqToken::Kind::Quantity) {
    if (t.quantity < 0 || static_cast<size_t>(t.quantity) >= q.size()) {
      return std::nullopt;
    }
    return q[static_cast<size_t>(t.quantity)];
  }
  if (t.kind == EqToken::Kind::Constant) return t.value;
  auto a = oracle_eval(toks, pos, q);
  if (!a) return std::nullopt;
  auto b = oracle_eval(toks, pos, q);
  if (!b) return std::nullopt;
  double r = 0.0;
  switch (t.op) {
    case OpCode::Add: r = *a + *b; break;
    case OpCode::Sub: r = *a - *b; break;
    case OpCode::Mul: r = *a * *b; break;
    case OpCode::Div:
      if (std::fabs(*b) < 1e-12) return std::nullopt;
      r = *a / *b;
      break;
    case OpCode::Pow: r = std::pow(*a, *b); break;
  }
  if (!std::isfinite(r)) return std::nullopt;
  return r;
}

std::optional<double> oracle_eval(const Equation& eq,
                                  const std::vector<double>& q) {
  size_t pos = 0;
  auto v = oracle_eval(eq.tokens, pos, q);
  if (pos != eq.tokens.size()) return std::nullopt;
  return v;
}

Equation pp(const std::string& s) { return parse_prefix_string(s); }

// Closed form for the enumeration size: sum over i internal nodes of
// Catalan(i) * ops^i * leaves^(i+1), for 2i+1 <= max_tokens.
long long expected_enumeration_count(int max_tokens, long long leaves) {
  auto catalan = [](int n) -> long long {
    long long c = 1;
    for (int k = 0; k < n; ++k) c = c * 2 * (2 * k + 1) / (k + 2);
    return c;
  };
  long long total = 0;
  for (int i = 0; 2 * i + 1 <= max_tokens; ++i) {
    long long ops_part = 1;
    for (int k = 0; k < i; ++k) ops_part *= kNumOperators;
    long long leaf_part = 1;
    for (int k = 0; k <= i; ++k) leaf_part *= leaves;
    total += catalan(i) * ops_part * leaf_part;
  }
  return total;
}

}  // namespace

TEST_CASE("operator table") {
  CHECK(op_symbol(OpCode::Add) == '+');
  CHECK(op_symbol(OpCode::Sub) == '-');
  CHECK(op_symbol(OpCode::Mul) == '*');
  CHECK(op_symbol(OpCode::Div) == '/');
  CHECK(op_symbol(OpCode::Pow) == '^');
  for (OpCode op : {OpCode::Add, OpCode::Sub, OpCode::Mul, OpCode::Div,
                    OpCode::Pow}) {
    auto back = op_from_symbol(std::string(1, op_symbol(op)));
    REQUIRE(back.has_value());
    CHECK(*back == op);
  }
  CHECK(!op_from_symbol("?").has_value());
  CHECK(op_precedence(OpCode::Pow) > op_precedence(OpCode::Mul));
  CHECK(op_precedence(OpCode::Mul) > op_precedence(OpCode::Add));
  CHECK(op_precedence(OpCode::Mul) == op_precedence(OpCode::Div));
  CHECK(op_precedence(OpCode::Add) == op_precedence(OpCode::Sub));
  CHECK(op_right_assoc(OpCode::Pow));
  CHECK(!op_right_assoc(OpCode::Sub));
}

TEST_CASE("validate_prefix") {
  CHECK(validate_prefix(pp("N0").tokens));
  CHECK(validate_prefix(pp("+ N0 N1").tokens));
  CHECK(validate_prefix(pp("* + N0 N1 N2").tokens));
  CHECK(validate_prefix(pp("+ N0 * N1 N2").tokens));

  std::vector<EqToken> bad1 = {EqToken::make_op(OpCode::Add),
                               EqToken::make_quantity(0)};
  CHECK(!validate_prefix(bad1));  // missing operand
  std::vector<EqToken> bad2 = {EqToken::make_quantity(0),
                               EqToken::make_quantity(1)};
  CHECK(!validate_prefix(bad2));  // closes early
  std::vector<EqToken> bad3 = {EqToken::make_op(OpCode::Add)};
  CHECK(!validate_prefix(bad3));
  CHECK(!validate_prefix(std::vector<EqToken>{}));
}

TEST_CASE("evaluate: hand cases") {
  std::vector<double> q = {2.0, 3.0, 4.0};

  CHECK(evaluate(pp("+ N0 N1"), q).value == doctest::Approx(5.0));
  CHECK(evaluate(pp("* + N0 N1 N2"), q).value == doctest::Approx(20.0));
  CHECK(evaluate(pp("- N2 N0"), q).value == doctest::Approx(2.0));
  CHECK(evaluate(pp("/ N2 N0"), q).value == doctest::Approx(2.0));
  CHECK(evaluate(pp("^ N0 N1"), q).value == doctest::Approx(8.0));
  CHECK(evaluate(pp("3.5"), q).value == doctest::Approx(3.5));

  SUBCASE("division by zero") {
    std::vector<double> qz = {1.0, 0.0};
    auto out = evaluate(pp("/ N0 N1"), qz);
    CHECK(!out.ok());
    CHECK(out.defect == EvalDefect::DivisionByZero);
    std::vector<double> qtiny = {1.0, 1e-13};
    CHECK(evaluate(pp("/ N0 N1"), qtiny).defect == EvalDefect::DivisionByZero);
    std::vector<double> qok = {1.0, 1e-11};
    CHECK(evaluate(pp("/ N0 N1"), qok).ok());
  }
  SUBCASE("overflow") {
    std::vector<double> qb = {10.0, 400.0};
    auto out = evaluate(pp("^ N0 N1"), qb);
    CHECK(!out.ok());
    CHECK(out.defect == EvalDefect::Overflow);
  }
  SUBCASE("invalid quantity index") {
    auto out = evaluate(pp("+ N0 N7"), q);
    CHECK(!out.ok());
    CHECK(out.defect == EvalDefect::InvalidQuantityIndex);
  }
  SUBCASE("malformed prefix") {
    Equation bad;
    bad.tokens = {EqToken::make_op(OpCode::Add), EqToken::make_quantity(0)};
    CHECK(evaluate(bad, q).defect == EvalDefect::MalformedPrefix);
    Equation extra;
    extra.tokens = {EqToken::make_quantity(0), EqToken::make_quantity(1)};
    CHECK(evaluate(extra, q).defect == EvalDefect::MalformedPrefix);
  }
}

TEST_CASE("evaluate: constants resolve through the map by name") {
  Equation eq;
  eq.tokens = {EqToken::make_op(OpCode::Mul),
               EqToken::make_constant("pi", 0.0),  // stale embedded value
               EqToken::make_quantity(0)};
  std::vector<double> q = {2.0};
  ConstantMap cmap = {{"pi", 3.14}};
  CHECK(evaluate(eq, q, cmap).value == doctest::Approx(6.28));
  // Absent from the map: the token's embedded value is used.
  CHECK(evaluate(eq, q).value == doctest::Approx(0.0));
}

TEST_CASE("answers_match tolerance and symmetry") {
  CHECK(answers_match(1.0, 1.0));
  CHECK(answers_match(0.0, 0.0));
  // |p - g| <= 1e-4 * max(1, |p|, |g|)
  CHECK(answers_match(0.5, 0.5 + 0.9e-4));
  CHECK(!answers_match(0.5, 0.5 + 1.1e-4));
  CHECK(answers_match(10000.0, 10000.9));
  CHECK(!answers_match(10000.0, 10001.5));
  CHECK(answers_match(-3.0, -3.0002));
  CHECK(!answers_match(-3.0, -3.002));

  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    double a = rng.uniform(-1e4, 1e4);
    double b = a + rng.uniform(-1.0, 1.0);
    CHECK(answers_match(a, b) == answers_match(b, a));
  }
}

TEST_CASE("infix_to_prefix: precedence and associativity") {
  CHECK(to_prefix_string(infix_to_prefix("2+3*4")) == "+ 2 * 3 4");
  CHECK(to_prefix_string(infix_to_prefix("(2+3)*4")) == "* + 2 3 4");
  CHECK(to_prefix_string(infix_to_prefix("10-4-3")) == "- - 10 4 3");
  CHECK(to_prefix_string(infix_to_prefix("2^3^2")) == "^ 2 ^ 3 2");
  CHECK(to_prefix_string(infix_to_prefix("N0*(N1+N2)")) == "* N0 + N1 N2");
  CHECK(to_prefix_string(infix_to_prefix("8/2/2")) == "/ / 8 2 2");

  std::vector<double> none;
  CHECK(evaluate(infix_to_prefix("2+3*4"), none).value == doctest::Approx(14.0));
  CHECK(evaluate(infix_to_prefix("(2+3)*4"), none).value == doctest::Approx(20.0));
  CHECK(evaluate(infix_to_prefix("2^3^2"), none).value == doctest::Approx(512.0));
  CHECK(evaluate(infix_to_prefix("10-4-3"), none).value == doctest::Approx(3.0));
}

TEST_CASE("infix_to_prefix: spellings") {
  std::vector<double> none;
  CHECK(evaluate(infix_to_prefix("3×2"), none).value == doctest::Approx(6.0));
  CHECK(evaluate(infix_to_prefix("8÷2"), none).value == doctest::Approx(4.0));
  CHECK(evaluate(infix_to_prefix("5−1"), none).value == doctest::Approx(4.0));
  CHECK(evaluate(infix_to_prefix("2**3"), none).value == doctest::Approx(8.0));
  CHECK(evaluate(infix_to_prefix("50%"), none).value == doctest::Approx(0.5));
  CHECK(evaluate(infix_to_prefix("12% * 200"), none).value ==
        doctest::Approx(24.0));
  CHECK(evaluate(infix_to_prefix("-3+5"), none).value == doctest::Approx(2.0));
  CHECK(evaluate(infix_to_prefix(" 1 + 2 "), none).value == doctest::Approx(3.0));
}

TEST_CASE("infix_to_prefix: parse errors carry offsets") {
  auto offset_of = [](const std::string& text) -> size_t {
    try {
      infix_to_prefix(text);
    } catch (const ParseError& e) {
      return e.offset;
    }
    return static_cast<size_t>(-1);
  };
  CHECK(offset_of("2+") != static_cast<size_t>(-1));
  CHECK(offset_of("2++3") != static_cast<size_t>(-1));
  CHECK(offset_of(")") == 0);
  CHECK(offset_of("2+$") == 2);
  CHECK(offset_of("") != static_cast<size_t>(-1));
  CHECK(offset_of("(2+3") != static_cast<size_t>(-1));
  CHECK_THROWS_AS(infix_to_prefix("2 3"), ParseError);
}

TEST_CASE("render_infix: minimal parenthesization") {
  CHECK(render_infix(pp("+ 2 * 3 4")) == "2 + 3 * 4");
  CHECK(render_infix(pp("* + 2 3 4")) == "(2 + 3) * 4");
  CHECK(render_infix(pp("- - 10 4 3")) == "10 - 4 - 3");
  CHECK(render_infix(pp("- 10 - 4 3")) == "10 - (4 - 3)");
  CHECK(render_infix(pp("^ 2 ^ 3 2")) == "2 ^ 3 ^ 2");
  CHECK(render_infix(pp("^ ^ 2 3 2")) == "(2 ^ 3) ^ 2");
  CHECK(render_infix(pp("N0")) == "N0");
  Equation bad;
  bad.tokens = {EqToken::make_op(OpCode::Add)};
  CHECK_THROWS_AS(render_infix(bad), FormatError);
}

TEST_CASE("render/parse round trips over the enumerated space") {
  std::vector<EqToken> consts = {EqToken::make_constant("1", 1.0),
                                 EqToken::make_constant("3.14", 3.14)};
  auto all = enumerate_equations(5, 2, consts);
  for (const Equation& eq : all) {
    CAPTURE(to_prefix_string(eq));
    // prefix string round trip
    Equation back = parse_prefix_string(to_prefix_string(eq));
    CHECK(back == eq);
    // infix round trip
    Equation via_infix = infix_to_prefix(render_infix(eq));
    REQUIRE(via_infix.tokens.size() == eq.tokens.size());
    for (size_t i = 0; i < eq.tokens.size(); ++i) {
      const EqToken& a = eq.tokens[i];
      const EqToken& b = via_infix.tokens[i];
      CHECK(a.kind == b.kind);
      if (a.kind == EqToken::Kind::Op) CHECK(a.op == b.op);
      if (a.kind == EqToken::Kind::Quantity) CHECK(a.quantity == b.quantity);
      if (a.kind == EqToken::Kind::Constant) {
        CHECK(a.value == doctest::Approx(b.value).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("parse_prefix_string errors") {
  CHECK_THROWS_AS(parse_prefix_string(""), ParseError);
  CHECK_THROWS_AS(parse_prefix_string("   "), ParseError);
  CHECK_THROWS_AS(parse_prefix_string("+ N0"), ParseError);
  CHECK_THROWS_AS(parse_prefix_string("N0 N1"), ParseError);
  CHECK_THROWS_AS(parse_prefix_string("+ N0 N1 N2"), ParseError);
  CHECK_THROWS_AS(parse_prefix_string("frog"), ParseError);
  CHECK(pp("N12").tokens[0].quantity == 12);
  CHECK(pp("2.5").tokens[0].value == doctest::Approx(2.5));
}

TEST_CASE("enumerate_equations: counts, validity, uniqueness, determinism") {
  SUBCASE("two quantities, no constants") {
    auto small = enumerate_equations(3, 2, {});
    CHECK(small.size() == 22);
    auto big = enumerate_equations(5, 2, {});
    CHECK(big.size() == 422);
    CHECK(static_cast<long long>(big.size()) ==
          expected_enumeration_count(5, 2));
  }
  SUBCASE("with one constant") {
    std::vector<EqToken> consts = {EqToken::make_constant("1", 1.0)};
    auto all = enumerate_equations(5, 2, consts);
    CHECK(static_cast<long long>(all.size()) ==
          expected_enumeration_count(5, 3));
  }
  SUBCASE("validity and uniqueness") {
    std::vector<EqToken> consts = {EqToken::make_constant("3.14", 3.14)};
    auto all = enumerate_equations(5, 2, consts);
    std::set<std::string> seen;
    for (const Equation& eq : all) {
      CHECK(validate_prefix(eq.tokens));
      CHECK(eq.size() <= 5);
      seen.insert(to_prefix_string(eq));
    }
    CHECK(seen.size() == all.size());
  }
  SUBCASE("visitor and vector forms agree, deterministically") {
    std::vector<Equation> via_visit;
    enumerate_equations(3, 2, {}, [&](const Equation& eq) {
      via_visit.push_back(eq);
    });
    auto direct = enumerate_equations(3, 2, {});
    REQUIRE(via_visit.size() == direct.size());
    for (size_t i = 0; i < direct.size(); ++i) {
      CHECK(via_visit[i] == direct[i]);
    }
  }
}

TEST_CASE("evaluate agrees with the independent recursive oracle") {
  std::vector<EqToken> consts = {EqToken::make_constant("1", 1.0),
                                 EqToken::make_constant("3.14", 3.14)};
  std::vector<double> q = {2.5, 4.0};
  auto all = enumerate_equations(5, 2, consts);
  size_t defects = 0;
  for (const Equation& eq : all) {
    CAPTURE(to_prefix_string(eq));
    EvalOutcome lib = evaluate(eq, q);
    auto orc = oracle_eval(eq, q);
    if (orc.has_value()) {
      REQUIRE(lib.ok());
      CHECK(lib.value == doctest::Approx(*orc).epsilon(1e-12));
    } else {
      CHECK(!lib.ok());
      ++defects;
    }
  }
  CHECK(defects > 0);  // the space genuinely contains defective equations
}
