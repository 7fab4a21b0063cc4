#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "roadopt/errors.hpp"

namespace roadopt::costexpr {

// Tiny arithmetic expression language for cost and velocity functions given
// in config files. Exactly one free variable per expression ("t" for costs,
// "rho" for velocity laws), declared by the caller at parse time.
//
// Grammar (precedence: unary minus > pow > * / > + -, pow right-associative):
//   expr    := term (('+'|'-') term)*
//   term    := factor (('*'|'/') factor)*
//   factor  := unary ('^' factor)?
//   unary   := '-' unary | primary
//   primary := NUMBER | VAR | 'exp' '(' expr ')' | 'log' '(' expr ')'
//            | 'pow' '(' expr ',' expr ')' | '(' expr ')'

enum class Kind : std::uint8_t {
    num, var, add, sub, mul, div, neg, pow_fn, exp_fn, log_fn
};

struct Node {
    Kind kind;
    double value = 0.0;        // Kind::num only
    int a = -1, b = -1;        // child indices into the arena
    std::uint32_t lo = 0, hi = 0; // source span [lo, hi), bytes
};

struct Expr {
    std::vector<Node> nodes;   // arena; value-copyable
    int root = -1;
    std::string var;           // declared free variable name
    std::string src;           // original source, empty for derived trees

    bool empty() const { return root < 0; }
    double operator()(double x) const;
};

// Throws ParseError (with byte offset) on malformed input.
Expr parse(const std::string& src, const std::string& var);

// Throws EvalError on domain violations (division by zero, log of a
// non-positive value, fractional power of a negative base).
double eval(const Expr& e, double x);

// Symbolic derivative d/d<var> with light constant folding.
Expr derivative(const Expr& e);

// Fully parenthesized form; parse(print(e)) is structurally equal to e for
// trees whose literals are nonnegative (negative literals re-read as Neg).
std::string print(const Expr& e);

bool structurally_equal(const Expr& x, const Expr& y);

inline double Expr::operator()(double x) const { return eval(*this, x); }

} // namespace roadopt::costexpr
