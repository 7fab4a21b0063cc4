#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <string>

#include "roadopt/costexpr.hpp"

using namespace roadopt;
namespace ce = roadopt::costexpr;

static double ev(const std::string& s, double x, const std::string& var = "t") {
    return ce::eval(ce::parse(s, var), x);
}

TEST_CASE("literals, variable, arithmetic") {
    CHECK(ev("3", 0.0) == 3.0);
    CHECK(ev("t", 7.5) == 7.5);
    CHECK(ev("2 + 3 * 4", 0.0) == 14.0);
    CHECK(ev("(2 + 3) * 4", 0.0) == 20.0);
    CHECK(ev("t*t - 2/t", 2.0) == 3.0);
    CHECK(ev("1 - 2 - 3", 0.0) == -4.0);   // left associative
    CHECK(ev("8 / 4 / 2", 0.0) == 1.0);
    CHECK(ev("0.5*(1-rho)", 0.25, "rho") == doctest::Approx(0.375));
    CHECK(ev("1e2 + 2.5e-1", 0.0) == doctest::Approx(100.25));
}

TEST_CASE("exponentials and powers") {
    CHECK(ev("exp(t - 4)", 4.0) == 1.0);
    CHECK(ev("log(t)", 1.0) == 0.0);
    CHECK(ev("pow(t, 3)", 2.0) == 8.0);
    CHECK(ev("t^3", 2.0) == 8.0);
    CHECK(ev("2 + 3 * 2^3", 0.0) == 26.0);  // ^ binds tighter than *
    CHECK(ev("2^3^2", 0.0) == 512.0);       // right associative
    CHECK(ev("2^-1", 0.0) == 0.5);          // unary minus allowed in exponent
}

TEST_CASE("unary minus binds tighter than '^'") {
    CHECK(ev("-2^2", 0.0) == 4.0);   // (-2)^2
    CHECK(ev("-t^2", 3.0) == 9.0);   // (-t)^2
    CHECK(ev("0 - t^2", 3.0) == -9.0);
    CHECK(ev("--t", 5.0) == 5.0);
}

TEST_CASE("parse errors carry a byte offset") {
    CHECK_THROWS_AS(ce::parse("t +", "t"), ParseError);
    CHECK_THROWS_AS(ce::parse("(t", "t"), ParseError);
    CHECK_THROWS_AS(ce::parse("pow(t)", "t"), ParseError);
    CHECK_THROWS_AS(ce::parse("t t", "t"), ParseError);
    CHECK_THROWS_AS(ce::parse("", "t"), ParseError);
    CHECK_THROWS_AS(ce::parse("3 + $", "t"), ParseError);

    try {
        ce::parse("2 * x + 1", "t"); // only 't' is in scope
        FAIL("expected ParseError");
    } catch (const ParseError& err) {
        CHECK(err.offset == 4);
    }
}

TEST_CASE("evaluation domain errors") {
    CHECK_THROWS_AS(ev("1/(t-1)", 1.0), EvalError);
    CHECK_THROWS_AS(ev("log(t)", 0.0), EvalError);
    CHECK_THROWS_AS(ev("log(t - 2)", 1.0), EvalError);
    CHECK_THROWS_AS(ev("pow(t, 0.5)", -1.0), EvalError);
    CHECK_THROWS_AS(ev("pow(t, -1)", 0.0), EvalError);

    try {
        ev("2 + 1/(t-1)", 1.0);
        FAIL("expected EvalError");
    } catch (const EvalError& err) {
        CHECK(err.span_lo == 4); // the offending subexpression, not the whole input
        CHECK(err.span_hi >= 6);
    }
}

TEST_CASE("symbolic derivative on closed forms") {
    auto d = [](const std::string& s, double x) {
        return ce::eval(ce::derivative(ce::parse(s, "t")), x);
    };
    CHECK(d("t*t", 3.0) == 6.0);
    CHECK(d("7", 3.0) == 0.0);
    CHECK(d("exp(2*t)", 0.0) == 2.0);
    CHECK(d("log(t)", 2.0) == 0.5);
    CHECK(d("pow(t, 3)", 2.0) == 12.0);
    CHECK(d("1/t", 2.0) == doctest::Approx(-0.25));
    CHECK(d("t^t", 1.0) == doctest::Approx(1.0)); // t^t (log t + 1)
    CHECK(d("-t^2", 2.0) == doctest::Approx(4.0)); // (-t)^2 has slope 2t
}

TEST_CASE("derivative matches central differences") {
    const char* pool[] = {
        "t*t + 3*t - 1",
        "exp(t - 4)",
        "exp(-t) * t",
        "log(t + 2)",
        "pow(t, 3) - pow(t, 2) / 4",
        "(t - 1) * (t + 2) / (t + 3)",
        "t^4 - 2*t^2 + 0.5",
        "exp(t/2) + log(3*t + 1)",
    };
    const double h = 1e-4;
    for (const char* s : pool) {
        ce::Expr f = ce::parse(s, "t");
        ce::Expr df = ce::derivative(f);
        for (double x = 0.5; x <= 2.5; x += 0.25) {
            double fd = (ce::eval(f, x + h) - ce::eval(f, x - h)) / (2.0 * h);
            double sym = ce::eval(df, x);
            CHECK(std::fabs(sym - fd) <= 1e-6 * (1.0 + std::fabs(sym)));
        }
    }
}

// Random AST of bounded depth. Literals are nonnegative so every generated
// tree survives print -> parse structurally (negative values print as Neg).
namespace {

int gen_node(ce::Expr& e, std::mt19937& rng, int depth) {
    auto push = [&](ce::Kind k, double v, int a, int b) {
        ce::Node n;
        n.kind = k;
        n.value = v;
        n.a = a;
        n.b = b;
        e.nodes.push_back(n);
        return static_cast<int>(e.nodes.size()) - 1;
    };
    std::uniform_int_distribution<int> leaf(0, 1);
    if (depth == 0) {
        if (leaf(rng) == 0) return push(ce::Kind::var, 0.0, -1, -1);
        static const double lits[] = {0.0, 1.0, 2.0, 0.5, 3.25, 10.0};
        std::uniform_int_distribution<int> pick(0, 5);
        return push(ce::Kind::num, lits[pick(rng)], -1, -1);
    }
    std::uniform_int_distribution<int> kind(0, 9);
    switch (kind(rng)) {
    case 0: case 1: return gen_node(e, rng, 0);
    case 2: return push(ce::Kind::add, 0.0, gen_node(e, rng, depth - 1), gen_node(e, rng, depth - 1));
    case 3: return push(ce::Kind::sub, 0.0, gen_node(e, rng, depth - 1), gen_node(e, rng, depth - 1));
    case 4: return push(ce::Kind::mul, 0.0, gen_node(e, rng, depth - 1), gen_node(e, rng, depth - 1));
    case 5: return push(ce::Kind::div, 0.0, gen_node(e, rng, depth - 1), gen_node(e, rng, depth - 1));
    case 6: return push(ce::Kind::neg, 0.0, gen_node(e, rng, depth - 1), -1);
    case 7: return push(ce::Kind::pow_fn, 0.0, gen_node(e, rng, depth - 1), gen_node(e, rng, depth - 1));
    case 8: return push(ce::Kind::exp_fn, 0.0, gen_node(e, rng, depth - 1), -1);
    default: return push(ce::Kind::log_fn, 0.0, gen_node(e, rng, depth - 1), -1);
    }
}

} // namespace

TEST_CASE("print -> parse round trip on random trees") {
    std::mt19937 rng(20240811u);
    std::uniform_int_distribution<int> depth(1, 6);
    for (int iter = 0; iter < 1000; ++iter) {
        ce::Expr e;
        e.var = "t";
        e.root = gen_node(e, rng, depth(rng));
        std::string text = ce::print(e);
        CAPTURE(text);
        ce::Expr back = ce::parse(text, "t");
        CHECK(ce::structurally_equal(e, back));
    }
}
