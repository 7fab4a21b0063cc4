#include "roadopt/costexpr.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>

namespace roadopt::costexpr {

namespace {

struct Parser {
    const std::string& src;
    const std::string& var;
    std::size_t pos = 0;
    Expr out;

    explicit Parser(const std::string& s, const std::string& v) : src(s), var(v) {
        out.var = v;
        out.src = s;
    }

    [[noreturn]] void fail(const std::string& what, std::size_t at) const {
        throw ParseError(what, at);
    }

    void skip_ws() {
        while (pos < src.size() && std::isspace(static_cast<unsigned char>(src[pos]))) ++pos;
    }

    bool peek_is(char c) {
        skip_ws();
        return pos < src.size() && src[pos] == c;
    }

    bool accept(char c) {
        if (!peek_is(c)) return false;
        ++pos;
        return true;
    }

    void expect(char c, const char* ctx) {
        skip_ws();
        if (pos >= src.size() || src[pos] != c)
            fail(std::string("expected '") + c + "' " + ctx, pos);
        ++pos;
    }

    int push(Node n) {
        out.nodes.push_back(n);
        return static_cast<int>(out.nodes.size()) - 1;
    }

    int mk(Kind k, int a, int b, std::size_t lo, std::size_t hi) {
        Node n;
        n.kind = k;
        n.a = a;
        n.b = b;
        n.lo = static_cast<std::uint32_t>(lo);
        n.hi = static_cast<std::uint32_t>(hi);
        return push(n);
    }

    std::uint32_t lo_of(int i) const { return out.nodes[static_cast<std::size_t>(i)].lo; }
    std::uint32_t hi_of(int i) const { return out.nodes[static_cast<std::size_t>(i)].hi; }

    int parse_expr() {
        int lhs = parse_term();
        for (;;) {
            skip_ws();
            if (pos < src.size() && (src[pos] == '+' || src[pos] == '-')) {
                char op = src[pos++];
                int rhs = parse_term();
                lhs = mk(op == '+' ? Kind::add : Kind::sub, lhs, rhs, lo_of(lhs), hi_of(rhs));
            } else {
                return lhs;
            }
        }
    }

    int parse_term() {
        int lhs = parse_factor();
        for (;;) {
            skip_ws();
            if (pos < src.size() && (src[pos] == '*' || src[pos] == '/')) {
                char op = src[pos++];
                int rhs = parse_factor();
                lhs = mk(op == '*' ? Kind::mul : Kind::div, lhs, rhs, lo_of(lhs), hi_of(rhs));
            } else {
                return lhs;
            }
        }
    }

    // '^' binds tighter than '*' and is right-associative: a^b^c = a^(b^c).
    int parse_factor() {
        int base = parse_unary();
        skip_ws();
        if (pos < src.size() && src[pos] == '^') {
            ++pos;
            int expn = parse_factor();
            return mk(Kind::pow_fn, base, expn, lo_of(base), hi_of(expn));
        }
        return base;
    }

    // Unary minus binds tighter than '^', so -t^2 means (-t)^2.
    int parse_unary() {
        skip_ws();
        if (pos < src.size() && src[pos] == '-') {
            std::size_t lo = pos++;
            int inner = parse_unary();
            return mk(Kind::neg, inner, -1, lo, hi_of(inner));
        }
        return parse_primary();
    }

    int parse_primary() {
        skip_ws();
        if (pos >= src.size()) fail("unexpected end of expression", pos);
        char c = src[pos];
        if (c == '(') {
            ++pos;
            int inner = parse_expr();
            expect(')', "to close '('");
            return inner;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_ident();
        fail(std::string("unexpected character '") + c + "'", pos);
    }

    int parse_number() {
        std::size_t lo = pos;
        const char* begin = src.c_str() + pos;
        char* end = nullptr;
        double v = std::strtod(begin, &end);
        if (end == begin) fail("malformed number", pos);
        pos += static_cast<std::size_t>(end - begin);
        Node n;
        n.kind = Kind::num;
        n.value = v;
        n.lo = static_cast<std::uint32_t>(lo);
        n.hi = static_cast<std::uint32_t>(pos);
        return push(n);
    }

    int parse_ident() {
        std::size_t lo = pos;
        while (pos < src.size() &&
               (std::isalnum(static_cast<unsigned char>(src[pos])) || src[pos] == '_'))
            ++pos;
        std::string name = src.substr(lo, pos - lo);
        if (name == var) {
            Node n;
            n.kind = Kind::var;
            n.lo = static_cast<std::uint32_t>(lo);
            n.hi = static_cast<std::uint32_t>(pos);
            return push(n);
        }
        if (name == "exp" || name == "log") {
            expect('(', (name + " needs an argument list").c_str());
            int arg = parse_expr();
            expect(')', ("to close " + name + "(").c_str());
            return mk(name == "exp" ? Kind::exp_fn : Kind::log_fn, arg, -1, lo, pos);
        }
        if (name == "pow") {
            expect('(', "pow needs an argument list");
            int a = parse_expr();
            expect(',', "between pow arguments");
            int b = parse_expr();
            expect(')', "to close pow(");
            return mk(Kind::pow_fn, a, b, lo, pos);
        }
        fail("unknown identifier '" + name + "' (the free variable here is '" + var + "')", lo);
    }
};

double eval_node(const Expr& e, int i, double x) {
    const Node& n = e.nodes[static_cast<std::size_t>(i)];
    switch (n.kind) {
    case Kind::num: return n.value;
    case Kind::var: return x;
    case Kind::add: return eval_node(e, n.a, x) + eval_node(e, n.b, x);
    case Kind::sub: return eval_node(e, n.a, x) - eval_node(e, n.b, x);
    case Kind::mul: return eval_node(e, n.a, x) * eval_node(e, n.b, x);
    case Kind::div: {
        double num = eval_node(e, n.a, x);
        double den = eval_node(e, n.b, x);
        if (den == 0.0) throw EvalError("division by zero", n.lo, n.hi);
        return num / den;
    }
    case Kind::neg: return -eval_node(e, n.a, x);
    case Kind::pow_fn: {
        double base = eval_node(e, n.a, x);
        double expn = eval_node(e, n.b, x);
        if (base == 0.0 && expn < 0.0)
            throw EvalError("zero raised to a negative power", n.lo, n.hi);
        if (base < 0.0 && expn != std::floor(expn))
            throw EvalError("fractional power of a negative base", n.lo, n.hi);
        return std::pow(base, expn);
    }
    case Kind::exp_fn: return std::exp(eval_node(e, n.a, x));
    case Kind::log_fn: {
        double arg = eval_node(e, n.a, x);
        if (arg <= 0.0) throw EvalError("log of a non-positive value", n.lo, n.hi);
        return std::log(arg);
    }
    }
    throw EvalError("corrupt expression node", 0, 0);
}

// Builder with constant folding, used by derivative(). Folds only safe cases
// (no division, no domain-sensitive pow) so folding can never raise.
struct Builder {
    Expr& e;

    bool is_num(int i, double v) const {
        const Node& n = e.nodes[static_cast<std::size_t>(i)];
        return n.kind == Kind::num && n.value == v;
    }
    bool is_num(int i) const { return e.nodes[static_cast<std::size_t>(i)].kind == Kind::num; }
    double val(int i) const { return e.nodes[static_cast<std::size_t>(i)].value; }

    int num(double v) {
        Node n;
        n.kind = Kind::num;
        n.value = v;
        e.nodes.push_back(n);
        return static_cast<int>(e.nodes.size()) - 1;
    }

    int raw(Kind k, int a, int b = -1) {
        Node n;
        n.kind = k;
        n.a = a;
        n.b = b;
        e.nodes.push_back(n);
        return static_cast<int>(e.nodes.size()) - 1;
    }

    int add(int a, int b) {
        if (is_num(a) && is_num(b)) return num(val(a) + val(b));
        if (is_num(a, 0.0)) return b;
        if (is_num(b, 0.0)) return a;
        return raw(Kind::add, a, b);
    }
    int sub(int a, int b) {
        if (is_num(a) && is_num(b)) return num(val(a) - val(b));
        if (is_num(b, 0.0)) return a;
        if (is_num(a, 0.0)) return neg(b);
        return raw(Kind::sub, a, b);
    }
    int mul(int a, int b) {
        if (is_num(a) && is_num(b)) return num(val(a) * val(b));
        if (is_num(a, 0.0) || is_num(b, 0.0)) return num(0.0);
        if (is_num(a, 1.0)) return b;
        if (is_num(b, 1.0)) return a;
        return raw(Kind::mul, a, b);
    }
    int div(int a, int b) {
        if (is_num(a, 0.0) && !is_num(b, 0.0)) return num(0.0);
        if (is_num(b, 1.0)) return a;
        return raw(Kind::div, a, b);
    }
    int neg(int a) {
        const Node& n = e.nodes[static_cast<std::size_t>(a)];
        if (n.kind == Kind::num) return num(-n.value);
        if (n.kind == Kind::neg) return n.a;
        return raw(Kind::neg, a);
    }
    int pow(int a, int b) {
        if (is_num(b, 1.0)) return a;
        if (is_num(b, 0.0)) return num(1.0); // symbolic convention x^0 = 1
        return raw(Kind::pow_fn, a, b);
    }
};

int copy_subtree(const Expr& src, int i, Expr& dst) {
    const Node& n = src.nodes[static_cast<std::size_t>(i)];
    Node m = n;
    if (n.a >= 0) m.a = copy_subtree(src, n.a, dst);
    if (n.b >= 0) m.b = copy_subtree(src, n.b, dst);
    dst.nodes.push_back(m);
    return static_cast<int>(dst.nodes.size()) - 1;
}

int diff_node(const Expr& src, int i, Expr& dst, Builder& B) {
    const Node& n = src.nodes[static_cast<std::size_t>(i)];
    switch (n.kind) {
    case Kind::num: return B.num(0.0);
    case Kind::var: return B.num(1.0);
    case Kind::add: return B.add(diff_node(src, n.a, dst, B), diff_node(src, n.b, dst, B));
    case Kind::sub: return B.sub(diff_node(src, n.a, dst, B), diff_node(src, n.b, dst, B));
    case Kind::mul: {
        int a = copy_subtree(src, n.a, dst);
        int b = copy_subtree(src, n.b, dst);
        int da = diff_node(src, n.a, dst, B);
        int db = diff_node(src, n.b, dst, B);
        return B.add(B.mul(da, b), B.mul(a, db));
    }
    case Kind::div: {
        int a = copy_subtree(src, n.a, dst);
        int b = copy_subtree(src, n.b, dst);
        int da = diff_node(src, n.a, dst, B);
        int db = diff_node(src, n.b, dst, B);
        int numer = B.sub(B.mul(da, b), B.mul(a, db));
        int denom = B.mul(copy_subtree(src, n.b, dst), copy_subtree(src, n.b, dst));
        return B.div(numer, denom);
    }
    case Kind::neg: return B.neg(diff_node(src, n.a, dst, B));
    case Kind::pow_fn: {
        const Node& eb = src.nodes[static_cast<std::size_t>(n.b)];
        int a = copy_subtree(src, n.a, dst);
        int da = diff_node(src, n.a, dst, B);
        if (eb.kind == Kind::num) {
            // d(u^c) = c * u^(c-1) * u'
            int p = B.pow(copy_subtree(src, n.a, dst), B.num(eb.value - 1.0));
            return B.mul(B.mul(B.num(eb.value), p), da);
        }
        // General case: d(u^v) = u^v * (v' log u + v u'/u).
        int b = copy_subtree(src, n.b, dst);
        int db = diff_node(src, n.b, dst, B);
        int whole = B.pow(copy_subtree(src, n.a, dst), copy_subtree(src, n.b, dst));
        int t1 = B.mul(db, B.raw(Kind::log_fn, a));
        int t2 = B.mul(b, B.div(da, copy_subtree(src, n.a, dst)));
        return B.mul(whole, B.add(t1, t2));
    }
    case Kind::exp_fn: {
        int a = copy_subtree(src, n.a, dst);
        int da = diff_node(src, n.a, dst, B);
        return B.mul(B.raw(Kind::exp_fn, a), da);
    }
    case Kind::log_fn: {
        int a = copy_subtree(src, n.a, dst);
        int da = diff_node(src, n.a, dst, B);
        return B.div(da, a);
    }
    }
    throw EvalError("corrupt expression node", 0, 0);
}

void print_node(const Expr& e, int i, std::string& out) {
    const Node& n = e.nodes[static_cast<std::size_t>(i)];
    auto binary = [&](const char* op) {
        out += '(';
        print_node(e, n.a, out);
        out += op;
        print_node(e, n.b, out);
        out += ')';
    };
    switch (n.kind) {
    case Kind::num: {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", n.value);
        if (n.value < 0.0) { // re-reads as Neg; derivative folding can make these
            out += '(';
            out += buf;
            out += ')';
        } else {
            out += buf;
        }
        return;
    }
    case Kind::var: out += e.var; return;
    case Kind::add: binary(" + "); return;
    case Kind::sub: binary(" - "); return;
    case Kind::mul: binary(" * "); return;
    case Kind::div: binary(" / "); return;
    case Kind::neg:
        out += "(-";
        print_node(e, n.a, out);
        out += ')';
        return;
    case Kind::pow_fn:
        out += "pow(";
        print_node(e, n.a, out);
        out += ", ";
        print_node(e, n.b, out);
        out += ')';
        return;
    case Kind::exp_fn:
    case Kind::log_fn:
        out += (n.kind == Kind::exp_fn) ? "exp(" : "log(";
        print_node(e, n.a, out);
        out += ')';
        return;
    }
}

bool equal_node(const Expr& x, int i, const Expr& y, int j) {
    const Node& a = x.nodes[static_cast<std::size_t>(i)];
    const Node& b = y.nodes[static_cast<std::size_t>(j)];
    if (a.kind != b.kind) return false;
    if (a.kind == Kind::num) return a.value == b.value;
    if (a.a >= 0 && !equal_node(x, a.a, y, b.a)) return false;
    if (a.b >= 0 && !equal_node(x, a.b, y, b.b)) return false;
    return true;
}

} // namespace

Expr parse(const std::string& src, const std::string& var) {
    Parser p(src, var);
    p.out.root = p.parse_expr();
    p.skip_ws();
    if (p.pos != src.size())
        throw ParseError("trailing input after expression", p.pos);
    return std::move(p.out);
}

double eval(const Expr& e, double x) {
    if (e.empty()) throw EvalError("empty expression", 0, 0);
    return eval_node(e, e.root, x);
}

Expr derivative(const Expr& e) {
    if (e.empty()) throw EvalError("empty expression", 0, 0);
    Expr d;
    d.var = e.var;
    Builder B{d};
    d.root = diff_node(e, e.root, d, B);
    return d;
}

std::string print(const Expr& e) {
    if (e.empty()) return "";
    std::string out;
    print_node(e, e.root, out);
    return out;
}

bool structurally_equal(const Expr& x, const Expr& y) {
    if (x.empty() || y.empty()) return x.empty() == y.empty();
    return equal_node(x, x.root, y, y.root);
}

} // namespace roadopt::costexpr
