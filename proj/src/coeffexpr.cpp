// SPDX-License-Identifier: Apache-2.0

#include "eqpi/coeffexpr.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>

namespace eqpi {

namespace {

constexpr std::array<std::string_view, kVarCount> kVarNames = {"t", "x", "a", "y", "s", "z", "tau"};
constexpr std::size_t kMaxStack = 64;

struct FunctionInfo {
    std::string_view name;
    Op op;
    int arity;
};

constexpr std::array<FunctionInfo, 10> kFunctions = {{
    {"exp", Op::exp, 1},   {"ln", Op::ln, 1},     {"sin", Op::sin, 1},
    {"cos", Op::cos, 1},   {"tanh", Op::tanh, 1}, {"arctan", Op::arctan, 1},
    {"sqrt", Op::sqrt, 1}, {"abs", Op::abs, 1},   {"min", Op::min, 2},
    {"max", Op::max, 2},
}};

using NodePtr = std::shared_ptr<const Expr::Node>;

NodePtr make_const(double v) {
    auto n = std::make_shared<Expr::Node>();
    n->op = Op::constant;
    n->value = v;
    return n;
}

NodePtr make_var(Var v) {
    auto n = std::make_shared<Expr::Node>();
    n->op = Op::variable;
    n->var = v;
    return n;
}

NodePtr make_op(Op op, std::vector<NodePtr> children) {
    auto n = std::make_shared<Expr::Node>();
    n->op = op;
    n->children = std::move(children);
    return n;
}

class Parser {
public:
    Parser(std::string_view src, const std::map<std::string, double>* constants)
        : src_(src), constants_(constants) {}

    NodePtr parse_all() {
        NodePtr e = parse_expr();
        skip_ws();
        if (pos_ != src_.size()) throw ParseError(pos_, "operator or end of input");
        return e;
    }

private:
    void skip_ws() {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    }

    bool accept(char c) {
        skip_ws();
        if (pos_ < src_.size() && src_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    void expect(char c, const char* what) {
        if (!accept(c)) throw ParseError(pos_, what);
    }

    NodePtr parse_expr() {
        NodePtr lhs = parse_term();
        for (;;) {
            if (accept('+')) {
                lhs = make_op(Op::add, {lhs, parse_term()});
            } else if (accept('-')) {
                lhs = make_op(Op::sub, {lhs, parse_term()});
            } else {
                return lhs;
            }
        }
    }

    NodePtr parse_term() {
        NodePtr lhs = parse_unary();
        for (;;) {
            if (accept('*')) {
                lhs = make_op(Op::mul, {lhs, parse_unary()});
            } else if (accept('/')) {
                lhs = make_op(Op::div, {lhs, parse_unary()});
            } else {
                return lhs;
            }
        }
    }

    NodePtr parse_unary() {
        if (accept('-')) return make_op(Op::neg, {parse_unary()});
        return parse_power();
    }

    NodePtr parse_power() {
        NodePtr base = parse_primary();
        if (accept('^')) return make_op(Op::pow, {base, parse_unary()});
        return base;
    }

    NodePtr parse_primary() {
        skip_ws();
        if (pos_ >= src_.size()) throw ParseError(pos_, "number, variable, function or '('");
        const char c = src_[pos_];
        if (c == '(') {
            ++pos_;
            NodePtr e = parse_expr();
            expect(')', "')'");
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_identifier();
        throw ParseError(pos_, "number, variable, function or '('");
    }

    NodePtr parse_number() {
        const std::size_t start = pos_;
        auto digits = [&] {
            while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
        };
        digits();
        if (pos_ < src_.size() && src_[pos_] == '.') {
            ++pos_;
            digits();
        }
        if (pos_ == start + 1 && src_[start] == '.') throw ParseError(start, "number");
        if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
            std::size_t save = pos_;
            ++pos_;
            if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) ++pos_;
            const std::size_t exp_start = pos_;
            digits();
            if (pos_ == exp_start) pos_ = save;  // "2e" is "2" followed by an identifier
        }
        double v = 0.0;
        const auto res = std::from_chars(src_.data() + start, src_.data() + pos_, v);
        if (res.ec != std::errc{} || res.ptr != src_.data() + pos_ || !std::isfinite(v)) {
            throw ParseError(start, "finite number");
        }
        return make_const(v);
    }

    NodePtr parse_identifier() {
        const std::size_t start = pos_;
        while (pos_ < src_.size() &&
               (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
            ++pos_;
        }
        const std::string_view name = src_.substr(start, pos_ - start);
        for (std::size_t i = 0; i < kVarCount; ++i) {
            if (kVarNames[i] == name) return make_var(static_cast<Var>(i));
        }
        for (const auto& f : kFunctions) {
            if (f.name != name) continue;
            expect('(', "'(' after function name");
            std::vector<NodePtr> args;
            args.push_back(parse_expr());
            while (static_cast<int>(args.size()) < f.arity) {
                expect(',', "',' between arguments");
                args.push_back(parse_expr());
            }
            expect(')', "')' closing argument list");
            return make_op(f.op, std::move(args));
        }
        if (constants_ != nullptr) {
            const auto it = constants_->find(std::string(name));
            if (it != constants_->end()) return make_const(it->second);
        }
        throw UnknownIdentifier(start, std::string(name));
    }

    std::string_view src_;
    const std::map<std::string, double>* constants_ = nullptr;
    std::size_t pos_ = 0;
};

int precedence(Op op) {
    switch (op) {
        case Op::add:
        case Op::sub: return 1;
        case Op::mul:
        case Op::div: return 2;
        case Op::neg: return 3;
        case Op::pow: return 4;
        default: return 5;
    }
}

std::string_view function_name(Op op) {
    for (const auto& f : kFunctions) {
        if (f.op == op) return f.name;
    }
    return "?";
}

std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    // prefer the shortest representation that round-trips
    for (int p = 1; p < 17; ++p) {
        char shorter[64];
        std::snprintf(shorter, sizeof shorter, "%.*g", p, v);
        if (std::strtod(shorter, nullptr) == v) return shorter;
    }
    return buf;
}

void print(const Expr::Node& n, std::string& out);

void print_child(const Expr::Node& child, bool parens, std::string& out) {
    if (parens) out += '(';
    print(child, out);
    if (parens) out += ')';
}

void print(const Expr::Node& n, std::string& out) {
    switch (n.op) {
        case Op::constant:
            if (n.value < 0 || std::signbit(n.value)) {
                out += "(-" + format_number(-n.value) + ")";
            } else {
                out += format_number(n.value);
            }
            return;
        case Op::variable: out += kVarNames[static_cast<std::size_t>(n.var)]; return;
        case Op::neg:
            out += '-';
            print_child(*n.children[0], precedence(n.children[0]->op) < 3, out);
            return;
        case Op::add:
        case Op::sub:
        case Op::mul:
        case Op::div: {
            const int p = precedence(n.op);
            print_child(*n.children[0], precedence(n.children[0]->op) < p, out);
            switch (n.op) {
                case Op::add: out += " + "; break;
                case Op::sub: out += " - "; break;
                case Op::mul: out += "*"; break;
                default: out += "/"; break;
            }
            print_child(*n.children[1], precedence(n.children[1]->op) <= p, out);
            return;
        }
        case Op::pow:
            print_child(*n.children[0], precedence(n.children[0]->op) <= 4, out);
            out += '^';
            print_child(*n.children[1], precedence(n.children[1]->op) < 3, out);
            return;
        default: {
            out += function_name(n.op);
            out += '(';
            for (std::size_t i = 0; i < n.children.size(); ++i) {
                if (i) out += ", ";
                print(*n.children[i], out);
            }
            out += ')';
            return;
        }
    }
}

[[noreturn]] void domain_fail(const char* what, double arg) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s (argument %.17g)", what, arg);
    throw DomainError(buf);
}

double checked_pow(double base, double ex) {
    if (base < 0 && std::trunc(ex) != ex) domain_fail("negative base with non-integer exponent", base);
    if (base == 0 && ex < 0) domain_fail("zero raised to a negative power", ex);
    return std::pow(base, ex);
}

}  // namespace

std::string_view var_name(Var v) { return kVarNames[static_cast<std::size_t>(v)]; }

std::string VarSet::to_string() const {
    std::string out = "{";
    bool first = true;
    for (std::size_t i = 0; i < kVarCount; ++i) {
        if (!contains(static_cast<Var>(i))) continue;
        if (!first) out += ", ";
        out += kVarNames[i];
        first = false;
    }
    return out + "}";
}

Bindings unbound() {
    Bindings b;
    b.fill(std::numeric_limits<double>::quiet_NaN());
    return b;
}

ParseError::ParseError(std::size_t offset, std::string expected)
    : std::runtime_error("parse error at offset " + std::to_string(offset) + ": expected " + expected),
      offset_(offset),
      expected_(std::move(expected)) {}

UnknownIdentifier::UnknownIdentifier(std::size_t offset, std::string name)
    : std::runtime_error("unknown identifier '" + name + "' at offset " + std::to_string(offset)),
      offset_(offset),
      name_(std::move(name)) {}

UnboundVariable::UnboundVariable(Var v)
    : std::runtime_error("unbound variable '" + std::string(var_name(v)) + "'"), var_(v) {}

Expr::Expr() : Expr(make_const(0.0)) {}

Expr::Expr(std::shared_ptr<const Node> root) : root_(std::move(root)) { compile(); }

Expr Expr::constant(double v) { return Expr(make_const(v)); }

namespace {
void collect_terms(const std::shared_ptr<const Expr::Node>& n, double sign,
                   std::vector<std::pair<double, std::shared_ptr<const Expr::Node>>>& out) {
    switch (n->op) {
        case Op::add:
            collect_terms(n->children[0], sign, out);
            collect_terms(n->children[1], sign, out);
            return;
        case Op::sub:
            collect_terms(n->children[0], sign, out);
            collect_terms(n->children[1], -sign, out);
            return;
        case Op::neg:
            collect_terms(n->children[0], -sign, out);
            return;
        default:
            out.emplace_back(sign, n);
    }
}
}  // namespace

std::vector<std::pair<double, Expr>> additive_terms(const Expr& e) {
    std::vector<std::pair<double, std::shared_ptr<const Expr::Node>>> nodes;
    collect_terms(e.root_, 1.0, nodes);
    std::vector<std::pair<double, Expr>> out;
    out.reserve(nodes.size());
    for (auto& [sign, node] : nodes) out.emplace_back(sign, Expr(node));
    return out;
}

void Expr::compile() {
    program_.clear();
    vars_ = VarSet{};
    std::size_t depth = 0;
    max_stack_ = 0;
    // post-order walk; children left to right
    auto emit = [&](auto&& self, const Node& n) -> void {
        for (const auto& c : n.children) self(self, *c);
        Instr ins{n.op, 0, 0.0};
        if (n.op == Op::constant) {
            ins.value = n.value;
        } else if (n.op == Op::variable) {
            ins.slot = static_cast<std::uint8_t>(n.var);
            vars_.insert(n.var);
        }
        program_.push_back(ins);
        if (n.children.empty()) {
            ++depth;
        } else {
            depth -= n.children.size() - 1;
        }
        max_stack_ = std::max(max_stack_, depth);
    };
    emit(emit, *root_);
    if (max_stack_ > kMaxStack) throw ParseError(0, "expression nested less than 64 levels deep");
}

double Expr::eval(const Bindings& b) const {
    std::array<double, kMaxStack> stack;
    std::size_t sp = 0;
    for (const Instr& ins : program_) {
        switch (ins.op) {
            case Op::constant: stack[sp++] = ins.value; continue;
            case Op::variable: {
                const double v = b[ins.slot];
                if (std::isnan(v)) throw UnboundVariable(static_cast<Var>(ins.slot));
                stack[sp++] = v;
                continue;
            }
            default: break;
        }
        double r = 0.0;
        if (ins.op >= Op::add) {
            const double rhs = stack[--sp];
            const double lhs = stack[sp - 1];
            switch (ins.op) {
                case Op::add: r = lhs + rhs; break;
                case Op::sub: r = lhs - rhs; break;
                case Op::mul: r = lhs * rhs; break;
                case Op::div:
                    if (rhs == 0.0) domain_fail("division by zero", lhs);
                    r = lhs / rhs;
                    break;
                case Op::pow: r = checked_pow(lhs, rhs); break;
                case Op::min: r = std::min(lhs, rhs); break;
                case Op::max: r = std::max(lhs, rhs); break;
                default: break;
            }
        } else {
            const double arg = stack[sp - 1];
            switch (ins.op) {
                case Op::neg: r = -arg; break;
                case Op::exp: r = std::exp(arg); break;
                case Op::ln:
                    if (arg <= 0.0) domain_fail("ln of non-positive argument", arg);
                    r = std::log(arg);
                    break;
                case Op::sin: r = std::sin(arg); break;
                case Op::cos: r = std::cos(arg); break;
                case Op::tanh: r = std::tanh(arg); break;
                case Op::arctan: r = std::atan(arg); break;
                case Op::sqrt:
                    if (arg < 0.0) domain_fail("sqrt of negative argument", arg);
                    r = std::sqrt(arg);
                    break;
                case Op::abs: r = std::fabs(arg); break;
                default: break;
            }
        }
        if (!std::isfinite(r)) domain_fail("non-finite result", r);
        stack[sp - 1] = r;
    }
    return stack[0];
}

double Expr::eval(const std::map<std::string, double>& bindings) const {
    Bindings b = unbound();
    for (const auto& [name, value] : bindings) {
        for (std::size_t i = 0; i < kVarCount; ++i) {
            if (kVarNames[i] == name) b[i] = value;
        }
    }
    return eval(b);
}

std::string Expr::to_string() const {
    std::string out;
    print(*root_, out);
    return out;
}

Expr parse(std::string_view source) {
    Parser p(source, nullptr);
    return Expr(p.parse_all());
}

Expr parse(std::string_view source, const std::map<std::string, double>& constants) {
    for (const auto& [name, value] : constants) {
        for (std::string_view v : kVarNames) {
            if (v == name) throw std::invalid_argument("named constant '" + name + "' shadows a variable");
        }
        if (!std::isfinite(value)) throw std::invalid_argument("named constant '" + name + "' is not finite");
    }
    Parser p(source, &constants);
    return Expr(p.parse_all());
}

}  // namespace eqpi
