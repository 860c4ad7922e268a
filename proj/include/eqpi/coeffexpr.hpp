// SPDX-License-Identifier: Apache-2.0
//
// Coefficient expressions: a closed arithmetic language over a fixed set of
// variables, used to declare problem coefficients in config files.
//
// Grammar (whitespace-insensitive):
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := '-' unary | power
//   power   := primary ('^' unary)?          right-associative, binds tighter than '-'
//   primary := number | variable | name '(' expr (',' expr)* ')' | '(' expr ')'
//
// Variables: t x a y s z tau
// Functions: exp ln sin cos tanh arctan sqrt abs (one argument), min max (two)

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace eqpi {

enum class Var : std::uint8_t { t = 0, x, a, y, s, z, tau };
inline constexpr std::size_t kVarCount = 7;

std::string_view var_name(Var v);

/// Bitmask over Var.
class VarSet {
public:
    constexpr VarSet() = default;
    constexpr VarSet(std::initializer_list<Var> vars) {
        for (Var v : vars) bits_ |= bit(v);
    }
    constexpr bool contains(Var v) const { return (bits_ & bit(v)) != 0; }
    constexpr void insert(Var v) { bits_ |= bit(v); }
    constexpr bool subset_of(VarSet other) const { return (bits_ & ~other.bits_) == 0; }
    constexpr bool empty() const { return bits_ == 0; }
    std::string to_string() const;

private:
    static constexpr std::uint8_t bit(Var v) { return static_cast<std::uint8_t>(1u << static_cast<unsigned>(v)); }
    std::uint8_t bits_ = 0;
};

/// Positional bindings, indexed by Var. Unbound slots are NaN.
using Bindings = std::array<double, kVarCount>;
Bindings unbound();

class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t offset, std::string expected);
    std::size_t offset() const { return offset_; }
    const std::string& expected() const { return expected_; }

private:
    std::size_t offset_;
    std::string expected_;
};

class UnknownIdentifier : public std::runtime_error {
public:
    UnknownIdentifier(std::size_t offset, std::string name);
    std::size_t offset() const { return offset_; }
    const std::string& name() const { return name_; }

private:
    std::size_t offset_;
    std::string name_;
};

class UnboundVariable : public std::runtime_error {
public:
    explicit UnboundVariable(Var v);
    Var variable() const { return var_; }

private:
    Var var_;
};

class DomainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Op : std::uint8_t {
    constant, variable,
    neg, exp, ln, sin, cos, tanh, arctan, sqrt, abs,
    add, sub, mul, div, pow, min, max,
};

/// Immutable expression tree plus a flattened postfix program for evaluation.
/// Copies share the tree.
class Expr {
public:
    struct Node {
        Op op;
        double value = 0.0;          // constant
        Var var = Var::t;            // variable
        std::vector<std::shared_ptr<const Node>> children;
    };

    Expr();  // the constant 0

    static Expr constant(double v);

    double eval(const Bindings& b) const;
    double eval(const std::map<std::string, double>& bindings) const;

    VarSet variables() const { return vars_; }
    bool depends_on(Var v) const { return vars_.contains(v); }
    bool is_constant() const { return vars_.empty(); }

    /// Canonical text form; parse(to_string()) reproduces the same tree.
    std::string to_string() const;

    const Node& root() const { return *root_; }

private:
    friend Expr parse(std::string_view);
    friend Expr parse(std::string_view, const std::map<std::string, double>&);
    friend std::vector<std::pair<double, Expr>> additive_terms(const Expr&);
    explicit Expr(std::shared_ptr<const Node> root);
    void compile();

    struct Instr {
        Op op;
        std::uint8_t slot;
        double value;
    };

    std::shared_ptr<const Node> root_;
    std::vector<Instr> program_;
    std::size_t max_stack_ = 0;
    VarSet vars_;
};

Expr parse(std::string_view source);

/// As above, with extra identifiers folded to constants at parse time.
/// Names must not shadow a variable; functions take priority.
Expr parse(std::string_view source, const std::map<std::string, double>& constants);

/// Splits e at top-level +, - and unary minus: e = sum of sign_i * term_i.
std::vector<std::pair<double, Expr>> additive_terms(const Expr& e);

}  // namespace eqpi
