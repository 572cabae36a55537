#pragma once

// Payoff expressions over the terminal state of a lattice path, e.g.
// "W^2 - T", "max(W0 + W1, 0)", "Nc0 + 0.5*N1". Variables: W (= W0), Wi
// (Brownian component i), Ni (jump count of mark i), Nci (compensated count
// Ni - nu_i T), T (horizon). Functions: abs, sqrt, exp, log, min, max, pow.

#include <cctype>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "ddm/errors.hpp"
#include "ddm/lattice.hpp"

namespace ddm {

class Expression {
 public:
  explicit Expression(std::string text) : text_(std::move(text)) {
    pos_ = 0;
    root_ = parse_sum();
    skip_ws();
    require(pos_ == text_.size(), "unexpected '" + text_.substr(pos_) + "' in expression '" + text_ + "'");
  }

  struct Env {
    const Vec* W = nullptr;
    const Vec* N = nullptr;
    const Vec* Nc = nullptr;
    double T = 0.0;
  };

  double eval(const Env& env) const { return root_->eval(env); }

  /// Check every variable index against the noise dimensions.
  void bind(std::size_t brownian_dim, std::size_t jump_count) const { root_->bind(brownian_dim, jump_count); }

 private:
  struct Node {
    virtual ~Node() = default;
    virtual double eval(const Env& env) const = 0;
    virtual void bind(std::size_t, std::size_t) const {}
  };
  using Ptr = std::unique_ptr<Node>;

  struct Number : Node {
    double v;
    explicit Number(double x) : v(x) {}
    double eval(const Env&) const override { return v; }
  };

  struct Variable : Node {
    char kind;  // 'W', 'N', 'C' (compensated), 'T'
    std::size_t index;
    Variable(char k, std::size_t i) : kind(k), index(i) {}
    double eval(const Env& env) const override {
      switch (kind) {
        case 'W': return (*env.W)[index];
        case 'N': return (*env.N)[index];
        case 'C': return (*env.Nc)[index];
        default: return env.T;
      }
    }
    void bind(std::size_t d, std::size_t m) const override {
      if (kind == 'W') require(index < d, "expression uses W" + std::to_string(index) + " beyond the Brownian dimension");
      if (kind == 'N' || kind == 'C') require(index < m, "expression uses a jump mark that does not exist");
    }
  };

  struct Unary : Node {
    std::string fn;
    Ptr arg;
    Unary(std::string f, Ptr a) : fn(std::move(f)), arg(std::move(a)) {}
    double eval(const Env& env) const override {
      const double x = arg->eval(env);
      if (fn == "neg") return -x;
      if (fn == "abs") return std::abs(x);
      if (fn == "sqrt") return std::sqrt(x);
      if (fn == "exp") return std::exp(x);
      return std::log(x);
    }
    void bind(std::size_t d, std::size_t m) const override { arg->bind(d, m); }
  };

  struct Binary : Node {
    char op;
    Ptr lhs, rhs;
    Binary(char o, Ptr l, Ptr r) : op(o), lhs(std::move(l)), rhs(std::move(r)) {}
    double eval(const Env& env) const override {
      const double a = lhs->eval(env), b = rhs->eval(env);
      switch (op) {
        case '+': return a + b;
        case '-': return a - b;
        case '*': return a * b;
        case '/': return a / b;
        case '^': return (b == 2.0) ? a * a : std::pow(a, b);
        case '<': return std::min(a, b);
        default: return std::max(a, b);
      }
    }
    void bind(std::size_t d, std::size_t m) const override {
      lhs->bind(d, m);
      rhs->bind(d, m);
    }
  };

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool eat(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  Ptr parse_sum() {
    Ptr lhs = parse_product();
    while (true) {
      if (eat('+')) lhs = std::make_unique<Binary>('+', std::move(lhs), parse_product());
      else if (eat('-')) lhs = std::make_unique<Binary>('-', std::move(lhs), parse_product());
      else return lhs;
    }
  }

  Ptr parse_product() {
    Ptr lhs = parse_unary();
    while (true) {
      if (eat('*')) lhs = std::make_unique<Binary>('*', std::move(lhs), parse_unary());
      else if (eat('/')) lhs = std::make_unique<Binary>('/', std::move(lhs), parse_unary());
      else return lhs;
    }
  }

  Ptr parse_unary() {
    if (eat('-')) return std::make_unique<Unary>("neg", parse_unary());
    if (eat('+')) return parse_unary();
    return parse_power();
  }

  Ptr parse_power() {
    Ptr base = parse_atom();
    if (eat('^')) return std::make_unique<Binary>('^', std::move(base), parse_unary());
    return base;
  }

  Ptr parse_atom() {
    skip_ws();
    require(pos_ < text_.size(), "expression '" + text_ + "' ends unexpectedly");
    if (eat('(')) {
      Ptr e = parse_sum();
      require(eat(')'), "missing ')' in expression '" + text_ + "'");
      return e;
    }
    const char c = text_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      std::size_t used = 0;
      const double v = std::stod(text_.substr(pos_), &used);
      pos_ += used;
      return std::make_unique<Number>(v);
    }
    require(std::isalpha(static_cast<unsigned char>(c)), "unexpected character in expression '" + text_ + "'");
    std::string word;
    while (pos_ < text_.size() && std::isalpha(static_cast<unsigned char>(text_[pos_]))) word += text_[pos_++];
    std::string digits;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) digits += text_[pos_++];
    const std::size_t idx = digits.empty() ? 0 : std::stoul(digits);

    if (digits.empty() && (word == "abs" || word == "sqrt" || word == "exp" || word == "log")) {
      require(eat('('), word + " needs '('");
      Ptr a = parse_sum();
      require(eat(')'), "missing ')' after " + word);
      return std::make_unique<Unary>(word, std::move(a));
    }
    if (digits.empty() && (word == "min" || word == "max" || word == "pow")) {
      require(eat('('), word + " needs '('");
      Ptr a = parse_sum();
      require(eat(','), word + " takes two arguments");
      Ptr b = parse_sum();
      require(eat(')'), "missing ')' after " + word);
      const char op = word == "min" ? '<' : word == "max" ? '>' : '^';
      return std::make_unique<Binary>(op, std::move(a), std::move(b));
    }
    if (word == "W") return std::make_unique<Variable>('W', idx);
    if (word == "N") return std::make_unique<Variable>('N', idx);
    if (word == "Nc") return std::make_unique<Variable>('C', idx);
    if (word == "T" && digits.empty()) return std::make_unique<Variable>('T', 0);
    throw ValidationError("unknown name '" + word + digits + "' in expression '" + text_ + "'");
  }

  std::string text_;
  std::size_t pos_ = 0;
  Ptr root_;
};

/// Evaluate an expression on every leaf of the lattice.
inline RandomVariable payoff_from_expression(const Lattice& lat, const std::string& text) {
  const Expression expr(text);
  expr.bind(lat.brownian_dim(), lat.jump_count());
  const std::size_t d = lat.brownian_dim(), m = lat.jump_count(), b = lat.branching();
  const double T = lat.grid().horizon();

  // forward pass of the terminal state, level by level
  std::vector<Vec> W{Vec(d, 0.0)};
  std::vector<Vec> N{Vec(m, 0.0)};
  for (std::size_t l = 0; l < lat.steps(); ++l) {
    const auto& table = lat.outcomes(l);
    std::vector<Vec> W2, N2;
    W2.reserve(W.size() * b);
    N2.reserve(W.size() * b);
    for (std::size_t k = 0; k < W.size(); ++k) {
      for (std::size_t c = 0; c < b; ++c) {
        Vec w = W[k];
        for (std::size_t i = 0; i < d; ++i) w[i] += table[c].dW[i];
        Vec n = N[k];
        if (table[c].jump > 0) n[table[c].jump - 1] += 1.0;
        W2.push_back(std::move(w));
        N2.push_back(std::move(n));
      }
    }
    W = std::move(W2);
    N = std::move(N2);
  }
  RandomVariable X{Vec(W.size())};
  Vec nc(m);
  for (std::size_t i = 0; i < W.size(); ++i) {
    for (std::size_t j = 0; j < m; ++j) nc[j] = N[i][j] - lat.jumps().intensities[j] * T;
    X.values[i] = expr.eval({&W[i], &N[i], &nc, T});
  }
  return X;
}

}  // namespace ddm
