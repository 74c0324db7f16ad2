#include "qsdlab/expression.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "qsdlab/error.hpp"

namespace qsdlab {

enum class Op { Const, Var, Neg, Add, Sub, Mul, Div, Pow, Exp, Ln, Sqrt, Sin, Cos, Tan, Abs };

struct Expression::Node {
  Op op = Op::Const;
  double value = 0.0;
  std::shared_ptr<const Node> lhs;
  std::shared_ptr<const Node> rhs;
};

namespace {

using NodePtr = std::shared_ptr<const Expression::Node>;

double eval(const Expression::Node& n, double x) {
  switch (n.op) {
    case Op::Const: return n.value;
    case Op::Var: return x;
    case Op::Neg: return -eval(*n.lhs, x);
    case Op::Add: return eval(*n.lhs, x) + eval(*n.rhs, x);
    case Op::Sub: return eval(*n.lhs, x) - eval(*n.rhs, x);
    case Op::Mul: return eval(*n.lhs, x) * eval(*n.rhs, x);
    case Op::Div: return eval(*n.lhs, x) / eval(*n.rhs, x);
    case Op::Pow: return std::pow(eval(*n.lhs, x), eval(*n.rhs, x));
    case Op::Exp: return std::exp(eval(*n.lhs, x));
    case Op::Ln: return std::log(eval(*n.lhs, x));
    case Op::Sqrt: return std::sqrt(eval(*n.lhs, x));
    case Op::Sin: return std::sin(eval(*n.lhs, x));
    case Op::Cos: return std::cos(eval(*n.lhs, x));
    case Op::Tan: return std::tan(eval(*n.lhs, x));
    case Op::Abs: return std::abs(eval(*n.lhs, x));
  }
  return std::numeric_limits<double>::quiet_NaN();
}

NodePtr make_const(double v) {
  auto n = std::make_shared<Expression::Node>();
  n->op = Op::Const;
  n->value = v;
  return n;
}

NodePtr make(Op op, NodePtr lhs, NodePtr rhs = nullptr) {
  auto n = std::make_shared<Expression::Node>();
  n->op = op;
  n->lhs = std::move(lhs);
  n->rhs = std::move(rhs);
  const bool folded = n->lhs->op == Op::Const && (!n->rhs || n->rhs->op == Op::Const);
  if (folded) return make_const(eval(*n, 0.0));
  return n;
}

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  NodePtr parse() {
    NodePtr root = expr();
    skip_space();
    if (pos_ != text_.size()) fail("unexpected trailing input");
    return root;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorCode::ExpressionParse,
                what + " at position " + std::to_string(pos_) + " in '" + std::string(text_) + "'");
  }

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_space();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!accept(c)) fail(std::string("expected '") + c + "'");
  }

  NodePtr expr() {
    NodePtr lhs = term();
    for (;;) {
      if (accept('+')) {
        lhs = make(Op::Add, lhs, term());
      } else if (accept('-')) {
        lhs = make(Op::Sub, lhs, term());
      } else {
        return lhs;
      }
    }
  }

  NodePtr term() {
    NodePtr lhs = unary();
    for (;;) {
      if (accept('*')) {
        lhs = make(Op::Mul, lhs, unary());
      } else if (accept('/')) {
        lhs = make(Op::Div, lhs, unary());
      } else {
        return lhs;
      }
    }
  }

  NodePtr unary() {
    if (accept('-')) return make(Op::Neg, unary());
    if (accept('+')) return unary();
    return power();
  }

  NodePtr power() {
    NodePtr base = primary();
    if (accept('^')) return make(Op::Pow, base, unary());
    return base;
  }

  NodePtr primary() {
    skip_space();
    if (pos_ >= text_.size()) fail("unexpected end of input");
    const char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      NodePtr inner = expr();
      expect(')');
      return inner;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c))) return named();
    fail(std::string("unexpected character '") + c + "'");
  }

  NodePtr number() {
    double value = 0.0;
    const char* begin = text_.data() + pos_;
    const auto [end, ec] = std::from_chars(begin, text_.data() + text_.size(), value);
    if (ec != std::errc()) fail("malformed number");
    pos_ += static_cast<std::size_t>(end - begin);
    return make_const(value);
  }

  NodePtr named() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) ++pos_;
    const std::string_view name = text_.substr(start, pos_ - start);
    if (name == "x") {
      auto n = std::make_shared<Expression::Node>();
      n->op = Op::Var;
      return n;
    }
    if (name == "pi") return make_const(std::numbers::pi);
    if (name == "e") return make_const(std::numbers::e);

    struct Unary {
      std::string_view name;
      Op op;
    };
    static constexpr Unary kUnary[] = {{"exp", Op::Exp}, {"ln", Op::Ln},   {"log", Op::Ln},
                                       {"sqrt", Op::Sqrt}, {"sin", Op::Sin}, {"cos", Op::Cos},
                                       {"tan", Op::Tan}, {"abs", Op::Abs}};
    for (const auto& u : kUnary) {
      if (name == u.name) {
        expect('(');
        NodePtr arg = expr();
        expect(')');
        return make(u.op, arg);
      }
    }
    if (name == "pow") {
      expect('(');
      NodePtr base = expr();
      expect(',');
      NodePtr exponent = expr();
      expect(')');
      return make(Op::Pow, base, exponent);
    }
    pos_ = start;
    fail("unknown identifier '" + std::string(name) + "'");
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace

Expression Expression::parse(std::string_view text) {
  return Expression(Parser(text).parse(), std::string(text));
}

Expression Expression::constant(double value) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  (void)ec;
  return Expression(make_const(value), std::string(buf, end));
}

double Expression::operator()(double x) const {
  if (root_->op == Op::Const) return root_->value;
  return eval(*root_, x);
}

bool Expression::is_constant() const { return root_->op == Op::Const; }

double Expression::constant_value() const {
  return is_constant() ? root_->value : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace qsdlab
