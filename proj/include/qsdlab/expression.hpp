#pragma once

#include <memory>
#include <string>
#include <string_view>

namespace qsdlab {

/// Grammar version written into reports next to every parsed expression.
inline constexpr int kExpressionGrammarVersion = 1;

/// A real function of one variable `x`, parsed from text.
///
/// Grammar (version 1):
///
///     expr    := term (('+' | '-') term)*
///     term    := unary (('*' | '/') unary)*
///     unary   := ('+' | '-') unary | power
///     power   := primary ('^' unary)?          right-associative
///     primary := number | 'x' | 'pi' | 'e' | '(' expr ')'
///              | name '(' expr (',' expr)? ')'
///     name    := exp | ln | log | sqrt | sin | cos | tan | abs | pow
///
/// Sub-expressions without `x` are folded to constants at parse time.
class Expression {
 public:
  /// Parses `text`; throws Error{ExpressionParse} with the offending position.
  static Expression parse(std::string_view text);
  static Expression constant(double value);

  double operator()(double x) const;

  bool is_constant() const;
  /// Value of a constant expression (NaN otherwise).
  double constant_value() const;
  const std::string& text() const { return text_; }

  struct Node;

 private:
  Expression(std::shared_ptr<const Node> root, std::string text)
      : root_(std::move(root)), text_(std::move(text)) {}

  std::shared_ptr<const Node> root_;
  std::string text_;
};

}  // namespace qsdlab
