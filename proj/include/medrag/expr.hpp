#pragma once

#include <functional>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "medrag/scoring.hpp"

namespace medrag::lab {

// Grammar:
//   expr   := term (('+'|'-') term)*
//   term   := factor (('*'|'/') factor)*
//   factor := NUMBER | IDENT | '(' expr ')' | FUNC '(' expr (',' expr)* ')'
//   FUNC   := min | max | abs
struct ExprNode {
  enum class Kind { Number, Ident, Add, Sub, Mul, Div, Min, Max, Abs };

  Kind kind = Kind::Number;
  double number = 0.0;
  std::string ident;
  std::vector<ExprNode> children;

  friend bool operator==(const ExprNode&, const ExprNode&) = default;
};

class FeatureExpr {
 public:
  FeatureExpr() = default;
  explicit FeatureExpr(ExprNode root) : root_(std::move(root)) {}

  const ExprNode& root() const { return root_; }
  /// Identifiers referenced anywhere in the tree.
  std::set<std::string> identifiers() const;

  friend bool operator==(const FeatureExpr&, const FeatureExpr&) = default;

 private:
  ExprNode root_;
};

/// Throws SyntaxError (with byte offset) or UnknownFunction.
FeatureExpr parse_expr(std::string_view source);

/// Canonical text; parse_expr(to_string(e)) == e.
std::string to_string(const FeatureExpr& expr);

/// Looks up a feature; return std::nullopt from the outer optional when the
/// name is unknown, and an empty inner optional when the value is MISSING.
using Resolver = std::function<std::optional<scoring::Score>(std::string_view)>;

/// MISSING propagates, x/0 and non-finite results are MISSING. Throws
/// UnresolvedIdent for names the resolver does not know.
scoring::Score eval_expr(const FeatureExpr& expr, const Resolver& resolve);
scoring::Score eval_expr(const FeatureExpr& expr, const scoring::FeatureVector& fv);

}  // namespace medrag::lab
