#include "medrag/expr.hpp"

#include <cctype>
#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "medrag/error.hpp"

namespace medrag::lab {

namespace {

using Kind = ExprNode::Kind;

struct Token {
  enum class Type { Number, Ident, Plus, Minus, Star, Slash, LParen, RParen, Comma, End };
  Type type = Type::End;
  std::size_t offset = 0;
  std::string text;
  double number = 0.0;
};

std::vector<Token> lex(std::string_view src) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  auto digit = [&](std::size_t at) {
    return at < src.size() && std::isdigit(static_cast<unsigned char>(src[at]));
  };
  while (i < src.size()) {
    const char c = src[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    Token t;
    t.offset = i;
    if (digit(i)) {
      std::size_t j = i;
      while (digit(j)) ++j;
      if (j < src.size() && src[j] == '.') {
        if (!digit(j + 1)) throw SyntaxError(j, "expected digits after '.'");
        ++j;
        while (digit(j)) ++j;
      }
      if (j < src.size() && (src[j] == 'e' || src[j] == 'E')) {
        std::size_t k = j + 1;
        if (k < src.size() && (src[k] == '+' || src[k] == '-')) ++k;
        if (!digit(k)) throw SyntaxError(j, "malformed exponent");
        while (digit(k)) ++k;
        j = k;
      }
      t.type = Token::Type::Number;
      t.text = std::string(src.substr(i, j - i));
      t.number = std::strtod(t.text.c_str(), nullptr);
      if (!std::isfinite(t.number)) throw SyntaxError(i, "number out of range");
      i = j;
    } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < src.size() &&
             (std::isalnum(static_cast<unsigned char>(src[j])) || src[j] == '_')) {
        ++j;
      }
      t.type = Token::Type::Ident;
      t.text = std::string(src.substr(i, j - i));
      i = j;
    } else {
      switch (c) {
        case '+': t.type = Token::Type::Plus; break;
        case '-': t.type = Token::Type::Minus; break;
        case '*': t.type = Token::Type::Star; break;
        case '/': t.type = Token::Type::Slash; break;
        case '(': t.type = Token::Type::LParen; break;
        case ')': t.type = Token::Type::RParen; break;
        case ',': t.type = Token::Type::Comma; break;
        default: throw SyntaxError(i, fmt::format("unexpected character '{}'", c));
      }
      t.text = std::string(1, c);
      ++i;
    }
    tokens.push_back(std::move(t));
  }
  Token end;
  end.offset = src.size();
  tokens.push_back(end);
  return tokens;
}

class Parser {
 public:
  explicit Parser(std::vector<Token> tokens) : tokens_(std::move(tokens)) {}

  ExprNode parse() {
    ExprNode root = expr();
    if (peek().type != Token::Type::End) {
      throw SyntaxError(peek().offset, "unexpected '" + peek().text + "'");
    }
    return root;
  }

 private:
  const Token& peek() const { return tokens_[pos_]; }
  const Token& take() { return tokens_[pos_++]; }

  void expect(Token::Type type, std::string_view what) {
    if (peek().type != type) {
      throw SyntaxError(peek().offset, fmt::format("expected {}", what));
    }
    ++pos_;
  }

  static ExprNode binary(Kind kind, ExprNode lhs, ExprNode rhs) {
    ExprNode n;
    n.kind = kind;
    n.children.push_back(std::move(lhs));
    n.children.push_back(std::move(rhs));
    return n;
  }

  ExprNode expr() {
    ExprNode lhs = term();
    while (peek().type == Token::Type::Plus || peek().type == Token::Type::Minus) {
      const Kind kind = take().type == Token::Type::Plus ? Kind::Add : Kind::Sub;
      lhs = binary(kind, std::move(lhs), term());
    }
    return lhs;
  }

  ExprNode term() {
    ExprNode lhs = factor();
    while (peek().type == Token::Type::Star || peek().type == Token::Type::Slash) {
      const Kind kind = take().type == Token::Type::Star ? Kind::Mul : Kind::Div;
      lhs = binary(kind, std::move(lhs), factor());
    }
    return lhs;
  }

  ExprNode factor() {
    const Token& t = peek();
    ExprNode n;
    switch (t.type) {
      case Token::Type::Number:
        n.kind = Kind::Number;
        n.number = take().number;
        return n;
      case Token::Type::LParen: {
        take();
        n = expr();
        expect(Token::Type::RParen, "')'");
        return n;
      }
      case Token::Type::Ident: {
        const Token& name = take();
        if (peek().type != Token::Type::LParen) {
          n.kind = Kind::Ident;
          n.ident = name.text;
          return n;
        }
        if (name.text == "min") {
          n.kind = Kind::Min;
        } else if (name.text == "max") {
          n.kind = Kind::Max;
        } else if (name.text == "abs") {
          n.kind = Kind::Abs;
        } else {
          fail(ErrorCode::UnknownFunction,
               fmt::format("unknown function '{}' at offset {}", name.text, name.offset));
        }
        take();
        n.children.push_back(expr());
        while (peek().type == Token::Type::Comma) {
          take();
          n.children.push_back(expr());
        }
        expect(Token::Type::RParen, "')'");
        const bool arity_ok = n.kind == Kind::Abs ? n.children.size() == 1 : n.children.size() >= 2;
        if (!arity_ok) {
          throw SyntaxError(name.offset, fmt::format("wrong number of arguments to {}", name.text));
        }
        return n;
      }
      default:
        throw SyntaxError(t.offset, t.type == Token::Type::End
                                        ? std::string("unexpected end of expression")
                                        : "unexpected '" + t.text + "'");
    }
  }

  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
};

bool is_binary(Kind k) {
  return k == Kind::Add || k == Kind::Sub || k == Kind::Mul || k == Kind::Div;
}

void print(const ExprNode& n, std::string& out) {
  switch (n.kind) {
    case Kind::Number: out += fmt::format("{}", n.number); return;
    case Kind::Ident: out += n.ident; return;
    case Kind::Min:
    case Kind::Max:
    case Kind::Abs: {
      out += n.kind == Kind::Min ? "min(" : n.kind == Kind::Max ? "max(" : "abs(";
      for (std::size_t i = 0; i < n.children.size(); ++i) {
        if (i) out += ", ";
        print(n.children[i], out);
      }
      out += ')';
      return;
    }
    default: {
      static constexpr std::string_view kOps[] = {" + ", " - ", " * ", " / "};
      const auto op = kOps[static_cast<int>(n.kind) - static_cast<int>(Kind::Add)];
      for (std::size_t i = 0; i < 2; ++i) {
        const bool wrap = is_binary(n.children[i].kind);
        if (wrap) out += '(';
        print(n.children[i], out);
        if (wrap) out += ')';
        if (i == 0) out += op;
      }
    }
  }
}

void collect(const ExprNode& n, std::set<std::string>& out) {
  if (n.kind == Kind::Ident) out.insert(n.ident);
  for (const auto& c : n.children) collect(c, out);
}

scoring::Score eval(const ExprNode& n, const Resolver& resolve) {
  switch (n.kind) {
    case Kind::Number: return n.number;
    case Kind::Ident: {
      auto v = resolve(n.ident);
      if (!v) fail(ErrorCode::UnresolvedIdent, "unknown feature '" + n.ident + "'");
      return *v;
    }
    default: break;
  }
  std::vector<double> args;
  args.reserve(n.children.size());
  bool missing = false;
  for (const auto& c : n.children) {
    // Keep evaluating so unresolved names are always reported.
    auto v = eval(c, resolve);
    if (!v) {
      missing = true;
    } else {
      args.push_back(*v);
    }
  }
  if (missing) return std::nullopt;
  double r = 0.0;
  switch (n.kind) {
    case Kind::Add: r = args[0] + args[1]; break;
    case Kind::Sub: r = args[0] - args[1]; break;
    case Kind::Mul: r = args[0] * args[1]; break;
    case Kind::Div:
      if (args[1] == 0.0) return std::nullopt;
      r = args[0] / args[1];
      break;
    case Kind::Min: r = *std::min_element(args.begin(), args.end()); break;
    case Kind::Max: r = *std::max_element(args.begin(), args.end()); break;
    case Kind::Abs: r = std::fabs(args[0]); break;
    default: break;
  }
  if (!std::isfinite(r)) return std::nullopt;
  return r;
}

}  // namespace

std::set<std::string> FeatureExpr::identifiers() const {
  std::set<std::string> out;
  collect(root_, out);
  return out;
}

FeatureExpr parse_expr(std::string_view source) {
  return FeatureExpr(Parser(lex(source)).parse());
}

std::string to_string(const FeatureExpr& expr) {
  std::string out;
  print(expr.root(), out);
  return out;
}

scoring::Score eval_expr(const FeatureExpr& expr, const Resolver& resolve) {
  return eval(expr.root(), resolve);
}

scoring::Score eval_expr(const FeatureExpr& expr, const scoring::FeatureVector& fv) {
  return eval_expr(expr, [&fv](std::string_view name) -> std::optional<scoring::Score> {
    const auto it = fv.values.find(std::string(name));
    if (it == fv.values.end()) return std::nullopt;
    return it->second;
  });
}

}  // namespace medrag::lab
