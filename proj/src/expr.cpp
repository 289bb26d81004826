#include "canon_hjb/expr.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <numbers>

#include "canon_hjb/errors.hpp"

namespace canon_hjb {

namespace {

constexpr std::array<std::pair<std::string_view, Func>, 9> kFuncs{{
    {"sin", Func::sin},
    {"cos", Func::cos},
    {"tan", Func::tan},
    {"exp", Func::exp},
    {"log", Func::log},
    {"sqrt", Func::sqrt},
    {"sinh", Func::sinh},
    {"cosh", Func::cosh},
    {"tanh", Func::tanh},
}};

int slot_of(Family f, int index, int dim) { return f == Family::x ? index : dim + index; }

NodePtr make(Node n) { return std::make_shared<const Node>(std::move(n)); }

class Parser {
 public:
  Parser(std::string_view src, int dim, FamilySet families)
      : src_(src), dim_(dim), families_(families) {}

  NodePtr parse() {
    auto e = parse_sum();
    skip_ws();
    if (pos_ != src_.size()) throw ParseError("unexpected '" + std::string(1, src_[pos_]) + "'", pos_);
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

  void expect(char c) {
    if (!accept(c)) {
      if (pos_ >= src_.size()) throw ParseError(std::string("expected '") + c + "' but input ended", pos_);
      throw ParseError(std::string("expected '") + c + "'", pos_);
    }
  }

  NodePtr parse_sum() {
    auto lhs = parse_product();
    for (;;) {
      if (accept('+')) {
        lhs = build::add(lhs, parse_product());
      } else if (accept('-')) {
        lhs = build::sub(lhs, parse_product());
      } else {
        return lhs;
      }
    }
  }

  NodePtr parse_product() {
    auto lhs = parse_unary();
    for (;;) {
      if (accept('*')) {
        lhs = build::mul(lhs, parse_unary());
      } else if (accept('/')) {
        Node n;
        n.kind = Node::Kind::div;
        n.children = {lhs, parse_unary()};
        lhs = make(std::move(n));
      } else {
        return lhs;
      }
    }
  }

  NodePtr parse_unary() {
    if (accept('-')) return build::negate(parse_unary());
    return parse_power();
  }

  NodePtr parse_power() {
    auto base = parse_primary();
    if (!accept('^')) return base;
    skip_ws();
    const auto at = pos_;
    const bool paren = accept('(');
    const bool negative = accept('-');
    skip_ws();
    const auto num_at = pos_;
    const double e = parse_number_literal();
    if (paren) expect(')');
    if (e != std::floor(e) || std::abs(e) > 1024) {
      throw ParseError("exponent must be an integer constant", num_at);
    }
    (void)at;
    Node n;
    n.kind = Node::Kind::pow;
    n.exponent = static_cast<int>(negative ? -e : e);
    n.children = {base};
    skip_ws();
    if (pos_ < src_.size() && src_[pos_] == '^') {
      throw ParseError("chained '^' is ambiguous, use parentheses", pos_);
    }
    return make(std::move(n));
  }

  double parse_number_literal() {
    skip_ws();
    const auto start = pos_;
    while (pos_ < src_.size() && (std::isdigit(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '.')) {
      ++pos_;
    }
    if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      auto q = pos_ + 1;
      if (q < src_.size() && (src_[q] == '+' || src_[q] == '-')) ++q;
      if (q < src_.size() && std::isdigit(static_cast<unsigned char>(src_[q]))) {
        pos_ = q;
        while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
      }
    }
    if (start == pos_) throw ParseError("expected a number", start);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(src_.data() + start, src_.data() + pos_, v);
    if (ec != std::errc() || ptr != src_.data() + pos_) throw ParseError("malformed number", start);
    return v;
  }

  NodePtr parse_primary() {
    skip_ws();
    if (pos_ >= src_.size()) throw ParseError("unexpected end of input", pos_);
    const char c = src_[pos_];
    if (c == '(') {
      ++pos_;
      auto e = parse_sum();
      expect(')');
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      return build::constant(parse_number_literal());
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      const auto start = pos_;
      while (pos_ < src_.size() &&
             (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
        ++pos_;
      }
      return identifier(src_.substr(start, pos_ - start), start);
    }
    throw ParseError("unexpected '" + std::string(1, c) + "'", pos_);
  }

  NodePtr identifier(std::string_view id, std::size_t at) {
    for (auto [name, f] : kFuncs) {
      if (id == name) {
        if (!accept('(')) throw ParseError("expected '(' after " + std::string(id), pos_);
        Node n;
        n.kind = Node::Kind::call;
        n.func = f;
        n.children = {parse_sum()};
        expect(')');
        return make(std::move(n));
      }
    }
    if (id == "pi" || id == "e") {
      Node n;
      n.kind = Node::Kind::constant;
      n.value = id == "pi" ? std::numbers::pi : std::numbers::e;
      n.name = std::string(id);
      return make(std::move(n));
    }
    if (id.size() >= 2 && (id[0] == 'x' || id[0] == 'p' || id[0] == 'v')) {
      const auto digits = id.substr(1);
      int idx = 0;
      auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), idx);
      if (ec == std::errc() && ptr == digits.data() + digits.size() && digits[0] != '0') {
        const Family f = id[0] == 'x' ? Family::x : id[0] == 'p' ? Family::p : Family::v;
        if (!families_.contains(f)) {
          throw InputError("variable '" + std::string(id) + "' at byte " + std::to_string(at) +
                           ": family '" + id[0] + "' is not allowed here");
        }
        if (idx < 1 || idx > dim_) {
          throw InputError("variable '" + std::string(id) + "' at byte " + std::to_string(at) +
                           ": index out of range for dimension " + std::to_string(dim_));
        }
        return build::variable(f, idx - 1, dim_);
      }
    }
    throw InputError("unknown identifier '" + std::string(id) + "' at byte " + std::to_string(at));
  }

  std::string_view src_;
  int dim_;
  FamilySet families_;
  std::size_t pos_ = 0;
};

// Binding strength used by the printer; higher binds tighter.
int precedence(const Node& n) {
  switch (n.kind) {
    case Node::Kind::add:
    case Node::Kind::sub:
      return 1;
    case Node::Kind::mul:
    case Node::Kind::div:
      return 2;
    case Node::Kind::negate:
      return 3;
    case Node::Kind::pow:
      return 4;
    default:
      return 5;
  }
}

void print(const Node& n, std::string& out);

void print_wrapped(const Node& n, bool parens, std::string& out) {
  if (parens) out += '(';
  print(n, out);
  if (parens) out += ')';
}

void print(const Node& n, std::string& out) {
  switch (n.kind) {
    case Node::Kind::constant: {
      if (!n.name.empty()) {
        out += n.name;
        break;
      }
      std::array<char, 32> buf{};
      auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), std::abs(n.value));
      if (n.value < 0 || std::signbit(n.value)) out += "(-";
      out.append(buf.data(), ptr);
      if (n.value < 0 || std::signbit(n.value)) out += ')';
      break;
    }
    case Node::Kind::variable:
      out += n.family == Family::x ? 'x' : n.family == Family::p ? 'p' : 'v';
      out += std::to_string(n.index + 1);
      break;
    case Node::Kind::negate:
      out += '-';
      print_wrapped(*n.children[0], precedence(*n.children[0]) < 3, out);
      break;
    case Node::Kind::pow:
      print_wrapped(*n.children[0], precedence(*n.children[0]) < 5, out);
      out += '^';
      if (n.exponent < 0) {
        out += "(-" + std::to_string(-n.exponent) + ")";
      } else {
        out += std::to_string(n.exponent);
      }
      break;
    case Node::Kind::call:
      out += func_name(n.func);
      out += '(';
      print(*n.children[0], out);
      out += ')';
      break;
    default: {
      const int p = precedence(n);
      print_wrapped(*n.children[0], precedence(*n.children[0]) < p, out);
      switch (n.kind) {
        case Node::Kind::add: out += " + "; break;
        case Node::Kind::sub: out += " - "; break;
        case Node::Kind::mul: out += '*'; break;
        default: out += '/'; break;
      }
      print_wrapped(*n.children[1], precedence(*n.children[1]) <= p, out);
    }
  }
}

}  // namespace

std::string_view func_name(Func f) {
  for (auto [name, g] : kFuncs) {
    if (g == f) return name;
  }
  return "?";
}

bool structurally_equal(const Node& a, const Node& b) {
  if (a.kind != b.kind || a.children.size() != b.children.size()) return false;
  switch (a.kind) {
    case Node::Kind::constant:
      if (a.name != b.name || a.value != b.value) return false;
      break;
    case Node::Kind::variable:
      if (a.family != b.family || a.index != b.index || a.slot != b.slot) return false;
      break;
    case Node::Kind::pow:
      if (a.exponent != b.exponent) return false;
      break;
    case Node::Kind::call:
      if (a.func != b.func) return false;
      break;
    default:
      break;
  }
  for (std::size_t i = 0; i < a.children.size(); ++i) {
    if (!structurally_equal(*a.children[i], *b.children[i])) return false;
  }
  return true;
}

Expr::Expr(NodePtr root, int dim, FamilySet families)
    : root_(std::move(root)), dim_(dim), families_(families) {}

std::string Expr::to_string() const { return canon_hjb::to_string(*root_); }

std::string to_string(const Node& node) {
  std::string out;
  print(node, out);
  return out;
}

Expr parse_expression(std::string_view src, int dim, FamilySet families) {
  if (dim < 1) throw InputError("dimension must be positive");
  bool blank = true;
  for (char c : src) blank = blank && std::isspace(static_cast<unsigned char>(c));
  if (blank) throw InputError("empty expression");
  Parser parser(src, dim, families);
  return Expr(parser.parse(), dim, families);
}

namespace build {

NodePtr constant(double v) {
  if (std::signbit(v)) return negate(constant(-v));
  Node n;
  n.kind = Node::Kind::constant;
  n.value = v;
  return make(std::move(n));
}

NodePtr variable(Family f, int index, int dim) {
  Node n;
  n.kind = Node::Kind::variable;
  n.family = f;
  n.index = index;
  n.slot = slot_of(f, index, dim);
  return make(std::move(n));
}

NodePtr negate(NodePtr a) {
  Node n;
  n.kind = Node::Kind::negate;
  n.children = {std::move(a)};
  return make(std::move(n));
}

NodePtr add(NodePtr a, NodePtr b) {
  Node n;
  n.kind = Node::Kind::add;
  n.children = {std::move(a), std::move(b)};
  return make(std::move(n));
}

NodePtr sub(NodePtr a, NodePtr b) {
  Node n;
  n.kind = Node::Kind::sub;
  n.children = {std::move(a), std::move(b)};
  return make(std::move(n));
}

NodePtr mul(NodePtr a, NodePtr b) {
  Node n;
  n.kind = Node::Kind::mul;
  n.children = {std::move(a), std::move(b)};
  return make(std::move(n));
}

NodePtr dot(Family a, Family b, int dim) {
  NodePtr sum = mul(variable(a, 0, dim), variable(b, 0, dim));
  for (int i = 1; i < dim; ++i) sum = add(sum, mul(variable(a, i, dim), variable(b, i, dim)));
  return sum;
}

}  // namespace build

NodePtr substitute(const NodePtr& node, const std::vector<NodePtr>& replacement) {
  if (node->kind == Node::Kind::variable) {
    const auto s = static_cast<std::size_t>(node->slot);
    return s < replacement.size() && replacement[s] ? replacement[s] : node;
  }
  if (node->children.empty()) return node;
  Node copy = *node;
  for (auto& c : copy.children) c = substitute(c, replacement);
  return make(std::move(copy));
}

}  // namespace canon_hjb
