#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace canon_hjb {

/// Variable families: states x, momenta p, velocities v.
enum class Family : std::uint8_t { x = 1, p = 2, v = 4 };

/// Bit set of legal families for an expression.
class FamilySet {
 public:
  constexpr FamilySet() = default;
  constexpr FamilySet(std::initializer_list<Family> fs) {
    for (auto f : fs) bits_ |= static_cast<std::uint8_t>(f);
  }
  constexpr bool contains(Family f) const { return bits_ & static_cast<std::uint8_t>(f); }
  constexpr int size() const { return (bits_ & 1) + ((bits_ >> 1) & 1) + ((bits_ >> 2) & 1); }
  constexpr bool operator==(const FamilySet&) const = default;

 private:
  std::uint8_t bits_ = 0;
};

inline constexpr FamilySet kHamiltonianVars{Family::x, Family::p};
inline constexpr FamilySet kLagrangianVars{Family::x, Family::v};
inline constexpr FamilySet kTerminalVars{Family::x};

enum class Func : std::uint8_t { sin, cos, tan, exp, log, sqrt, sinh, cosh, tanh };

std::string_view func_name(Func f);

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
  enum class Kind : std::uint8_t { constant, variable, negate, add, sub, mul, div, pow, call };

  Kind kind = Kind::constant;
  double value = 0.0;    // constant
  std::string name;      // constant: "pi" / "e" when written symbolically
  Family family = Family::x;  // variable
  int index = 0;         // variable: 0-based index within the family
  int slot = 0;          // variable: position in the evaluation point
  int exponent = 0;      // pow
  Func func = Func::sin; // call
  std::vector<NodePtr> children;
};

bool structurally_equal(const Node& a, const Node& b);

/// Immutable scalar field over x1..xd and optionally p1..pd or v1..vd.
///
/// The evaluation point is laid out as (x1..xd, p1..pd) or (x1..xd, v1..vd),
/// so a Hamiltonian has 2d inputs and a terminal cost d inputs.
class Expr {
 public:
  Expr() = default;
  Expr(NodePtr root, int dim, FamilySet families);

  const Node& root() const { return *root_; }
  const NodePtr& root_ptr() const { return root_; }
  int dim() const { return dim_; }
  FamilySet families() const { return families_; }
  int num_vars() const { return dim_ * families_.size(); }

  /// Canonical text form; parse(to_string()) reproduces the same tree.
  std::string to_string() const;

  friend bool operator==(const Expr& a, const Expr& b) {
    return a.dim_ == b.dim_ && a.families_ == b.families_ && structurally_equal(*a.root_, *b.root_);
  }

 private:
  NodePtr root_;
  int dim_ = 0;
  FamilySet families_;
};

/// Parse `src` with the usual precedence (^ binds tighter than unary minus,
/// which binds tighter than * and /, then + and -). Throws ParseError for
/// syntax problems and InputError for unknown identifiers, out-of-range
/// indices or families not in `families`.
Expr parse_expression(std::string_view src, int dim, FamilySet families);

std::string to_string(const Node& node);

// Builders used to assemble derived fields (materialized shifts, corollary variants).
namespace build {
NodePtr constant(double v);
NodePtr variable(Family f, int index, int dim);
NodePtr negate(NodePtr a);
NodePtr add(NodePtr a, NodePtr b);
NodePtr sub(NodePtr a, NodePtr b);
NodePtr mul(NodePtr a, NodePtr b);
/// Σ_i a_i · b_i over the given families.
NodePtr dot(Family a, Family b, int dim);
}  // namespace build

/// Replace variables by subtrees; `replacement[slot]` null keeps the variable.
NodePtr substitute(const NodePtr& node, const std::vector<NodePtr>& replacement);

}  // namespace canon_hjb
