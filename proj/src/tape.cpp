#include "canon_hjb/tape.hpp"

#include <cmath>
#include <cstddef>
#include <string>
#include <type_traits>

#include "canon_hjb/errors.hpp"

namespace canon_hjb {

namespace {

[[noreturn]] void domain_error(const char* what, const Node* node) {
  throw DomainError(what, node ? to_string(*node) : std::string("?"));
}

template <class T>
T apply_func(Func f, T a, const Node* node) {
  const double x = value_of(a);
  constexpr bool value_only = std::is_same_v<T, double>;
  switch (f) {
    case Func::sin: {
      const double s = std::sin(x);
      if constexpr (value_only) return s;
      return chain(a, s, std::cos(x), -s);
    }
    case Func::cos: {
      const double c = std::cos(x);
      if constexpr (value_only) return c;
      return chain(a, c, -std::sin(x), -c);
    }
    case Func::tan: {
      if (std::cos(x) == 0.0) domain_error("tan at a pole", node);
      const double t = std::tan(x);
      if constexpr (value_only) return t;
      const double s = 1.0 + t * t;
      return chain(a, t, s, 2.0 * t * s);
    }
    case Func::exp: {
      const double e = std::exp(x);
      if constexpr (value_only) return e;
      return chain(a, e, e, e);
    }
    case Func::log: {
      if (!(x > 0.0)) domain_error("log of non-positive argument", node);
      if constexpr (value_only) return std::log(x);
      return chain(a, std::log(x), 1.0 / x, -1.0 / (x * x));
    }
    case Func::sqrt: {
      if (x < 0.0) domain_error("sqrt of negative argument", node);
      const double s = std::sqrt(x);
      if constexpr (value_only) {
        return s;
      } else {
        if (x == 0.0) domain_error("sqrt is not differentiable at 0", node);
        return chain(a, s, 0.5 / s, -0.25 / (s * x));
      }
    }
    case Func::sinh: {
      const double s = std::sinh(x);
      if constexpr (value_only) return s;
      return chain(a, s, std::cosh(x), s);
    }
    case Func::cosh: {
      const double c = std::cosh(x);
      if constexpr (value_only) return c;
      return chain(a, c, std::sinh(x), c);
    }
    case Func::tanh: {
      const double t = std::tanh(x);
      if constexpr (value_only) return t;
      const double s = 1.0 - t * t;
      return chain(a, t, s, -2.0 * t * s);
    }
  }
  return a;
}

double ipow(double x, int n) {
  if (n < 0) return 1.0 / ipow(x, -n);
  double out = 1.0;
  while (n) {
    if (n & 1) out *= x;
    x *= x;
    n >>= 1;
  }
  return out;
}

template <class T>
T apply_pow(T a, int n, const Node* node) {
  const double x = value_of(a);
  if (n < 0 && x == 0.0) domain_error("division by zero", node);
  if constexpr (std::is_same_v<T, double>) {
    return ipow(x, n);
  } else {
    if (n == 0) return chain(a, 1.0, 0.0, 0.0);
    // x^(n-2) once, then multiply up, so f0, f1, f2 stay consistent.
    const double low = n == 1 ? 0.0 : ipow(x, n - 2);
    const double f1 = n == 1 ? 1.0 : n * (low * x);
    const double f0 = n == 1 ? x : (low * x) * x;
    const double f2 = n == 1 ? 0.0 : n * (n - 1.0) * low;
    return chain(a, f0, f1, f2);
  }
}

}  // namespace

Tape::Tape(const Expr& expr) : num_vars_(expr.num_vars()), root_(expr.root_ptr()) {
  if (num_vars_ > kMaxVars) throw InputError("too many variables for evaluation");
  int depth = 0;
  compile(root_, depth);
}

void Tape::compile(const NodePtr& n, int& depth) {
  Instr in;
  in.node = n.get();
  switch (n->kind) {
    case Node::Kind::constant:
      in.op = Op::constant;
      in.value = n->value;
      break;
    case Node::Kind::variable:
      in.op = Op::variable;
      in.arg = n->slot;
      break;
    case Node::Kind::negate: in.op = Op::negate; break;
    case Node::Kind::add: in.op = Op::add; break;
    case Node::Kind::sub: in.op = Op::sub; break;
    case Node::Kind::mul: in.op = Op::mul; break;
    case Node::Kind::div: in.op = Op::div; break;
    case Node::Kind::pow:
      in.op = Op::pow;
      in.arg = n->exponent;
      break;
    case Node::Kind::call:
      in.op = Op::call;
      in.func = n->func;
      break;
  }
  const int base = depth;
  for (const auto& c : n->children) compile(c, depth);
  depth = base + 1;
  max_depth_ = std::max(max_depth_, depth + static_cast<int>(n->children.size()));
  code_.push_back(in);
}

template <class T>
T Tape::run(const T* inputs) const {
  constexpr int kInline = 64;
  // Uninitialized on purpose: every slot is written before it is read.
  alignas(T) std::byte fixed[kInline * sizeof(T)];
  std::vector<T> heap;
  T* stack = reinterpret_cast<T*>(fixed);
  if (max_depth_ > kInline) {
    heap.resize(static_cast<std::size_t>(max_depth_));
    stack = heap.data();
  }
  int top = 0;
  for (const Instr& in : code_) {
    switch (in.op) {
      case Op::constant:
        stack[top++] = T{in.value};
        break;
      case Op::variable:
        stack[top++] = inputs[in.arg];
        break;
      case Op::negate:
        stack[top - 1] = -stack[top - 1];
        break;
      case Op::add:
        --top;
        stack[top - 1] = stack[top - 1] + stack[top];
        break;
      case Op::sub:
        --top;
        stack[top - 1] = stack[top - 1] - stack[top];
        break;
      case Op::mul:
        --top;
        stack[top - 1] = stack[top - 1] * stack[top];
        break;
      case Op::div:
        --top;
        if (value_of(stack[top]) == 0.0) domain_error("division by zero", in.node);
        stack[top - 1] = stack[top - 1] / stack[top];
        break;
      case Op::pow:
        stack[top - 1] = apply_pow(stack[top - 1], in.arg, in.node);
        break;
      case Op::call:
        stack[top - 1] = apply_func(in.func, stack[top - 1], in.node);
        break;
    }
  }
  return top > 0 ? stack[0] : T{};
}

double Tape::value(std::span<const double> point) const { return run<double>(point.data()); }

Dual Tape::directional(std::span<const double> point, std::span<const double> direction) const {
  alignas(Dual) std::byte raw[kMaxVars * sizeof(Dual)];
  Dual* in = reinterpret_cast<Dual*>(raw);
  for (int i = 0; i < num_vars_; ++i) in[i] = {point[i], direction[i]};
  return run<Dual>(in);
}

DirJet Tape::directional2(std::span<const double> point, std::span<const double> direction) const {
  std::array<DirJet, kMaxVars> in{};
  for (int i = 0; i < num_vars_; ++i) in[i] = {point[i], direction[i], 0.0};
  return run<DirJet>(in.data());
}

void Tape::gradient(std::span<const double> point, std::span<double> out) const {
  std::array<Dual, kMaxVars> in{};
  for (int i = 0; i < num_vars_; ++i) in[i] = {point[i], 0.0};
  for (int i = 0; i < num_vars_; ++i) {
    in[i].d = 1.0;
    out[i] = run<Dual>(in.data()).d;
    in[i].d = 0.0;
  }
}

Jet2 Tape::jet2(std::span<const double> point) const {
  const auto n = static_cast<std::size_t>(num_vars_);
  Jet2 jet(n);
  std::array<DirJet, kMaxVars> in{};
  for (std::size_t i = 0; i < n; ++i) in[i] = {point[i], 0.0, 0.0};
  if (n == 0) {
    jet.value() = run<DirJet>(in.data()).v;
    return jet;
  }
  for (std::size_t i = 0; i < n; ++i) {
    in[i].d1 = 1.0;
    const DirJet r = run<DirJet>(in.data());
    in[i].d1 = 0.0;
    jet.value() = r.v;
    jet.gradient(i) = r.d1;
    jet.hessian(i, i) = r.d2;
  }
  // Polarization: D²f[e_i+e_j] = H_ii + 2 H_ij + H_jj.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      in[i].d1 = 1.0;
      in[j].d1 = 1.0;
      const DirJet r = run<DirJet>(in.data());
      in[i].d1 = 0.0;
      in[j].d1 = 0.0;
      jet.hessian(i, j) = 0.5 * (r.d2 - jet.hessian(i, i) - jet.hessian(j, j));
    }
  }
  return jet;
}

Jet2 eval_jet2(const Expr& expr, std::span<const double> point) {
  if (static_cast<int>(point.size()) != expr.num_vars()) {
    throw InputError("point has " + std::to_string(point.size()) + " entries, expression expects " +
                     std::to_string(expr.num_vars()));
  }
  return Tape(expr).jet2(point);
}

}  // namespace canon_hjb
