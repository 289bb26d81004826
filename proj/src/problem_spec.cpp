#include "canon_hjb/problem_spec.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "canon_hjb/errors.hpp"
#include "canon_hjb/tape.hpp"
#include "canon_hjb/value_solver.hpp"

namespace canon_hjb {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (const char c : s) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> s{
      {"problem", {"dimension", "horizon", "t", "x", "p", "xbox", "pbox", "vbox"}},
      {"hamiltonian", {"expression"}},
      {"lagrangian", {"expression"}},
      {"terminal", {"expression"}},
      {"certificate", {"samples", "directions", "seed", "mu_min", "alpha_max", "threshold_tol"}},
      {"grid", {"box", "nodes", "cfl", "max_speed", "snapshot_stride"}},
      {"integrator", {"step", "tol", "starts", "seed", "scan_points", "mesh_points", "ybox"}},
  };
  return s;
}

class Reader {
 public:
  explicit Reader(const IniDocument& doc) : doc_(doc) {}

  const std::string* raw(const std::string& sec, const std::string& key) const {
    const auto s = doc_.find(sec);
    if (s == doc_.end()) return nullptr;
    const auto k = s->second.find(key);
    return k == s->second.end() ? nullptr : &k->second;
  }

  const std::string& required(const std::string& sec, const std::string& key) const {
    if (!doc_.count(sec)) throw InputError("missing section [" + sec + "]");
    const std::string* v = raw(sec, key);
    if (!v) throw InputError("[" + sec + "] missing key '" + key + "'");
    return *v;
  }

  // Numbers are constant expressions, so "2*pi" is accepted.
  static double number(const std::string& text, const std::string& sec, const std::string& key) {
    try {
      const Tape tape(parse_expression(text, 1, FamilySet{}));
      const double v = tape.value({});
      if (!std::isfinite(v)) throw InputError("not finite");
      return v;
    } catch (const std::exception& e) {
      throw InputError("[" + sec + "] " + key + ": '" + text + "' is not a number (" + e.what() + ")");
    }
  }

  static long long integer(const std::string& text, const std::string& sec, const std::string& key) {
    const double v = number(text, sec, key);
    if (v != std::floor(v) || std::abs(v) > 9e15) throw InputError("[" + sec + "] " + key + " must be an integer");
    return static_cast<long long>(v);
  }

  double num(const std::string& sec, const std::string& key, double fallback) const {
    const std::string* v = raw(sec, key);
    return v ? number(*v, sec, key) : fallback;
  }

  long long integer(const std::string& sec, const std::string& key, long long fallback) const {
    const std::string* v = raw(sec, key);
    return v ? integer(*v, sec, key) : fallback;
  }

  std::vector<double> list(const std::string& sec, const std::string& key, int dim) const {
    const std::string* v = raw(sec, key);
    if (!v) return {};
    std::vector<double> out;
    for (const auto& item : split(*v, ',')) out.push_back(number(item, sec, key));
    if (out.size() == 1 && dim > 1) out.assign(dim, out[0]);
    if (static_cast<int>(out.size()) != dim) {
      throw InputError("[" + sec + "] " + key + " needs 1 or " + std::to_string(dim) + " entries");
    }
    return out;
  }

  std::optional<Box> box(const std::string& sec, const std::string& key, int dim) const {
    const std::string* v = raw(sec, key);
    if (!v) return std::nullopt;
    Box b;
    for (const auto& item : split(*v, ',')) {
      const auto parts = split(item, ':');
      if (parts.size() != 2) throw InputError("[" + sec + "] " + key + ": expected lo:hi pairs, got '" + item + "'");
      b.lo.push_back(number(parts[0], sec, key));
      b.hi.push_back(number(parts[1], sec, key));
    }
    if (b.lo.size() == 1 && dim > 1) b = Box::cube(dim, b.lo[0], b.hi[0]);
    if (b.dim() != dim) throw InputError("[" + sec + "] " + key + " needs 1 or " + std::to_string(dim) + " intervals");
    for (int k = 0; k < dim; ++k) {
      if (!(b.lo[k] < b.hi[k])) throw InputError("[" + sec + "] " + key + ": empty interval on axis " + std::to_string(k + 1));
    }
    return b;
  }

  Expr expression(const std::string& sec, int dim, FamilySet families) const {
    const std::string& src = required(sec, "expression");
    try {
      return parse_expression(src, dim, families);
    } catch (const InputError& e) {
      throw InputError("[" + sec + "] " + e.what());
    }
  }

 private:
  const IniDocument& doc_;
};

std::string canonical_text(const IniDocument& doc, const ProblemSpec& spec) {
  std::ostringstream out;
  for (const auto& [sec, keys] : doc) {
    out << '[' << sec << "]\n";
    for (const auto& [key, value] : keys) {
      std::string v = value;
      if (key == "expression") {
        if (sec == "hamiltonian") v = spec.hamiltonian->to_string();
        if (sec == "lagrangian") v = spec.lagrangian->to_string();
        if (sec == "terminal") v = spec.terminal.to_string();
      } else {
        v.erase(std::remove_if(v.begin(), v.end(), [](char c) { return c == ' ' || c == '\t'; }), v.end());
      }
      out << key << '=' << v << '\n';
    }
  }
  return out.str();
}

}  // namespace

IniDocument parse_ini(const std::string& text) {
  IniDocument doc;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw InputError("line " + std::to_string(lineno) + ": unterminated section header");
      section = trim(std::string_view(t).substr(1, t.size() - 2));
      if (section.empty()) throw InputError("line " + std::to_string(lineno) + ": empty section name");
      if (doc.count(section)) throw InputError("duplicate section [" + section + "]");
      doc[section];
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw InputError("line " + std::to_string(lineno) + ": expected key = value");
    if (section.empty()) throw InputError("line " + std::to_string(lineno) + ": key outside any section");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) throw InputError("line " + std::to_string(lineno) + ": empty key");
    if (doc[section].count(key)) throw InputError("[" + section + "] duplicate key '" + key + "'");
    doc[section][key] = value;
  }
  return doc;
}

ProblemSpec parse_spec(const std::string& text) {
  const IniDocument doc = parse_ini(text);
  for (const auto& [sec, keys] : doc) {
    const auto it = schema().find(sec);
    if (it == schema().end()) throw InputError("unknown section [" + sec + "]");
    for (const auto& [key, value] : keys) {
      if (!it->second.count(key)) throw InputError("[" + sec + "] unknown key '" + key + "'");
    }
  }
  const Reader r(doc);
  ProblemSpec s;
  s.dim = static_cast<int>(Reader::integer(r.required("problem", "dimension"), "problem", "dimension"));
  if (s.dim < 1 || s.dim > 4) throw InputError("[problem] dimension must be between 1 and 4");
  s.horizon = Reader::number(r.required("problem", "horizon"), "problem", "horizon");
  if (!(s.horizon > 0.0)) throw InputError("[problem] horizon must be positive");
  s.t = r.num("problem", "t", 0.0);
  if (!(s.t < s.horizon)) throw InputError("[problem] t must be below the horizon");
  s.x = r.list("problem", "x", s.dim);
  if (s.x.empty()) s.x.assign(s.dim, 0.0);
  s.p = r.list("problem", "p", s.dim);
  if (s.p.empty()) s.p.assign(s.dim, 0.0);
  r.required("problem", "xbox");
  s.xbox = *r.box("problem", "xbox", s.dim);
  s.pbox = r.box("problem", "pbox", s.dim).value_or(s.xbox);
  s.vbox = r.box("problem", "vbox", s.dim).value_or(s.pbox);

  const bool has_h = doc.count("hamiltonian") > 0;
  const bool has_l = doc.count("lagrangian") > 0;
  if (has_h == has_l) throw InputError("exactly one of [hamiltonian] and [lagrangian] is required");
  if (has_h) s.hamiltonian = r.expression("hamiltonian", s.dim, kHamiltonianVars);
  if (has_l) s.lagrangian = r.expression("lagrangian", s.dim, kLagrangianVars);
  s.terminal = r.expression("terminal", s.dim, kTerminalVars);

  CertificateParams& c = s.certificate;
  c.samples = static_cast<int>(r.integer("certificate", "samples", c.samples));
  c.directions = static_cast<int>(r.integer("certificate", "directions", c.directions));
  c.seed = static_cast<std::uint64_t>(r.integer("certificate", "seed", static_cast<long long>(c.seed)));
  c.mu_min = r.num("certificate", "mu_min", c.mu_min);
  c.alpha_max = r.num("certificate", "alpha_max", c.alpha_max);
  c.threshold_tol = r.num("certificate", "threshold_tol", c.threshold_tol);
  if (c.samples < 1 || c.directions < 0) throw InputError("[certificate] samples must be ≥ 1 and directions ≥ 0");
  if (!(c.mu_min > 0.0)) throw InputError("[certificate] mu_min must be positive");
  if (!(c.alpha_max >= 0.0) || !(c.threshold_tol > 0.0)) {
    throw InputError("[certificate] alpha_max must be ≥ 0 and threshold_tol positive");
  }

  GridParams& g = s.grid;
  g.box = r.box("grid", "box", s.dim);
  const std::string* nodes = r.raw("grid", "nodes");
  if (nodes) {
    for (const double v : r.list("grid", "nodes", s.dim)) {
      if (v != std::floor(v) || v < 3 || v > 1e8) throw InputError("[grid] nodes must be integers ≥ 3");
      g.nodes.push_back(static_cast<int>(v));
    }
  } else {
    g.nodes.assign(s.dim, 201);
  }
  g.cfl = r.num("grid", "cfl", g.cfl);
  if (r.raw("grid", "max_speed")) g.max_speed = r.list("grid", "max_speed", s.dim);
  g.snapshot_stride = static_cast<int>(r.integer("grid", "snapshot_stride", 0));
  if (g.snapshot_stride < 0) throw InputError("[grid] snapshot_stride must be ≥ 0");

  IntegratorParams& in = s.integrator;
  in.step = r.num("integrator", "step", in.step);
  in.tol = r.num("integrator", "tol", in.tol);
  in.starts = static_cast<int>(r.integer("integrator", "starts", in.starts));
  in.seed = static_cast<std::uint64_t>(r.integer("integrator", "seed", static_cast<long long>(in.seed)));
  in.scan_points = static_cast<int>(r.integer("integrator", "scan_points", 0));
  in.mesh_points = static_cast<int>(r.integer("integrator", "mesh_points", in.mesh_points));
  in.y_box = r.box("integrator", "ybox", s.dim);
  if (!(in.step > 0.0) || !(in.tol > 0.0)) throw InputError("[integrator] step and tol must be positive");
  if (in.starts < 1 || in.scan_points < 0 || in.mesh_points < 2) {
    throw InputError("[integrator] starts ≥ 1, scan_points ≥ 0 and mesh_points ≥ 2 are required");
  }

  s.canonical = canonical_text(doc, s);
  return s;
}

ProblemSpec load_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open spec file '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_spec(text.str());
}

HamiltonianModel ProblemSpec::hamiltonian_model() const {
  if (hamiltonian) return HamiltonianModel(*hamiltonian);
  return HamiltonianModel::from_lagrangian(LagrangianModel(*lagrangian));
}

LagrangianModel ProblemSpec::lagrangian_model() const {
  if (!lagrangian) throw InputError("this method needs a [lagrangian] section");
  return LagrangianModel(*lagrangian);
}

std::string ProblemSpec::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(std::string_view(canonical))));
  return buf;
}

}  // namespace canon_hjb
