#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>

#include "canon_hjb/certificate.hpp"
#include "canon_hjb/characteristics.hpp"
#include "canon_hjb/errors.hpp"
#include "canon_hjb/problem_spec.hpp"
#include "canon_hjb/value_solver.hpp"

namespace canon_hjb {

namespace {

using json = nlohmann::ordered_json;

struct Flags {
  std::string command;
  std::string spec_path;
  std::optional<double> alpha;
  std::string format = "json";
  std::string out_dir;
  std::string method = "grid";
  bool plot = false;
  std::string variant = "cross_term";
  std::optional<double> tol;
};

// Non-finite numbers become null so reports stay valid JSON.
json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json vec(std::span<const double> v) {
  json a = json::array();
  for (const double e : v) a.push_back(num(e));
  return a;
}

json witness(const Witness& w) {
  json j;
  j["sample"] = w.sample;
  if (w.direction >= 0) j["direction"] = w.direction;
  j["x"] = vec(w.x);
  if (!w.p.empty()) j["p"] = vec(w.p);
  if (!w.w.empty()) j["w"] = vec(w.w);
  j["value"] = num(w.value);
  return j;
}

std::string hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json certificate_json(const CertificateReport& r) {
  const SpectralBounds& b = r.spectral;
  json j;
  j["lambda0"] = num(b.lambda0);
  j["lambdaH"] = num(b.lambdaH);
  j["lambdaG"] = num(b.lambdaG);
  j["normPP"] = num(b.normPP);
  j["muPP"] = num(b.muPP);
  j["alphaLower"] = num(r.alpha_lower);
  j["alphaUpper"] = num(r.alpha_upper);
  j["lemmaLower"] = r.lemma ? num(r.lemma->lower) : json(nullptr);
  j["lemmaUpper"] = r.lemma ? num(r.lemma->upper) : json(nullptr);
  j["verdict"] = to_string(r.verdict);
  j["chosenAlpha"] = r.chosen_alpha ? num(*r.chosen_alpha) : json(nullptr);
  j["gAlphaMinEig"] = r.g_alpha_min_eig ? num(*r.g_alpha_min_eig) : json(nullptr);
  json ledger = json::array();
  for (const Condition& c : r.ledger) {
    json e;
    e["name"] = c.name;
    e["evaluated"] = c.evaluated;
    e["passed"] = c.passed;
    e["margin"] = num(c.margin);
    e["witness"] = c.witness ? witness(*c.witness) : json(nullptr);
    ledger.push_back(e);
  }
  j["ledger"] = ledger;
  j["witnesses"] = {{"lambda0", witness(b.lambda0_at)},
                    {"lambdaH", witness(b.lambdaH_at)},
                    {"lambdaG", witness(b.lambdaG_at)},
                    {"normPP", witness(b.normPP_at)},
                    {"muPP", witness(b.muPP_at)}};
  j["failure"] = r.failure;
  j["disclaimer"] = kSampledDisclaimer;
  return j;
}

SampleSet samples_for(const ProblemSpec& s) {
  return build_samples(s.xbox, s.pbox, s.certificate.samples, s.certificate.directions, s.certificate.seed);
}

GridSpec grid_spec(const ProblemSpec& s) {
  GridSpec g;
  const Box& box = s.grid.box ? *s.grid.box : s.xbox;
  g.lo = box.lo;
  g.hi = box.hi;
  g.nodes = s.grid.nodes;
  g.horizon = s.horizon - s.t;
  g.cfl = s.grid.cfl;
  g.max_speed = s.grid.max_speed;
  g.snapshot_stride = s.grid.snapshot_stride;
  return g;
}

json grid_json(const Grid& g) {
  return {{"dimension", g.dim}, {"lo", vec(g.lo)},      {"hi", vec(g.hi)},
          {"nodes", g.nodes},   {"dx", vec(g.dx)},      {"maxSpeed", vec(g.max_speed)},
          {"dt", num(g.dt)},    {"steps", g.steps},     {"cfl", num(g.cfl)}};
}

class Context {
 public:
  Context(const Flags& f, const ProblemSpec& s) : flags(f), spec(s) {
    if (!f.out_dir.empty()) std::filesystem::create_directories(f.out_dir);
  }

  // Opens a data file in the output directory, or returns null without --out.
  std::unique_ptr<std::ofstream> file(const std::string& name) const {
    if (flags.out_dir.empty()) return nullptr;
    auto path = std::filesystem::path(flags.out_dir) / name;
    auto f = std::make_unique<std::ofstream>(path);
    if (!*f) throw InputError("cannot write '" + path.string() + "'");
    return f;
  }

  void written(const std::string& name, json& outputs) const {
    if (!flags.out_dir.empty()) outputs["files"].push_back(name);
  }

  const Flags& flags;
  const ProblemSpec& spec;
};

struct Outcome {
  json outputs;
  int exit_code = 0;
};

Outcome cmd_certify(const Context& ctx) {
  const ProblemSpec& s = ctx.spec;
  const SampleSet samples = samples_for(s);
  const CertificateReport r =
      check_wellposedness(s.hamiltonian_model(), s.terminal_cost(), samples, s.certificate.mu_min);
  Outcome o;
  o.outputs = certificate_json(r);
  o.outputs["samples"] = s.certificate.samples;
  o.outputs["directions"] = samples.directions();
  o.exit_code = r.verdict == Verdict::certified ? 0 : 1;
  return o;
}

Outcome cmd_alpha_interval(const Context& ctx) {
  const ProblemSpec& s = ctx.spec;
  const SampleSet samples = samples_for(s);
  Outcome o;
  o.outputs["disclaimer"] = kSampledDisclaimer;
  try {
    const AlphaInterval a = alpha_interval(s.hamiltonian_model(), samples, s.certificate.mu_min);
    o.outputs["alphaLower"] = num(a.lower);
    o.outputs["alphaUpper"] = num(a.upper);
    o.outputs["feasible"] = a.feasible;
    o.outputs["lowerAt"] = witness(a.lower_at);
    o.outputs["upperAt"] = witness(a.upper_at);
    o.exit_code = a.feasible ? 0 : 1;
  } catch (const PreconditionFailure& e) {
    o.outputs["alphaLower"] = nullptr;
    o.outputs["alphaUpper"] = nullptr;
    o.outputs["feasible"] = false;
    o.outputs["precondition"] =
        e.kind() == PreconditionFailure::Kind::strong_convexity ? "strong_convexity" : "discriminant";
    o.outputs["failure"] = e.what();
    o.outputs["failureAt"] = witness(e.witness());
    o.exit_code = 1;
  }
  return o;
}

Outcome solve_grid_method(const Context& ctx) {
  const ProblemSpec& s = ctx.spec;
  const HamiltonianModel h = s.hamiltonian_model();
  const TerminalCost g = s.terminal_cost();
  const Grid grid = make_grid(h, g, grid_spec(s));
  ValueField field = solve_grid(h, g, grid);
  // The solve runs on [0, T − t]; report real times.
  for (double& t : field.times) t += s.t;
  const auto profile = semiconcavity_profile(field);

  Outcome o;
  json& j = o.outputs;
  j["method"] = "grid";
  j["scheme"] = field.scheme;
  j["grid"] = grid_json(grid);
  const Box box{grid.lo, grid.hi};
  j["t"] = num(s.t);
  j["x"] = vec(s.x);
  j["value"] = box.contains(s.x) ? num(field.value_at(s.x)) : json(nullptr);
  double min_d2 = INFINITY, max_d2 = -INFINITY;
  for (const auto& r : profile) {
    min_d2 = std::min(min_d2, r.min_d2);
    max_d2 = std::max(max_d2, r.max_d2);
  }
  j["minD2"] = num(min_d2);
  j["maxD2"] = num(max_d2);
  j["slices"] = field.slices.size();
  j["terminalHash"] = hex(field.terminal_hash);
  j["finalHash"] = hex(field.final_hash);

  if (auto f = ctx.file("field.csv")) {
    write_field_csv(*f, field);
    ctx.written("field.csv", j);
    json side{{"scheme", field.scheme}, {"grid", grid_json(grid)}, {"timeOffset", num(s.t)},
              {"terminalHash", hex(field.terminal_hash)}, {"finalHash", hex(field.final_hash)},
              {"specHash", s.hash()}};
    *ctx.file("field.json") << side.dump(2) << '\n';
    ctx.written("field.json", j);
    write_profile_csv(*ctx.file("profile.csv"), profile);
    ctx.written("profile.csv", j);
    if (ctx.flags.plot) {
      write_field_csv(*ctx.file("field.dat"), field, true);
      write_profile_csv(*ctx.file("profile.dat"), profile, true);
      ctx.written("field.dat", j);
      ctx.written("profile.dat", j);
    }
  }
  return o;
}

Outcome solve_characteristics_method(const Context& ctx) {
  const ProblemSpec& s = ctx.spec;
  const IntegratorParams& in = s.integrator;
  const ShootingResult r = solve_terminal_bvp(s.hamiltonian_model(), s.terminal_cost(), s.t, s.x, s.horizon, in.step,
                                              in.tol, in.starts, in.seed);
  Outcome o;
  json& j = o.outputs;
  j["method"] = "characteristics";
  j["t"] = num(s.t);
  j["x"] = vec(s.x);
  j["value"] = num(r.value);
  j["momentum"] = vec(r.momentum);
  j["terminalState"] = vec(r.trajectory.x_end());
  j["residual"] = num(r.residual);
  j["iterations"] = r.iterations;
  j["singularJacobian"] = r.singular_jacobian;
  json sols = json::array();
  for (const auto& sol : r.solutions) {
    sols.push_back({{"momentum", vec(sol.momentum)},
                    {"terminalState", vec(sol.trajectory.x_end())},
                    {"value", num(sol.value)},
                    {"residual", num(sol.residual)}});
  }
  j["solutions"] = sols;
  if (auto f = ctx.file("trajectory.csv")) {
    write_trajectory_csv(*f, r.trajectory);
    ctx.written("trajectory.csv", j);
  }
  return o;
}

Outcome solve_action_method(const Context& ctx) {
  const ProblemSpec& s = ctx.spec;
  ActionOptions opts;
  opts.mesh_points = s.integrator.mesh_points;
  opts.starts = s.integrator.starts;
  opts.seed = s.integrator.seed;
  opts.alpha = ctx.flags.alpha.value_or(1.0);
  const ActionResult r = minimize_action(s.lagrangian_model(), s.terminal_cost(), s.t, s.x, s.horizon, opts);
  Outcome o;
  json& j = o.outputs;
  j["method"] = "action";
  j["t"] = num(s.t);
  j["x"] = vec(s.x);
  j["value"] = num(r.value);
  j["multiple"] = r.multiple;
  j["clusters"] = r.clusters.size();
  j["identityAlpha"] = num(opts.alpha);
  j["identityError"] = num(r.identity_error);
  json curves = json::array();
  for (const auto& c : r.curves) {
    curves.push_back({{"value", num(c.value)},
                      {"endpoint", vec(std::span<const double>(c.points).last(static_cast<std::size_t>(s.dim)))},
                      {"points", vec(c.points)}});
  }
  j["curves"] = curves;
  return o;
}

Outcome cmd_solve(const Context& ctx) {
  const std::string& m = ctx.flags.method;
  if (m == "grid") return solve_grid_method(ctx);
  if (m == "characteristics") return solve_characteristics_method(ctx);
  if (m == "action") return solve_action_method(ctx);
  throw InputError("unknown method '" + m + "' (grid, characteristics, action)");
}

Outcome cmd_verify_shift(const Context& ctx) {
  const ProblemSpec& s = ctx.spec;
  const double alpha = ctx.flags.alpha.value_or(1.0);
  const double tol = ctx.flags.tol.value_or(5e-2);
  const ShiftDeviation d = verify_value_shift(s.hamiltonian_model(), s.terminal_cost(), alpha, grid_spec(s));
  Outcome o;
  json& j = o.outputs;
  j["alpha"] = num(alpha);
  j["maxDeviation"] = num(d.max_deviation);
  j["worstTime"] = num(d.worst_time + s.t);
  j["worstX"] = vec(d.worst_x);
  j["tolerance"] = num(tol);
  j["grid"] = grid_json(d.grid);
  j["pass"] = d.max_deviation <= tol;
  o.exit_code = d.max_deviation <= tol ? 0 : 1;
  return o;
}

Outcome cmd_singularity_scan(const Context& ctx) {
  const ProblemSpec& s = ctx.spec;
  const Box& ybox = s.integrator.y_box ? *s.integrator.y_box : s.xbox;
  const ConjugatePoint c = first_conjugate_time(s.hamiltonian_model(), s.terminal_cost(), s.horizon, ybox,
                                               s.integrator.step, s.integrator.scan_points);
  Outcome o;
  json& j = o.outputs;
  j["found"] = c.found;
  j["tau"] = c.found ? num(c.tau) : json(nullptr);
  j["s"] = c.found ? num(c.s) : json(nullptr);
  j["y"] = c.found ? vec(c.y) : json(nullptr);
  j["horizon"] = num(s.horizon);
  j["yBox"] = {{"lo", vec(ybox.lo)}, {"hi", vec(ybox.hi)}};
  return o;
}

Outcome cmd_conjugacy(const Context& ctx) {
  const ProblemSpec& s = ctx.spec;
  const double alpha = ctx.flags.alpha.value_or(1.0);
  const double tol = ctx.flags.tol.value_or(1e-6);
  const HamiltonianModel h = s.hamiltonian_model();
  const double step = s.integrator.step;
  const double dev = verify_conjugacy(h, alpha, s.x, s.p, s.t, s.horizon, step);
  const double half = verify_conjugacy(h, alpha, s.x, s.p, s.t, s.horizon, step / 2);
  Outcome o;
  json& j = o.outputs;
  j["alpha"] = num(alpha);
  j["step"] = num(step);
  j["deviation"] = num(dev);
  j["deviationHalfStep"] = num(half);
  j["ratio"] = half > 0 ? num(dev / half) : json(nullptr);
  j["tolerance"] = num(tol);
  j["pass"] = dev <= tol;
  o.exit_code = dev <= tol ? 0 : 1;
  return o;
}

Outcome cmd_corollary_threshold(const Context& ctx) {
  const ProblemSpec& s = ctx.spec;
  CorollaryVariant variant;
  if (ctx.flags.variant == "cross_term") {
    variant = CorollaryVariant::cross_term;
  } else if (ctx.flags.variant == "concave_well") {
    variant = CorollaryVariant::concave_well;
  } else {
    throw InputError("unknown variant '" + ctx.flags.variant + "' (cross_term, concave_well)");
  }
  const SampleSet samples = samples_for(s);
  const ThresholdResult t = corollary_threshold(s.hamiltonian_model(), s.terminal_cost(), variant, samples,
                                                s.certificate.mu_min, s.certificate.alpha_max,
                                                s.certificate.threshold_tol);
  Outcome o;
  json& j = o.outputs;
  j["variant"] = to_string(variant);
  j["alphaStar"] = num(t.alpha);
  j["tolerance"] = num(s.certificate.threshold_tol);
  j["alphaMax"] = num(s.certificate.alpha_max);
  j["evaluations"] = t.evaluations;
  j["report"] = certificate_json(t.report);
  return o;
}

const std::map<std::string, std::function<Outcome(const Context&)>>& commands() {
  static const std::map<std::string, std::function<Outcome(const Context&)>> c{
      {"certify", cmd_certify},
      {"alpha-interval", cmd_alpha_interval},
      {"solve", cmd_solve},
      {"verify-shift", cmd_verify_shift},
      {"singularity-scan", cmd_singularity_scan},
      {"conjugacy", cmd_conjugacy},
      {"corollary-threshold", cmd_corollary_threshold},
  };
  return c;
}

void flatten(const json& j, const std::string& prefix, std::ostream& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) flatten(j[i], prefix + "." + std::to_string(i), out);
  } else {
    std::string v = j.is_string() ? j.get<std::string>() : j.dump();
    if (v.find_first_of(",\"\n") != std::string::npos) {
      std::string q = "\"";
      for (const char c : v) q += c == '"' ? std::string("\"\"") : std::string(1, c);
      v = q + "\"";
    }
    out << prefix << ',' << v << '\n';
  }
}

void emit(const json& report, const std::string& format, std::ostream& out) {
  if (format == "csv") {
    out << "key,value\n";
    flatten(report, "", out);
  } else {
    out << report.dump(2) << '\n';
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Flags f;
  CLI::App app{"Shift certificates and value-function solvers for Hamilton–Jacobi equations", "canon-hjb"};
  app.set_version_flag("--version", kVersion);
  std::vector<std::string> names;
  for (const auto& [name, fn] : commands()) names.push_back(name);
  app.add_option("command", f.command, "Command to run")->required()->check(CLI::IsMember(names));
  app.add_option("spec", f.spec_path, "Problem spec file")->required();
  app.add_option("--alpha", f.alpha, "Shift α (verify-shift, conjugacy, action identity)");
  app.add_option("--format", f.format, "Report format")->check(CLI::IsMember({"json", "csv"}));
  app.add_option("--out", f.out_dir, "Directory for report and data files");
  app.add_option("--method", f.method, "solve method")->check(CLI::IsMember({"grid", "characteristics", "action"}));
  app.add_flag("--plot", f.plot, "Also write gnuplot block files");
  app.add_option("--variant", f.variant, "corollary-threshold variant")
      ->check(CLI::IsMember({"cross_term", "concave_well"}));
  app.add_option("--tol", f.tol, "Pass threshold for verify-shift / conjugacy");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, e2;
    const int code = app.exit(e, o, e2);
    out << o.str();
    err << e2.str();
    return code == 0 ? 0 : 2;
  }

  const auto start = std::chrono::steady_clock::now();
  try {
    const ProblemSpec spec = load_spec(f.spec_path);
    const Context ctx(f, spec);
    Outcome o = commands().at(f.command)(ctx);
    json report;
    report["command"] = f.command;
    report["version"] = kVersion;
    report["specHash"] = spec.hash();
    report["bodyHash"] = hex(fnv1a(std::string_view(o.outputs.dump())));
    report["exitCode"] = o.exit_code;
    report["outputs"] = o.outputs;
    report["wallTimeSeconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    emit(report, f.format, out);
    if (auto file = ctx.file(f.format == "csv" ? "report.csv" : "report.json")) emit(report, f.format, *file);
    return o.exit_code;
  } catch (const PreconditionFailure& e) {
    err << "precondition failed: " << e.what() << '\n';
    return 1;
  } catch (const InputError& e) {
    err << "input error: " << e.what() << '\n';
    return 2;
  } catch (const DomainError& e) {
    err << "domain error: " << e.what() << '\n';
    return 3;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "input error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << '\n';
    return 3;
  }
}

}  // namespace canon_hjb
