#include "canon_hjb/certificate.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "canon_hjb/errors.hpp"
#include "canon_hjb/parallel.hpp"
#include "canon_hjb/sampling.hpp"

namespace canon_hjb {

const char* const kSampledDisclaimer =
    "sampled certificate: bounds are extrema over a finite quasi-random sample of the declared x/p boxes, "
    "not over all of phase space";

namespace {

constexpr double kSqrtClamp = 1e-12;
constexpr double kDiscriminantTol = 1e-9;
constexpr double kLedgerTol = 1e-12;
constexpr double kConvexTol = 1e-9;

std::string format_point(std::span<const double> x, std::span<const double> p) {
  std::ostringstream out;
  out.precision(17);
  out << "x=[";
  for (std::size_t i = 0; i < x.size(); ++i) out << (i ? ", " : "") << x[i];
  out << "], p=[";
  for (std::size_t i = 0; i < p.size(); ++i) out << (i ? ", " : "") << p[i];
  out << "]";
  return out.str();
}

Witness witness(const SampleSet& s, int i, int k, double value) {
  Witness w;
  w.sample = i;
  w.direction = k;
  w.x.assign(s.x(i).begin(), s.x(i).end());
  w.p.assign(s.p(i).begin(), s.p(i).end());
  if (k >= 0) w.w.assign(s.w(i, k).begin(), s.w(i, k).end());
  w.value = value;
  return w;
}

double quad(const Mat& m, std::span<const double> w) {
  double out = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    for (std::size_t j = 0; j < w.size(); ++j) out += w[i] * m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * w[j];
  }
  return out;
}

void validate_box(const Box& b, const char* name) {
  for (int i = 0; i < b.dim(); ++i) {
    if (!std::isfinite(b.lo[i]) || !std::isfinite(b.hi[i]) || !(b.lo[i] < b.hi[i])) {
      throw InputError(std::string(name) + " is degenerate on axis " + std::to_string(i + 1));
    }
  }
}

struct QuadForms {
  double a, b, c;
};

QuadForms forms(const HessianBlocks& hb, std::span<const double> w) {
  // wᵀ xp w equals wᵀ Sym(xp) w.
  return {quad(hb.xp, w), quad(hb.xx, w), quad(hb.pp, w)};
}

}  // namespace

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::certified: return "CERTIFIED";
    case Verdict::not_certified: return "NOT_CERTIFIED";
    case Verdict::inconclusive: return "INCONCLUSIVE";
  }
  return "?";
}

const char* to_string(CorollaryVariant v) {
  return v == CorollaryVariant::cross_term ? "cross_term" : "concave_well";
}

SampleSet build_samples(const Box& xbox, const Box& pbox, int n, int m, std::uint64_t seed) {
  if (xbox.dim() < 1 || xbox.dim() != pbox.dim()) throw InputError("x-box and p-box must have the same dimension");
  if (xbox.lo.size() != xbox.hi.size() || pbox.lo.size() != pbox.hi.size()) throw InputError("malformed box");
  if (n < 1) throw InputError("sample count must be at least 1");
  if (m < 1) throw InputError("direction count must be at least 1");
  validate_box(xbox, "x-box");
  validate_box(pbox, "p-box");

  const int d = xbox.dim();
  SampleSet s;
  s.xbox = xbox;
  s.pbox = pbox;
  s.seed = seed;
  s.count = n;
  s.random_directions = m;
  s.xs.resize(static_cast<std::size_t>(n) * d);
  s.ps.resize(static_cast<std::size_t>(n) * d);
  s.ws.resize(static_cast<std::size_t>(n) * s.directions() * d);

  const std::vector<double> unit = sobol_unit(2 * d, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      const double ux = unit[static_cast<std::size_t>(i) * 2 * d + j];
      const double up = unit[static_cast<std::size_t>(i) * 2 * d + d + j];
      s.xs[static_cast<std::size_t>(i) * d + j] = xbox.lo[j] + ux * (xbox.hi[j] - xbox.lo[j]);
      s.ps[static_cast<std::size_t>(i) * d + j] = pbox.lo[j] + up * (pbox.hi[j] - pbox.lo[j]);
    }
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> g(static_cast<std::size_t>(d));
  double* out = s.ws.data();
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < m; ++k) {
      double norm = 0.0;
      while (norm < 1e-8) {
        norm = 0.0;
        for (auto& v : g) {
          v = normal(rng);
          norm += v * v;
        }
        norm = std::sqrt(norm);
      }
      for (int j = 0; j < d; ++j) *out++ = g[static_cast<std::size_t>(j)] / norm;
    }
    for (int j = 0; j < d; ++j) {
      for (const double sign : {1.0, -1.0}) {
        for (int q = 0; q < d; ++q) *out++ = q == j ? sign : 0.0;
      }
    }
  }
  return s;
}

SampleBlocks evaluate_samples(const HamiltonianModel& h, const TerminalCost* g, const SampleSet& s) {
  if (h.dim() != s.dim() || (g && g->dim() != s.dim())) throw InputError("sample dimension does not match the model");
  SampleBlocks out;
  out.h.resize(static_cast<std::size_t>(s.count));
  if (g) out.g.resize(static_cast<std::size_t>(s.count));
  parallel_for(static_cast<std::size_t>(s.count), [&](std::size_t i) {
    const int k = static_cast<int>(i);
    try {
      out.h[i] = h.blocks(s.x(k), s.p(k));
      if (g) out.g[i] = g->hessian(s.x(k));
    } catch (const DomainError& e) {
      throw e.at(format_point(s.x(k), s.p(k)));
    }
  });
  return out;
}

SpectralBounds spectral_bounds(const SampleBlocks& blocks, const SampleSet& s) {
  const std::size_t n = blocks.h.size();
  struct Row {
    double l0, lh, lg, npp, mpp;
  };
  std::vector<Row> rows(n);
  parallel_for(n, [&](std::size_t i) {
    const HessianBlocks& hb = blocks.h[i];
    const Vec pp = sym_eigenvalues(hb.pp);
    rows[i] = {lambda_min(sym_part(hb.xp)), lambda_max(hb.xx),
               blocks.g.empty() ? 0.0 : lambda_min(sym_part(blocks.g[i])),
               std::max(std::abs(pp(0)), std::abs(pp(pp.size() - 1))), pp(0)};
  });

  SpectralBounds b;
  int i0 = 0, ih = 0, ig = 0, in = 0, im = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int k = static_cast<int>(i);
    const Row& r = rows[i];
    if (i == 0 || r.l0 < b.lambda0) b.lambda0 = r.l0, i0 = k;
    if (i == 0 || r.lh > b.lambdaH) b.lambdaH = r.lh, ih = k;
    if (i == 0 || r.lg < b.lambdaG) b.lambdaG = r.lg, ig = k;
    if (i == 0 || r.npp > b.normPP) b.normPP = r.npp, in = k;
    if (i == 0 || r.mpp < b.muPP) b.muPP = r.mpp, im = k;
  }
  for (const double v : {b.lambda0, b.lambdaH, b.lambdaG, b.normPP, b.muPP}) {
    if (!std::isfinite(v)) throw NumericalError("non-finite spectral bound");
  }
  b.lambda0_at = witness(s, i0, -1, b.lambda0);
  b.lambdaH_at = witness(s, ih, -1, b.lambdaH);
  b.lambdaG_at = witness(s, ig, -1, b.lambdaG);
  b.normPP_at = witness(s, in, -1, b.normPP);
  b.muPP_at = witness(s, im, -1, b.muPP);
  return b;
}

SpectralBounds spectral_bounds(const HamiltonianModel& h, const TerminalCost& g, const SampleSet& s) {
  return spectral_bounds(evaluate_samples(h, &g, s), s);
}

DiscriminantResult check_discriminant(const SampleBlocks& blocks, const SampleSet& s) {
  DiscriminantResult r;
  bool first = true;
  for (int i = 0; i < s.count; ++i) {
    for (int k = 0; k < s.directions(); ++k) {
      const QuadForms q = forms(blocks.h[static_cast<std::size_t>(i)], s.w(i, k));
      const double margin = q.a * q.a - q.c * q.b;
      if (first || margin < r.min_margin) {
        r.min_margin = margin;
        r.witness = witness(s, i, k, margin);
        first = false;
      }
    }
  }
  r.pass = r.min_margin >= -kDiscriminantTol;
  return r;
}

DiscriminantResult check_discriminant(const HamiltonianModel& h, const SampleSet& s) {
  return check_discriminant(evaluate_samples(h, nullptr, s), s);
}

AlphaInterval alpha_interval(const SampleBlocks& blocks, const SampleSet& s, double mu_min) {
  AlphaInterval out;
  out.lower = -std::numeric_limits<double>::infinity();
  out.upper = std::numeric_limits<double>::infinity();
  for (int i = 0; i < s.count; ++i) {
    for (int k = 0; k < s.directions(); ++k) {
      const QuadForms q = forms(blocks.h[static_cast<std::size_t>(i)], s.w(i, k));
      if (!(q.c >= mu_min)) {
        throw PreconditionFailure(PreconditionFailure::Kind::strong_convexity,
                                  "wᵀ∂ppH w below muMin at " + format_point(s.x(i), s.p(i)), witness(s, i, k, q.c));
      }
      double disc = q.a * q.a - q.b * q.c;
      if (disc < 0.0) {
        if (disc < -kSqrtClamp) {
          throw PreconditionFailure(PreconditionFailure::Kind::discriminant,
                                    "discriminant negative at " + format_point(s.x(i), s.p(i)),
                                    witness(s, i, k, disc));
        }
        disc = 0.0;
      }
      const double root = std::sqrt(disc);
      const double plus = (q.a + root) / q.c;
      const double minus = (q.a - root) / q.c;
      if (plus < out.upper) out.upper = plus, out.upper_at = witness(s, i, k, plus);
      if (minus > out.lower) out.lower = minus, out.lower_at = witness(s, i, k, minus);
    }
  }
  out.feasible = out.lower <= out.upper;
  return out;
}

AlphaInterval alpha_interval(const HamiltonianModel& h, const SampleSet& s, double mu_min) {
  return alpha_interval(evaluate_samples(h, nullptr, s), s, mu_min);
}

CertificateReport check_wellposedness(const SampleBlocks& blocks, const SampleSet& s, double mu_min) {
  CertificateReport r;
  r.disclaimers.push_back(kSampledDisclaimer);
  r.spectral = spectral_bounds(blocks, s);
  const SpectralBounds& b = r.spectral;

  Condition c1{"lambda0^2 >= normPP*lambdaH", true, false, b.lambda0 * b.lambda0 - b.normPP * b.lambdaH, b.lambdaH_at};
  c1.passed = c1.margin >= -kLedgerTol;
  r.ledger.push_back(c1);

  Condition c2{"lambda0 + sqrt(lambda0^2 - normPP*lambdaH) + normPP*lambdaG >= 0", false, false, 0.0, b.lambdaG_at};
  if (c1.margin >= -kLedgerTol) {
    c2.evaluated = true;
    c2.margin = b.lambda0 + std::sqrt(std::max(0.0, c1.margin)) + b.normPP * b.lambdaG;
    c2.passed = c2.margin >= -kLedgerTol;
  } else {
    c2.margin = std::numeric_limits<double>::quiet_NaN();
  }
  r.ledger.push_back(c2);

  Condition c3{"lambdaH <= 0 or lambda0 >= 0", true, false, std::max(-b.lambdaH, b.lambda0), b.lambda0_at};
  c3.passed = b.lambdaH <= 0.0 || b.lambda0 >= 0.0;
  r.ledger.push_back(c3);

  bool conditions_pass = c1.passed && c2.passed && c3.passed;
  for (const Condition& c : r.ledger) {
    if (!c.passed && r.failure.empty()) r.failure = "condition failed: " + c.name;
  }

  Condition pre{"muPP >= muMin", true, b.muPP >= mu_min, b.muPP - mu_min, b.muPP_at};
  r.ledger.push_back(pre);
  bool preconditions = pre.passed;

  try {
    r.lemma = alpha_interval(blocks, s, mu_min);
  } catch (const PreconditionFailure& e) {
    if (e.kind() == PreconditionFailure::Kind::strong_convexity) {
      preconditions = false;
      r.ledger.push_back({"w^T ppH w >= muMin", true, false, e.witness().value - mu_min, e.witness()});
    } else {
      conditions_pass = false;
      r.ledger.push_back({"discriminant >= 0", true, false, e.witness().value, e.witness()});
      if (r.failure.empty()) r.failure = e.what();
    }
  }

  if (r.lemma) {
    r.alpha_lower = r.lemma->lower;
    r.alpha_upper = r.lemma->upper;
  }

  if (!preconditions) {
    r.verdict = Verdict::inconclusive;
    r.failure = "strong convexity precondition failed (muMin)";
    return r;
  }
  if (!conditions_pass) {
    r.verdict = Verdict::not_certified;
    return r;
  }

  const double chosen = std::max(r.lemma->lower, -b.lambdaG);
  Condition fits{"chosen alpha <= alpha upper", true, chosen <= r.lemma->upper + kConvexTol,
                 r.lemma->upper - chosen, r.lemma->upper_at};
  r.ledger.push_back(fits);

  double g_min = std::numeric_limits<double>::infinity();
  int g_at = 0;
  for (std::size_t i = 0; i < blocks.g.size(); ++i) {
    Mat m = sym_part(blocks.g[i]);
    m.diagonal().array() += chosen;
    const double e = lambda_min(m);
    if (e < g_min) g_min = e, g_at = static_cast<int>(i);
  }
  r.g_alpha_min_eig = g_min;
  Condition convex{"G_alpha sampled convex", true, g_min >= -kConvexTol, g_min, witness(s, g_at, -1, g_min)};
  r.ledger.push_back(convex);

  if (fits.passed && convex.passed) {
    r.verdict = Verdict::certified;
    r.chosen_alpha = chosen;
    r.alpha_lower = chosen;
    r.alpha_upper = r.lemma->upper;
  } else {
    r.verdict = Verdict::not_certified;
    r.failure = fits.passed ? "G_alpha not convex on samples" : "no alpha satisfies both lemma constraints";
  }
  return r;
}

CertificateReport check_wellposedness(const HamiltonianModel& h, const TerminalCost& g, const SampleSet& s,
                                      double mu_min) {
  return check_wellposedness(evaluate_samples(h, &g, s), s, mu_min);
}

HamiltonianModel corollary_hamiltonian(const HamiltonianModel& h, CorollaryVariant variant, double alpha) {
  if (!h.is_expression()) throw InputError("corollary Hamiltonians need an expression-backed H");
  const int d = h.dim();
  const HamiltonianModel m = h.materialize();
  NodePtr root = m.base().root_ptr();
  if (variant == CorollaryVariant::cross_term) {
    root = build::add(root, build::mul(build::constant(alpha), build::dot(Family::x, Family::p, d)));
  } else {
    root = build::sub(root, build::mul(build::constant(0.5 * alpha), build::dot(Family::x, Family::x, d)));
  }
  return HamiltonianModel(Expr(root, d, kHamiltonianVars));
}

SampleBlocks corollary_blocks(const SampleBlocks& base, const SampleSet& s, CorollaryVariant variant, double alpha) {
  SampleBlocks out = base;
  const int d = s.dim();
  for (int i = 0; i < s.count; ++i) {
    HessianBlocks& hb = out.h[static_cast<std::size_t>(i)];
    const auto x = s.x(i);
    const auto p = s.p(i);
    for (int j = 0; j < d; ++j) {
      if (variant == CorollaryVariant::cross_term) {
        hb.value += alpha * x[j] * p[j];
        hb.grad_x(j) += alpha * p[j];
        hb.grad_p(j) += alpha * x[j];
        hb.xp(j, j) += alpha;
      } else {
        hb.value -= 0.5 * alpha * x[j] * x[j];
        hb.grad_x(j) -= alpha * x[j];
        hb.xx(j, j) -= alpha;
      }
    }
  }
  return out;
}

ThresholdResult corollary_threshold(const HamiltonianModel& h, const TerminalCost& g, CorollaryVariant variant,
                                    const SampleSet& s, double mu_min, double alpha_max, double tol) {
  if (!(alpha_max >= 0.0)) throw InputError("alpha_max must be non-negative");
  if (!(tol > 0.0)) throw InputError("tolerance must be positive");
  const SampleBlocks base = evaluate_samples(h, &g, s);
  // Neither modification touches ∂ppH, so strong convexity is checked once.
  const SpectralBounds b0 = spectral_bounds(base, s);
  if (b0.muPP < mu_min) {
    throw PreconditionFailure(PreconditionFailure::Kind::strong_convexity, "H(x,.) not strongly convex on samples",
                              b0.muPP_at);
  }

  ThresholdResult out;
  const auto run = [&](double alpha) {
    ++out.evaluations;
    return check_wellposedness(corollary_blocks(base, s, variant, alpha), s, mu_min);
  };

  CertificateReport at_zero = run(0.0);
  if (at_zero.verdict == Verdict::certified) {
    out.alpha = 0.0;
    out.report = std::move(at_zero);
    return out;
  }
  CertificateReport hi_report = run(alpha_max);
  if (hi_report.verdict != Verdict::certified) {
    throw NumericalError("no certified alpha in [0, " + std::to_string(alpha_max) + "]");
  }
  double lo = 0.0, hi = alpha_max;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    CertificateReport r = run(mid);
    if (r.verdict == Verdict::certified) {
      hi = mid;
      hi_report = std::move(r);
    } else {
      lo = mid;
    }
  }
  out.alpha = hi;
  out.report = std::move(hi_report);
  return out;
}

double joint_convexity_min_eig(const LagrangianModel& l, const SampleSet& s, Witness* at) {
  if (l.dim() != s.dim()) throw InputError("sample dimension does not match the Lagrangian");
  const int d = s.dim();
  std::vector<double> eig(static_cast<std::size_t>(s.count));
  parallel_for(eig.size(), [&](std::size_t i) {
    const int k = static_cast<int>(i);
    Jet2 j;
    try {
      j = l.jet(s.x(k), s.p(k));
    } catch (const DomainError& e) {
      throw e.at(format_point(s.x(k), s.p(k)));
    }
    Mat m(2 * d, 2 * d);
    for (int a = 0; a < 2 * d; ++a) {
      for (int c = 0; c < 2 * d; ++c) m(a, c) = j.hessian(static_cast<std::size_t>(a), static_cast<std::size_t>(c));
    }
    eig[i] = lambda_min(m);
  });
  double best = eig[0];
  int best_at = 0;
  for (std::size_t i = 1; i < eig.size(); ++i) {
    if (eig[i] < best) best = eig[i], best_at = static_cast<int>(i);
  }
  if (at) *at = witness(s, best_at, -1, best);
  return best;
}

}  // namespace canon_hjb
