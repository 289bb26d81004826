#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "canon_hjb/model.hpp"

namespace canon_hjb {

/// Quasi-random (x, p) points over a box product, each with the same number
/// of unit directions w: m seeded random ones followed by ±e_1 … ±e_d.
struct SampleSet {
  Box xbox;
  Box pbox;
  std::uint64_t seed = 0;
  int count = 0;
  int random_directions = 0;
  std::vector<double> xs;  // count × d
  std::vector<double> ps;  // count × d
  std::vector<double> ws;  // count × directions() × d

  int dim() const { return xbox.dim(); }
  int directions() const { return random_directions + 2 * dim(); }
  std::span<const double> x(int i) const { return {xs.data() + i * dim(), static_cast<std::size_t>(dim())}; }
  std::span<const double> p(int i) const { return {ps.data() + i * dim(), static_cast<std::size_t>(dim())}; }
  std::span<const double> w(int i, int k) const {
    return {ws.data() + (static_cast<std::size_t>(i) * directions() + k) * dim(), static_cast<std::size_t>(dim())};
  }
};

SampleSet build_samples(const Box& xbox, const Box& pbox, int n, int m, std::uint64_t seed);

/// A sample (and direction, when one is involved) where something was attained.
struct Witness {
  int sample = -1;
  int direction = -1;
  std::vector<double> x;
  std::vector<double> p;
  std::vector<double> w;
  double value = 0.0;
};

struct SpectralBounds {
  double lambda0 = 0.0;   // inf λ_min(Sym ∂xpH)
  double lambdaH = 0.0;   // sup λ_max(∂xxH)
  double lambdaG = 0.0;   // inf λ_min(D²G) over the x-samples
  double normPP = 0.0;    // sup ‖∂ppH‖
  double muPP = 0.0;      // inf λ_min(∂ppH)
  Witness lambda0_at, lambdaH_at, lambdaG_at, normPP_at, muPP_at;
};

struct DiscriminantResult {
  bool pass = true;
  double min_margin = 0.0;
  Witness witness;  // most violating, or the minimum margin on pass
};

struct AlphaInterval {
  double lower = 0.0;
  double upper = 0.0;
  bool feasible = false;
  Witness lower_at;
  Witness upper_at;
};

/// Thrown by alpha_interval when its preconditions do not hold.
class PreconditionFailure : public std::runtime_error {
 public:
  enum class Kind { strong_convexity, discriminant };
  PreconditionFailure(Kind kind, const std::string& what, Witness witness)
      : std::runtime_error(what), kind_(kind), witness_(std::move(witness)) {}
  Kind kind() const { return kind_; }
  const Witness& witness() const { return witness_; }

 private:
  Kind kind_;
  Witness witness_;
};

/// Caveat carried by every certificate-derived report.
extern const char* const kSampledDisclaimer;

enum class Verdict { certified, not_certified, inconclusive };
const char* to_string(Verdict v);

struct Condition {
  std::string name;
  bool evaluated = false;
  bool passed = false;
  double margin = 0.0;
  std::optional<Witness> witness;
};

struct CertificateReport {
  SpectralBounds spectral;
  std::optional<AlphaInterval> lemma;  // absent when its preconditions failed
  double alpha_lower = 0.0;            // reported interval, see check_wellposedness
  double alpha_upper = 0.0;
  Verdict verdict = Verdict::inconclusive;
  std::optional<double> chosen_alpha;
  std::optional<double> g_alpha_min_eig;
  std::vector<Condition> ledger;
  std::string failure;  // first reason for a non-CERTIFIED verdict
  std::vector<std::string> disclaimers;
};

/// Per-sample blocks of H and Hessians of G. Everything else reduces these
/// in sample order, so parallel and serial runs agree bitwise.
struct SampleBlocks {
  std::vector<HessianBlocks> h;
  std::vector<Mat> g;
};

SampleBlocks evaluate_samples(const HamiltonianModel& h, const TerminalCost* g, const SampleSet& s);

SpectralBounds spectral_bounds(const HamiltonianModel& h, const TerminalCost& g, const SampleSet& s);
SpectralBounds spectral_bounds(const SampleBlocks& blocks, const SampleSet& s);

DiscriminantResult check_discriminant(const HamiltonianModel& h, const SampleSet& s);
DiscriminantResult check_discriminant(const SampleBlocks& blocks, const SampleSet& s);

AlphaInterval alpha_interval(const HamiltonianModel& h, const SampleSet& s, double mu_min);
AlphaInterval alpha_interval(const SampleBlocks& blocks, const SampleSet& s, double mu_min);

/// Condition ledger and verdict. On CERTIFIED the reported interval is
/// [max(lemma lower, −λ_G), lemma upper]; otherwise it is the lemma interval
/// as computed (zeros if unavailable).
CertificateReport check_wellposedness(const HamiltonianModel& h, const TerminalCost& g, const SampleSet& s,
                                      double mu_min);
CertificateReport check_wellposedness(const SampleBlocks& blocks, const SampleSet& s, double mu_min);

enum class CorollaryVariant { cross_term, concave_well };
const char* to_string(CorollaryVariant v);

/// H + α x·p or H − α|x|²/2 as an expression (expression-backed H only).
HamiltonianModel corollary_hamiltonian(const HamiltonianModel& h, CorollaryVariant variant, double alpha);
/// Same modification applied directly to evaluated blocks.
SampleBlocks corollary_blocks(const SampleBlocks& base, const SampleSet& s, CorollaryVariant variant, double alpha);

struct ThresholdResult {
  double alpha = 0.0;
  CertificateReport report;  // at the returned α
  int evaluations = 0;
};

/// Smallest α in [0, alpha_max] certifying the modified problem, by bisection
/// to `tol`. Throws PreconditionFailure if H(x,·) is not strongly convex on
/// the samples and NumericalError if α_max itself is not certified.
ThresholdResult corollary_threshold(const HamiltonianModel& h, const TerminalCost& g, CorollaryVariant variant,
                                    const SampleSet& s, double mu_min, double alpha_max, double tol = 1e-3);

/// min over samples (x from the x-box, v from the p-box) of λ_min of the
/// joint Hessian of L.
double joint_convexity_min_eig(const LagrangianModel& l, const SampleSet& s, Witness* at = nullptr);

}  // namespace canon_hjb
