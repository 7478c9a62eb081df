#pragma once

// Online learners for discrete HMMs. Each consumes one observed sequence at a
// time and exposes a point estimate:
//
//   bwo   Baum-Welch online: omega <- omega + eta_bw * (BW(omega, y) - omega)
//   bc    Baldi-Chauvin: softmax-parameterized online gradient ascent
//   bona  Bayesian online: factorized Dirichlet prior, exact Bayes update over
//         hidden paths, projection by matching <ln x_i> per row
//   mpa   mean posterior approximation: as bona, but the projection matches
//         the posterior mean and the variance of component 0 per row

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ohmm/dirichlet.hpp"
#include "ohmm/hmm.hpp"

namespace ohmm {

enum class Algorithm { bwo, bc, bona, mpa };

std::string_view to_string(Algorithm a);
/// Throws ConfigError for unknown names.
Algorithm algorithm_from_string(std::string_view name);

struct LearnerConfig {
  Algorithm algorithm = Algorithm::mpa;
  std::string name;  // label used in outputs; empty means the algorithm name
  double eta_bw = 0.1;
  double eta_bc = 0.5;
  double lambda = 0.01;
  double prior_strength = 1.0;  // symmetric Dirichlet concentration per entry
  double epsilon = 1e-12;       // floor applied to student parameters inside likelihoods
  std::uint64_t enumeration_cap = kDefaultEnumerationCap;

  std::string label() const { return name.empty() ? std::string(to_string(algorithm)) : name; }
  friend bool operator==(const LearnerConfig&, const LearnerConfig&) = default;
};

/// Dirichlet hyperparameters, one row per distribution: rho for pi, a.row(i)
/// for A's row i, b.row(i) for B's row i.
struct HyperParams {
  ModelDims dims;
  Vector<double> rho;  // n
  Matrix<double> a;    // n x n
  Matrix<double> b;    // n x m

  static HyperParams symmetric(const ModelDims& dims, double strength);
  /// Concentrations u = N * strength * mean for each row of width N.
  static HyperParams from_mean(const Hmm& mean, double strength);

  friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

struct BwoState {
  Hmm omega;
  double eta_bw = 0.1;
  double epsilon = 1e-12;
};

struct BcState {
  ModelDims dims;
  Vector<double> w_pi;
  Matrix<double> w_A;
  Matrix<double> w_B;
  double lambda = 0.01;
  double eta_bc = 0.5;
  double epsilon = 1e-12;
};

struct BayesState {
  HyperParams hyper;
  std::uint64_t enumeration_cap = kDefaultEnumerationCap;
};

struct BonaState {
  BayesState bayes;
  DigammaSolverOptions solver;
};

struct MpaState {
  BayesState bayes;
  double min_variance = 1e-14;  // below this the matched component counts as collapsed
};

using LearnerState = std::variant<BwoState, BcState, BonaState, MpaState>;

struct UpdateReport {
  double projection_residual = 0.0;  // bona: worst |psi(u_i) - psi(u_0) - mu_i| over all rows
  int bisection_solves = 0;          // bona: digamma systems that needed the bisection fallback
};

// ---------------------------------------------------------------------------
// Baum-Welch

/// One offline Baum-Welch pass on a single sequence. Posterior marginals are
/// computed on the epsilon-floored parameters; rows whose expected count is
/// zero are copied through unchanged.
Hmm bw_reestimate(const Hmm& params, const ObservedSequence& y, double epsilon = 1e-12);

UpdateReport bwo_observe(BwoState& state, const ObservedSequence& y);

// ---------------------------------------------------------------------------
// Baldi-Chauvin

/// Rowwise softmax(lambda * w).
Hmm bc_params(const BcState& state);

/// d ln P(y | omega) / d theta for the softmax logits theta = lambda * w:
///   pi: gamma_1 - pi
///   A:  sum_t xi_t(i, j) - A_ij sum_{t<T} gamma_t(i)
///   B:  sum_{t: y_t = k} gamma_t(i) - B_ik sum_t gamma_t(i)
struct LogitGradient {
  Vector<double> pi;
  Matrix<double> A;
  Matrix<double> B;
};
LogitGradient bc_logit_gradient(const Hmm& params, const ObservedSequence& y);

/// w <- w + eta_bc * d ln P / d theta.
UpdateReport bc_observe(BcState& state, const ObservedSequence& y);

// ---------------------------------------------------------------------------
// Bayesian learners

/// Occurrence counts of (initial state), (i -> j transitions) and (state i
/// emits symbol k) along one hidden path: the exponents of P(y, q | omega).
struct PathCounts {
  Vector<double> init;   // n
  Matrix<double> trans;  // n x n
  Matrix<double> emit;   // n x m
};
PathCounts path_counts(const ModelDims& dims, const ObservedSequence& y, const HiddenPath& q);

struct MixtureTerm {
  HiddenPath path;
  PathCounts counts;
  double log_weight = 0.0;
};

/// Unprojected posterior: sum over hidden paths of a product of Dirichlets
/// with concentrations hyper + counts(q), mixed with normalized log weights.
struct PosteriorMixture {
  std::vector<MixtureTerm> terms;
};

PosteriorMixture bona_posterior(const BayesState& state, const ObservedSequence& y);

UpdateReport bona_observe(BonaState& state, const ObservedSequence& y);
UpdateReport mpa_observe(MpaState& state, const ObservedSequence& y);

/// Per-row Dirichlet means.
Hmm bayes_mean(const HyperParams& hyper);

// ---------------------------------------------------------------------------
// Uniform surface

Hmm estimate(const BwoState& s);
Hmm estimate(const BcState& s);
Hmm estimate(const BonaState& s);
Hmm estimate(const MpaState& s);
Hmm estimate(const LearnerState& s);

UpdateReport observe(LearnerState& s, const ObservedSequence& y);

/// Learner whose estimate is uniform: BWO/BC with uniform parameters (all
/// weights zero for BC), BOnA/MPA with every hyperparameter equal to
/// config.prior_strength.
LearnerState symmetric_learner(const ModelDims& dims, const LearnerConfig& config);

/// Learner whose estimate equals `initial`. BC needs strictly positive
/// entries (w = ln(x) / lambda); the Bayesian learners use
/// HyperParams::from_mean(initial, config.prior_strength).
LearnerState learner_from(const Hmm& initial, const LearnerConfig& config);

/// A learner bound to its configuration and initial state.
class OnlineLearner {
 public:
  OnlineLearner(LearnerConfig config, LearnerState initial)
      : config_(std::move(config)), initial_(std::move(initial)), state_(initial_) {}

  UpdateReport observe(const ObservedSequence& y) { return ohmm::observe(state_, y); }
  Hmm estimate() const { return ohmm::estimate(state_); }
  void reset() { state_ = initial_; }
  void reset(LearnerState initial) {
    initial_ = std::move(initial);
    state_ = initial_;
  }

  const LearnerConfig& config() const { return config_; }
  const LearnerState& state() const { return state_; }

 private:
  LearnerConfig config_;
  LearnerState initial_;
  LearnerState state_;
};

}  // namespace ohmm
