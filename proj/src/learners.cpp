#include "ohmm/learners.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ohmm {

std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::bwo:
      return "bwo";
    case Algorithm::bc:
      return "bc";
    case Algorithm::bona:
      return "bona";
    case Algorithm::mpa:
      return "mpa";
  }
  return "unknown";
}

Algorithm algorithm_from_string(std::string_view name) {
  if (name == "bwo") return Algorithm::bwo;
  if (name == "bc") return Algorithm::bc;
  if (name == "bona") return Algorithm::bona;
  if (name == "mpa") return Algorithm::mpa;
  throw ConfigError("unknown algorithm \"" + std::string(name) + "\" (expected bwo, bc, bona or mpa)");
}

// ---------------------------------------------------------------------------
// HyperParams

HyperParams HyperParams::symmetric(const ModelDims& dims, double strength) {
  dims.check();
  if (!(strength > 0.0)) throw DomainError("prior strength must be positive");
  HyperParams h;
  h.dims = dims;
  h.rho = Vector<double>::Constant(dims.n, strength);
  h.a = Matrix<double>::Constant(dims.n, dims.n, strength);
  h.b = Matrix<double>::Constant(dims.n, dims.m, strength);
  return h;
}

HyperParams HyperParams::from_mean(const Hmm& mean, double strength) {
  if (!(strength > 0.0)) throw DomainError("prior strength must be positive");
  const auto report = validate(mean);
  if (!report.ok()) throw DomainError("prior mean is not a valid HMM:\n" + report.describe());
  HyperParams h;
  h.dims = mean.dims;
  h.rho = mean.pi * (strength * mean.dims.n);
  h.a = mean.A * (strength * mean.dims.n);
  h.b = mean.B * (strength * mean.dims.m);
  if (h.rho.minCoeff() <= 0.0 || h.a.minCoeff() <= 0.0 || h.b.minCoeff() <= 0.0) {
    throw DomainError("prior mean must have strictly positive entries");
  }
  return h;
}

Hmm bayes_mean(const HyperParams& hyper) {
  Hmm h;
  h.dims = hyper.dims;
  h.pi = hyper.rho / hyper.rho.sum();
  h.A = hyper.a.array().colwise() / hyper.a.rowwise().sum().array();
  h.B = hyper.b.array().colwise() / hyper.b.rowwise().sum().array();
  return h;
}

// ---------------------------------------------------------------------------
// Baum-Welch

Hmm bw_reestimate(const Hmm& params, const ObservedSequence& y, double epsilon) {
  const Hmm work = floored(params, epsilon);
  const auto post = forward_backward(work, y);
  const int n = params.dims.n;
  const int T = params.dims.T;

  Hmm out = params;
  out.pi = post.gamma.row(0).transpose();

  Matrix<double> trans = Matrix<double>::Zero(n, n);
  for (const auto& x : post.xi) trans += x;
  for (int i = 0; i < n; ++i) {
    const double total = trans.row(i).sum();
    if (total > 0.0) out.A.row(i) = trans.row(i) / total;
  }

  Matrix<double> emit = Matrix<double>::Zero(n, params.dims.m);
  for (int t = 0; t < T; ++t) emit.col(y[t]) += post.gamma.row(t).transpose();
  for (int i = 0; i < n; ++i) {
    const double total = emit.row(i).sum();
    if (total > 0.0) out.B.row(i) = emit.row(i) / total;
  }
  return out;
}

namespace {

// Rows that left the simplex (negative entries, possible when eta > 1) are
// clamped at epsilon and renormalized; rows already on the simplex are kept.
template <typename Derived>
void project_exited_rows(Eigen::MatrixBase<Derived>& rows, double epsilon) {
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    auto row = rows.row(i);
    if (row.minCoeff() >= 0.0) continue;
    row = row.cwiseMax(epsilon);
    row /= row.sum();
  }
}

}  // namespace

UpdateReport bwo_observe(BwoState& state, const ObservedSequence& y) {
  const Hmm target = bw_reestimate(state.omega, y, state.epsilon);
  const double eta = state.eta_bw;
  Hmm next = state.omega;
  next.pi = (1.0 - eta) * state.omega.pi + eta * target.pi;
  next.A = (1.0 - eta) * state.omega.A + eta * target.A;
  next.B = (1.0 - eta) * state.omega.B + eta * target.B;
  auto pi_row = next.pi.transpose();
  project_exited_rows(pi_row, state.epsilon);
  project_exited_rows(next.A, state.epsilon);
  project_exited_rows(next.B, state.epsilon);
  state.omega = std::move(next);
  return {};
}

// ---------------------------------------------------------------------------
// Baldi-Chauvin

namespace {

template <typename Derived>
void softmax_rows(Eigen::MatrixBase<Derived>& rows) {
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    auto row = rows.row(i);
    row = (row.array() - row.maxCoeff()).exp().matrix();
    row /= row.sum();
  }
}

}  // namespace

Hmm bc_params(const BcState& s) {
  Hmm h;
  h.dims = s.dims;
  h.pi = s.lambda * s.w_pi;
  h.A = s.lambda * s.w_A;
  h.B = s.lambda * s.w_B;
  auto pi_row = h.pi.transpose();
  softmax_rows(pi_row);
  softmax_rows(h.A);
  softmax_rows(h.B);
  return h;
}

LogitGradient bc_logit_gradient(const Hmm& params, const ObservedSequence& y) {
  const auto post = forward_backward(params, y);
  const int n = params.dims.n;
  const int T = params.dims.T;

  LogitGradient g;
  g.pi = post.gamma.row(0).transpose() - params.pi;

  g.A = Matrix<double>::Zero(n, n);
  Vector<double> visits = Vector<double>::Zero(n);  // sum_{t<T} gamma_t
  for (int t = 0; t + 1 < T; ++t) {
    g.A += post.xi[t];
    visits += post.gamma.row(t).transpose();
  }
  g.A.array() -= params.A.array().colwise() * visits.array();

  g.B = Matrix<double>::Zero(n, params.dims.m);
  for (int t = 0; t < T; ++t) g.B.col(y[t]) += post.gamma.row(t).transpose();
  const Vector<double> occupancy = post.gamma.colwise().sum().transpose();
  g.B.array() -= params.B.array().colwise() * occupancy.array();
  return g;
}

UpdateReport bc_observe(BcState& s, const ObservedSequence& y) {
  const Hmm params = floored(bc_params(s), s.epsilon);
  const LogitGradient g = bc_logit_gradient(params, y);
  s.w_pi += s.eta_bc * g.pi;
  s.w_A += s.eta_bc * g.A;
  s.w_B += s.eta_bc * g.B;
  return {};
}

// ---------------------------------------------------------------------------
// Posterior mixture

PathCounts path_counts(const ModelDims& dims, const ObservedSequence& y, const HiddenPath& q) {
  check_sequence(dims, y);
  check_path(dims, q);
  PathCounts c{Vector<double>::Zero(dims.n), Matrix<double>::Zero(dims.n, dims.n),
               Matrix<double>::Zero(dims.n, dims.m)};
  c.init(q[0]) += 1.0;
  c.emit(q[0], y[0]) += 1.0;
  for (int t = 1; t < dims.T; ++t) {
    c.trans(q[t - 1], q[t]) += 1.0;
    c.emit(q[t], y[t]) += 1.0;
  }
  return c;
}

PosteriorMixture bona_posterior(const BayesState& state, const ObservedSequence& y) {
  const HyperParams& h = state.hyper;
  const ModelDims& d = h.dims;
  check_sequence(d, y);
  const std::uint64_t count = checked_count(d.n, d.T, state.enumeration_cap, "posterior mixture terms");

  const double rho0 = h.rho.sum();
  const Vector<double> a0 = h.a.rowwise().sum();
  const Vector<double> b0 = h.b.rowwise().sum();

  PosteriorMixture mix;
  mix.terms.reserve(count);
  double max_log = -std::numeric_limits<double>::infinity();
  for (std::uint64_t k = 0; k < count; ++k) {
    MixtureTerm term;
    term.path = path_at(d, k);
    term.counts = path_counts(d, y, term.path);
    double lw = log_monomial_mass(h.rho, rho0, term.counts.init);
    for (int i = 0; i < d.n; ++i) {
      lw += log_monomial_mass(h.a.row(i), a0(i), term.counts.trans.row(i));
      lw += log_monomial_mass(h.b.row(i), b0(i), term.counts.emit.row(i));
    }
    term.log_weight = lw;
    max_log = std::max(max_log, lw);
    mix.terms.push_back(std::move(term));
  }
  double total = 0.0;
  for (const auto& t : mix.terms) total += std::exp(t.log_weight - max_log);
  const double log_norm = max_log + std::log(total);
  for (auto& t : mix.terms) t.log_weight -= log_norm;
  return mix;
}

namespace {

using RowVector = Eigen::RowVectorXd;

// Applies `project(u, counts, weights)` to every row distribution of the
// factorized posterior and assembles the projected hyperparameters.
// `counts` holds one row of exponents per mixture term.
template <typename Project>
HyperParams project_rows(const HyperParams& h, const PosteriorMixture& mix, Project&& project) {
  const ModelDims& d = h.dims;
  const Eigen::Index K = static_cast<Eigen::Index>(mix.terms.size());
  Vector<double> weights(K);
  for (Eigen::Index k = 0; k < K; ++k) weights(k) = std::exp(mix.terms[k].log_weight);

  HyperParams out = h;
  Matrix<double> counts(K, d.n);
  for (Eigen::Index k = 0; k < K; ++k) counts.row(k) = mix.terms[k].counts.init.transpose();
  out.rho = project(RowVector(h.rho.transpose()), counts, weights).transpose();

  for (int i = 0; i < d.n; ++i) {
    for (Eigen::Index k = 0; k < K; ++k) counts.row(k) = mix.terms[k].counts.trans.row(i);
    out.a.row(i) = project(RowVector(h.a.row(i)), counts, weights);
  }
  counts.resize(K, d.m);
  for (int i = 0; i < d.n; ++i) {
    for (Eigen::Index k = 0; k < K; ++k) counts.row(k) = mix.terms[k].counts.emit.row(i);
    out.b.row(i) = project(RowVector(h.b.row(i)), counts, weights);
  }
  return out;
}

}  // namespace

UpdateReport bona_observe(BonaState& state, const ObservedSequence& y) {
  const PosteriorMixture mix = bona_posterior(state.bayes, y);
  UpdateReport report;
  auto project = [&](const RowVector& u, const Matrix<double>& counts, const Vector<double>& w) -> RowVector {
    const Eigen::Index N = u.size();
    if (N == 1) return u;  // point mass; nothing to match
    const double u0 = u.sum();
    DigammaSystem<double> sys{Vector<double>::Zero(N)};
    for (Eigen::Index k = 0; k < counts.rows(); ++k) {
      const double psi0 = digamma(u0 + counts.row(k).sum());
      for (Eigen::Index i = 0; i < N; ++i) sys.mu(i) += w(k) * (digamma(u(i) + counts(k, i)) - psi0);
    }
    const auto sol = solve_digamma_system(sys, state.solver);
    report.projection_residual = std::max(report.projection_residual, digamma_system_residual(sys, sol.x));
    if (sol.bisection) ++report.bisection_solves;
    return sol.x.transpose();
  };
  HyperParams next = project_rows(state.bayes.hyper, mix, project);
  state.bayes.hyper = std::move(next);
  return report;
}

UpdateReport mpa_observe(MpaState& state, const ObservedSequence& y) {
  const PosteriorMixture mix = bona_posterior(state.bayes, y);
  auto project = [&](const RowVector& u, const Matrix<double>& counts, const Vector<double>& w) -> RowVector {
    const Eigen::Index N = u.size();
    if (N == 1) return u;
    // Posterior mean of every component, and mean/variance of component 0
    // via the law of total variance over the mixture terms.
    RowVector mean = RowVector::Zero(N);
    RowVector v(N);
    Vector<double> m0(counts.rows());
    double within = 0.0;
    for (Eigen::Index k = 0; k < counts.rows(); ++k) {
      v = u + counts.row(k);
      const double v0 = v.sum();
      mean += w(k) * (v / v0);
      m0(k) = dirichlet_mean(v, v0, 0);
      within += w(k) * dirichlet_variance(v, v0, 0);
    }
    double between = 0.0;
    for (Eigen::Index k = 0; k < counts.rows(); ++k) between += w(k) * (m0(k) - mean(0)) * (m0(k) - mean(0));
    const double var = within + between;
    if (!(var >= state.min_variance)) {
      throw CollapsedComponentError("posterior variance of component 0 collapsed (" + std::to_string(var) + ")");
    }
    const double total = mean(0) * (1.0 - mean(0)) / var - 1.0;
    if (!(total > 0.0)) throw CollapsedComponentError("moment matching produced a non-positive concentration");
    return mean * total;
  };
  HyperParams next = project_rows(state.bayes.hyper, mix, project);
  state.bayes.hyper = std::move(next);
  return {};
}

// ---------------------------------------------------------------------------
// Uniform surface

Hmm estimate(const BwoState& s) { return s.omega; }
Hmm estimate(const BcState& s) { return bc_params(s); }
Hmm estimate(const BonaState& s) { return bayes_mean(s.bayes.hyper); }
Hmm estimate(const MpaState& s) { return bayes_mean(s.bayes.hyper); }

Hmm estimate(const LearnerState& s) {
  return std::visit([](const auto& st) { return estimate(st); }, s);
}

UpdateReport observe(LearnerState& s, const ObservedSequence& y) {
  return std::visit(
      [&](auto& st) -> UpdateReport {
        using T = std::decay_t<decltype(st)>;
        if constexpr (std::is_same_v<T, BwoState>) return bwo_observe(st, y);
        if constexpr (std::is_same_v<T, BcState>) return bc_observe(st, y);
        if constexpr (std::is_same_v<T, BonaState>) return bona_observe(st, y);
        if constexpr (std::is_same_v<T, MpaState>) return mpa_observe(st, y);
      },
      s);
}

namespace {

void check_config(const LearnerConfig& c) {
  if (!(c.epsilon > 0.0 && c.epsilon < 1.0)) throw ConfigError("epsilon must lie in (0, 1)");
  switch (c.algorithm) {
    case Algorithm::bwo:
      if (!(c.eta_bw > 0.0)) throw ConfigError("eta_bw must be positive");
      break;
    case Algorithm::bc:
      if (!(c.eta_bc > 0.0)) throw ConfigError("eta_bc must be positive");
      if (!(c.lambda > 0.0)) throw ConfigError("lambda must be positive");
      break;
    case Algorithm::bona:
    case Algorithm::mpa:
      if (!(c.prior_strength > 0.0)) throw ConfigError("prior_strength must be positive");
      break;
  }
}

LearnerState bayes_learner(HyperParams hyper, const LearnerConfig& c) {
  BayesState bayes{std::move(hyper), c.enumeration_cap};
  if (c.algorithm == Algorithm::bona) return BonaState{std::move(bayes), {}};
  return MpaState{std::move(bayes)};
}

}  // namespace

LearnerState symmetric_learner(const ModelDims& dims, const LearnerConfig& c) {
  dims.check();
  check_config(c);
  switch (c.algorithm) {
    case Algorithm::bwo:
      return BwoState{Hmm::uniform(dims), c.eta_bw, c.epsilon};
    case Algorithm::bc:
      return BcState{dims,     Vector<double>::Zero(dims.n), Matrix<double>::Zero(dims.n, dims.n),
                     Matrix<double>::Zero(dims.n, dims.m), c.lambda, c.eta_bc, c.epsilon};
    case Algorithm::bona:
    case Algorithm::mpa:
      return bayes_learner(HyperParams::symmetric(dims, c.prior_strength), c);
  }
  throw ConfigError("unknown algorithm");
}

LearnerState learner_from(const Hmm& initial, const LearnerConfig& c) {
  check_config(c);
  const auto report = validate(initial);
  if (!report.ok()) throw DomainError("initial student is not a valid HMM:\n" + report.describe());
  switch (c.algorithm) {
    case Algorithm::bwo:
      return BwoState{initial, c.eta_bw, c.epsilon};
    case Algorithm::bc: {
      if (initial.pi.minCoeff() <= 0.0 || initial.A.minCoeff() <= 0.0 || initial.B.minCoeff() <= 0.0) {
        throw DomainError("a softmax student needs strictly positive initial parameters");
      }
      return BcState{initial.dims,
                     initial.pi.array().log().matrix() / c.lambda,
                     initial.A.array().log().matrix() / c.lambda,
                     initial.B.array().log().matrix() / c.lambda,
                     c.lambda,
                     c.eta_bc,
                     c.epsilon};
    }
    case Algorithm::bona:
    case Algorithm::mpa:
      return bayes_learner(HyperParams::from_mean(initial, c.prior_strength), c);
  }
  throw ConfigError("unknown algorithm");
}

}  // namespace ohmm
