#pragma once

// Dirichlet machinery: digamma and its inverse, expectations of monomials
// (and monomial-weighted logarithms) under a Dirichlet, and the solver for
// digamma systems  psi(x_i) - psi(sum_j x_j) = mu_i.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "ohmm/error.hpp"
#include "ohmm/hmm.hpp"

namespace ohmm {

inline constexpr double kEulerGamma = 0.57721566490153286060651209008240243;

// ---------------------------------------------------------------------------
// Special functions

namespace detail {

inline double lgamma_pos(double x) {
  int sign = 0;
  return ::lgamma_r(x, &sign);
}
inline long double lgamma_pos(long double x) {
  int sign = 0;
  return ::lgammal_r(x, &sign);
}
inline float lgamma_pos(float x) {
  int sign = 0;
  return ::lgammaf_r(x, &sign);
}

}  // namespace detail

/// ln Gamma(x) for x > 0 (reentrant; no shared sign state).
template <typename Scalar>
Scalar log_gamma(Scalar x) {
  return detail::lgamma_pos(x);
}

/// psi(x) = d ln Gamma(x) / dx, x > 0. Upward recurrence to x >= 10, then the
/// asymptotic expansion through x^-14.
template <typename Scalar>
Scalar digamma(Scalar x) {
  if (!(x > Scalar(0))) throw DomainError("digamma requires x > 0");
  using std::log;
  Scalar shift(0);
  while (x < Scalar(10)) {
    shift -= Scalar(1) / x;
    x += Scalar(1);
  }
  const Scalar inv = Scalar(1) / x;
  const Scalar inv2 = inv * inv;
  const Scalar tail =
      inv2 * (Scalar(1) / 12 -
              inv2 * (Scalar(1) / 120 -
                      inv2 * (Scalar(1) / 252 -
                              inv2 * (Scalar(1) / 240 -
                                      inv2 * (Scalar(1) / 132 - inv2 * (Scalar(691) / 32760 - inv2 / 12))))));
  return shift + log(x) - inv / 2 - tail;
}

/// psi'(x), x > 0.
template <typename Scalar>
Scalar trigamma(Scalar x) {
  if (!(x > Scalar(0))) throw DomainError("trigamma requires x > 0");
  Scalar shift(0);
  while (x < Scalar(10)) {
    shift += Scalar(1) / (x * x);
    x += Scalar(1);
  }
  const Scalar inv = Scalar(1) / x;
  const Scalar inv2 = inv * inv;
  const Scalar tail =
      inv * (Scalar(1) + inv / 2 +
             inv2 * (Scalar(1) / 6 -
                     inv2 * (Scalar(1) / 30 -
                             inv2 * (Scalar(1) / 42 -
                                     inv2 * (Scalar(1) / 30 - inv2 * (Scalar(5) / 66 - inv2 * Scalar(691) / 2730))))));
  return shift + tail;
}

/// x > 0 with psi(x) = y. Newton on psi, started from exp(y) + 1/2 (y >= -2.22)
/// or -1/(y + gamma) below that.
template <typename Scalar>
Scalar inverse_digamma(Scalar y) {
  using std::abs;
  using std::exp;
  if (!std::isfinite(static_cast<double>(y))) throw DomainError("inverse_digamma of a non-finite value");
  Scalar x = y >= Scalar(-2.22) ? exp(y) + Scalar(0.5) : Scalar(-1) / (y + Scalar(kEulerGamma));
  const Scalar eps = std::numeric_limits<Scalar>::epsilon();
  for (int it = 0; it < 100; ++it) {
    const Scalar step = (digamma(x) - y) / trigamma(x);
    Scalar next = x - step;
    if (!(next > Scalar(0))) next = x / 2;
    const bool done = abs(next - x) <= 4 * eps * next;
    x = next;
    if (done) break;
  }
  return x;
}

// ---------------------------------------------------------------------------
// Dirichlet parameters and monomial moments

/// Concentration vector u of a Dirichlet over the (N-1)-simplex.
template <typename Scalar>
struct DirichletParams {
  Vector<Scalar> u;
  Scalar u0;

  DirichletParams() = default;
  explicit DirichletParams(Vector<Scalar> concentration) : u(std::move(concentration)), u0(u.sum()) {
    if (u.size() == 0) throw DimensionError("Dirichlet needs at least one component");
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      if (!(u(i) > Scalar(0)) || !std::isfinite(static_cast<double>(u(i)))) {
        throw DomainError("Dirichlet concentration must be positive and finite");
      }
    }
  }

  Eigen::Index size() const { return u.size(); }
};

/// Exponents r of the monomial prod_j x_j^{r_j}.
template <typename Scalar>
struct MonomialExponents {
  Vector<Scalar> r;
  Scalar r0;

  MonomialExponents() = default;
  explicit MonomialExponents(Vector<Scalar> exponents) : r(std::move(exponents)), r0(r.sum()) {
    for (Eigen::Index i = 0; i < r.size(); ++i) {
      if (!(r(i) >= Scalar(0))) throw DomainError("monomial exponents must be non-negative");
    }
  }

  static MonomialExponents zero(Eigen::Index n) { return MonomialExponents(Vector<Scalar>::Zero(n)); }
  Eigen::Index size() const { return r.size(); }
};

namespace detail {

template <typename DerivedR>
bool small_integer_exponents(const Eigen::MatrixBase<DerivedR>& r) {
  using Scalar = typename DerivedR::Scalar;
  Scalar total(0);
  for (Eigen::Index j = 0; j < r.size(); ++j) {
    if (r(j) != std::floor(r(j))) return false;
    total += r(j);
  }
  return total <= Scalar(512);
}

}  // namespace detail

/// ln E_u[prod_j x_j^{r_j}] = ln Gamma(u0) - sum ln Gamma(u_j) + sum ln Gamma(u_j + r_j) - ln Gamma(u0 + r0).
/// Integer exponents take an exact rising-factorial route with numerator and
/// denominator factors interleaved so the running product stays in (0, 1].
template <typename DerivedU, typename DerivedR>
typename DerivedU::Scalar log_monomial_mass(const Eigen::MatrixBase<DerivedU>& u, typename DerivedU::Scalar u0,
                                            const Eigen::MatrixBase<DerivedR>& r) {
  using Scalar = typename DerivedU::Scalar;
  using std::log;
  if (u.size() != r.size()) throw DimensionError("concentration and exponent vectors differ in size");
  if (detail::small_integer_exponents(r)) {
    Scalar log_mass(0);
    Scalar product(1);
    int pending = 0;
    Scalar denom = u0;
    for (Eigen::Index j = 0; j < u.size(); ++j) {
      const int rj = static_cast<int>(r(j));
      for (int k = 0; k < rj; ++k) {
        product *= (u(j) + Scalar(k)) / denom;
        denom += Scalar(1);
        if (++pending == 32) {
          log_mass += log(product);
          product = Scalar(1);
          pending = 0;
        }
      }
    }
    return log_mass + log(product);
  }
  Scalar s = log_gamma(u0) - log_gamma(u0 + r.sum());
  for (Eigen::Index j = 0; j < u.size(); ++j) s += log_gamma(u(j) + r(j)) - log_gamma(u(j));
  return s;
}

template <typename Scalar>
Scalar log_monomial_mass(const DirichletParams<Scalar>& u, const MonomialExponents<Scalar>& r) {
  return log_monomial_mass(u.u, u.u0, r.r);
}

/// E_u[(prod_j x_j^{r_j}) ln x_i] split as weight * value, with
/// weight = E_u[prod_j x_j^{r_j}] and value = psi(u_i + r_i) - psi(u0 + r0).
template <typename Scalar>
struct LogMoment {
  Scalar log_weight;
  Scalar weight;
  Scalar value;

  Scalar average() const { return weight * value; }
};

template <typename Scalar>
LogMoment<Scalar> log_moment(const DirichletParams<Scalar>& u, const MonomialExponents<Scalar>& r, Eigen::Index i) {
  if (u.size() != r.size()) throw DimensionError("log_moment: dimension mismatch");
  if (i < 0 || i >= u.size()) throw DimensionError("log_moment: component index out of range");
  using std::exp;
  LogMoment<Scalar> out;
  out.log_weight = log_monomial_mass(u, r);
  out.weight = exp(out.log_weight);
  out.value = digamma(u.u(i) + r.r(i)) - digamma(u.u0 + r.r0);
  return out;
}

/// E_u[prod_j x_j^{r_j + extra_j}].
template <typename Scalar>
Scalar monomial_moment(const DirichletParams<Scalar>& u, const MonomialExponents<Scalar>& r,
                       const MonomialExponents<Scalar>& extra) {
  if (u.size() != r.size() || u.size() != extra.size()) throw DimensionError("monomial_moment: dimension mismatch");
  using std::exp;
  const Vector<Scalar> total = r.r + extra.r;
  return exp(log_monomial_mass(u.u, u.u0, total));
}

/// E[x_i] and E[x_i^2] under Dirichlet(u) in closed form.
template <typename Derived>
typename Derived::Scalar dirichlet_mean(const Eigen::MatrixBase<Derived>& u, typename Derived::Scalar u0,
                                        Eigen::Index i) {
  return u(i) / u0;
}

template <typename Derived>
typename Derived::Scalar dirichlet_variance(const Eigen::MatrixBase<Derived>& u, typename Derived::Scalar u0,
                                            Eigen::Index i) {
  return u(i) * (u0 - u(i)) / (u0 * u0 * (u0 + 1));
}

// ---------------------------------------------------------------------------
// Digamma systems

template <typename Scalar>
struct DigammaSystem {
  Vector<Scalar> mu;
};

struct DigammaSolverOptions {
  double tol = 1e-10;             // relative change of x0 at convergence
  int max_iter = 500;             // fixed-point iterations before falling back to bisection
  double degeneracy_guard = 1e-6; // reject mu_i >= -guard
  double bracket_lo = 1e-8;
  double bracket_hi = 1e8;
};

template <typename Scalar>
struct DigammaSolution {
  Vector<Scalar> x;
  int iterations = 0;
  bool bisection = false;
};

/// max_i |psi(x_i) - psi(sum_j x_j) - mu_i|
template <typename Scalar>
Scalar digamma_system_residual(const DigammaSystem<Scalar>& sys, const Vector<Scalar>& x) {
  using std::abs;
  const Scalar psi0 = digamma(x.sum());
  Scalar worst(0);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const Scalar r = abs(digamma(x(i)) - psi0 - sys.mu(i));
    if (!(r <= worst)) worst = r;
  }
  return worst;
}

/// Solves psi(x_i) - psi(x0) = mu_i, x0 = sum_i x_i, through the one-dimensional
/// map x0 <- sum_i psiinv(mu_i + psi(x0)) started at x0 = N. When the map
/// stops contracting or is too slow to reach `tol` within `max_iter`, the root
/// of the monotone residual sum_i psiinv(mu_i + psi(x0)) - x0 is bisected in
/// log(x0) over [bracket_lo, bracket_hi].
template <typename Scalar>
DigammaSolution<Scalar> solve_digamma_system(const DigammaSystem<Scalar>& sys, DigammaSolverOptions opt = {}) {
  using std::abs;
  using std::log;
  using std::exp;
  using std::sqrt;
  const Eigen::Index N = sys.mu.size();
  if (N == 0) throw DimensionError("empty digamma system");
  for (Eigen::Index i = 0; i < N; ++i) {
    if (!std::isfinite(static_cast<double>(sys.mu(i))) || !(sys.mu(i) < Scalar(-opt.degeneracy_guard))) {
      throw DegenerateSystemError("digamma system coefficient mu_" + std::to_string(i) + " = " +
                                  std::to_string(static_cast<double>(sys.mu(i))) + " is not below -" +
                                  std::to_string(opt.degeneracy_guard));
    }
  }

  auto image = [&](Scalar x0) {
    const Scalar psi0 = digamma(x0);
    Scalar s(0);
    for (Eigen::Index i = 0; i < N; ++i) s += inverse_digamma(sys.mu(i) + psi0);
    return s;
  };
  auto finish = [&](Scalar x0, int iterations, bool bisection) {
    DigammaSolution<Scalar> out;
    const Scalar psi0 = digamma(x0);
    out.x.resize(N);
    for (Eigen::Index i = 0; i < N; ++i) out.x(i) = inverse_digamma(sys.mu(i) + psi0);
    out.iterations = iterations;
    out.bisection = bisection;
    return out;
  };

  const Scalar tol(opt.tol);
  Scalar x0 = Scalar(N);
  Scalar prev_step(0);
  for (int it = 1; it <= opt.max_iter; ++it) {
    const Scalar next = image(x0);
    if (!std::isfinite(static_cast<double>(next)) || !(next > Scalar(0))) break;
    const Scalar step = abs(next - x0);
    x0 = next;
    if (step <= tol * x0) return finish(x0, it, false);
    if (it >= 8 && prev_step > Scalar(0)) {
      const Scalar ratio = step / prev_step;
      if (!(ratio < Scalar(1))) break;  // oscillating or diverging
      const double needed = std::log(static_cast<double>(tol * x0 / step)) / std::log(static_cast<double>(ratio));
      if (needed > opt.max_iter - it) break;  // contracting too slowly to finish
    }
    prev_step = step;
  }

  Scalar lo = log(Scalar(opt.bracket_lo));
  Scalar hi = log(Scalar(opt.bracket_hi));
  auto residual = [&](Scalar log_x0) {
    const Scalar x = exp(log_x0);
    return image(x) - x;
  };
  if (!(residual(lo) > Scalar(0)) || !(residual(hi) < Scalar(0))) {
    throw ConvergenceError("digamma system: fixed-point map stalled and the root is not bracketed");
  }
  int it = 0;
  for (; it < 200 && hi - lo > tol * Scalar(1e-3); ++it) {
    const Scalar mid = (lo + hi) / 2;
    if (residual(mid) > Scalar(0)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return finish(exp((lo + hi) / 2), opt.max_iter + it, true);
}

}  // namespace ohmm
