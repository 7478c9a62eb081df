#pragma once

// Discrete hidden Markov models: parameters, sampling, forward/backward
// recursions, exact sequence-space KL divergence and brute-force oracles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ohmm/error.hpp"

namespace ohmm {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::uint64_t kDefaultEnumerationCap = 1'000'000;

struct ModelDims {
  int n = 1;  // hidden states
  int m = 1;  // observation symbols
  int T = 1;  // sequence length

  friend bool operator==(const ModelDims&, const ModelDims&) = default;

  void check() const {
    if (n < 1 || m < 1 || T < 1) {
      std::ostringstream os;
      os << "model dimensions must be positive (n=" << n << ", m=" << m << ", T=" << T << ")";
      throw DimensionError(os.str());
    }
  }
};

struct ObservedSequence {
  std::vector<int> symbols;

  std::size_t size() const { return symbols.size(); }
  int operator[](std::size_t t) const { return symbols[t]; }
  friend bool operator==(const ObservedSequence&, const ObservedSequence&) = default;
  friend auto operator<=>(const ObservedSequence&, const ObservedSequence&) = default;
};

struct HiddenPath {
  std::vector<int> states;

  std::size_t size() const { return states.size(); }
  int operator[](std::size_t t) const { return states[t]; }
  friend bool operator==(const HiddenPath&, const HiddenPath&) = default;
};

/// Parameter triple (pi, A, B) of a time-homogeneous discrete HMM.
template <typename Scalar>
struct HmmParams {
  ModelDims dims;
  Vector<Scalar> pi;  // n
  Matrix<Scalar> A;   // n x n, row i is P(q_{t+1} | q_t = i)
  Matrix<Scalar> B;   // n x m, row i is P(y_t | q_t = i)

  static HmmParams uniform(const ModelDims& dims) {
    dims.check();
    HmmParams h;
    h.dims = dims;
    h.pi = Vector<Scalar>::Constant(dims.n, Scalar(1) / Scalar(dims.n));
    h.A = Matrix<Scalar>::Constant(dims.n, dims.n, Scalar(1) / Scalar(dims.n));
    h.B = Matrix<Scalar>::Constant(dims.n, dims.m, Scalar(1) / Scalar(dims.m));
    return h;
  }

  friend bool operator==(const HmmParams& a, const HmmParams& b) {
    return a.dims == b.dims && a.pi == b.pi && a.A == b.A && a.B == b.B;
  }
};

using Hmm = HmmParams<double>;

// ---------------------------------------------------------------------------
// Validation

struct Violation {
  std::string block;  // "pi", "A", "B" or "dims"
  int row = -1;
  double deviation = 0.0;  // |row sum - 1|, or distance outside [0, 1]
  std::string what;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }

  std::string describe() const {
    std::ostringstream os;
    for (const auto& v : violations) {
      os << v.block;
      if (v.row >= 0) os << "[" << v.row << "]";
      os << ": " << v.what << " (deviation " << v.deviation << ")\n";
    }
    return os.str();
  }
};

namespace detail {

template <typename Row>
void check_stochastic_row(const Row& row, const std::string& block, int index, double tol,
                          ValidationReport& report) {
  double worst = 0.0;
  for (Eigen::Index k = 0; k < row.size(); ++k) {
    const double x = static_cast<double>(row(k));
    if (!std::isfinite(x)) {
      report.violations.push_back({block, index, std::numeric_limits<double>::infinity(), "non-finite entry"});
      return;
    }
    worst = std::max({worst, -x, x - 1.0});
  }
  if (worst > 0.0) report.violations.push_back({block, index, worst, "entry outside [0, 1]"});
  const double dev = std::abs(static_cast<double>(row.sum()) - 1.0);
  if (dev > tol) report.violations.push_back({block, index, dev, "row does not sum to 1"});
}

}  // namespace detail

template <typename Scalar>
ValidationReport validate(const HmmParams<Scalar>& h, double tol = 1e-12) {
  ValidationReport report;
  const auto& d = h.dims;
  if (d.n < 1 || d.m < 1 || d.T < 1) {
    report.violations.push_back({"dims", -1, 0.0, "non-positive dimension"});
    return report;
  }
  if (h.pi.size() != d.n || h.A.rows() != d.n || h.A.cols() != d.n || h.B.rows() != d.n ||
      h.B.cols() != d.m) {
    report.violations.push_back({"dims", -1, 0.0, "array shapes disagree with (n, m)"});
    return report;
  }
  detail::check_stochastic_row(h.pi.transpose(), "pi", -1, tol, report);
  for (int i = 0; i < d.n; ++i) detail::check_stochastic_row(h.A.row(i), "A", i, tol, report);
  for (int i = 0; i < d.n; ++i) detail::check_stochastic_row(h.B.row(i), "B", i, tol, report);
  return report;
}

inline void check_sequence(const ModelDims& d, const ObservedSequence& y) {
  if (static_cast<int>(y.size()) != d.T) {
    throw DimensionError("sequence length " + std::to_string(y.size()) + " != T=" + std::to_string(d.T));
  }
  for (int s : y.symbols) {
    if (s < 0 || s >= d.m) throw DimensionError("observation index " + std::to_string(s) + " outside [0, m)");
  }
}

inline void check_path(const ModelDims& d, const HiddenPath& q) {
  if (static_cast<int>(q.size()) != d.T) {
    throw DimensionError("path length " + std::to_string(q.size()) + " != T=" + std::to_string(d.T));
  }
  for (int s : q.states) {
    if (s < 0 || s >= d.n) throw DimensionError("state index " + std::to_string(s) + " outside [0, n)");
  }
}

// ---------------------------------------------------------------------------
// Enumeration helpers

/// base^exponent, or EnumerationCapError if it exceeds `cap`.
inline std::uint64_t checked_count(int base, int exponent, std::uint64_t cap, const char* what) {
  std::uint64_t count = 1;
  for (int k = 0; k < exponent; ++k) {
    if (count > cap / static_cast<std::uint64_t>(base)) {
      throw EnumerationCapError(std::string(what) + ": " + std::to_string(base) + "^" + std::to_string(exponent) +
                                " exceeds enumeration cap " + std::to_string(cap));
    }
    count *= static_cast<std::uint64_t>(base);
  }
  if (count > cap) throw EnumerationCapError(std::string(what) + " exceeds enumeration cap");
  return count;
}

/// Mixed-radix decoding: index -> digits in [0, base), most significant first (t = 0).
inline void decode_index(std::uint64_t index, int base, std::vector<int>& digits) {
  for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
    *it = static_cast<int>(index % static_cast<std::uint64_t>(base));
    index /= static_cast<std::uint64_t>(base);
  }
}

inline ObservedSequence sequence_at(const ModelDims& d, std::uint64_t index) {
  ObservedSequence y{std::vector<int>(d.T)};
  decode_index(index, d.m, y.symbols);
  return y;
}

inline HiddenPath path_at(const ModelDims& d, std::uint64_t index) {
  HiddenPath q{std::vector<int>(d.T)};
  decode_index(index, d.n, q.states);
  return q;
}

// ---------------------------------------------------------------------------
// Likelihoods

/// pi_{q1} B_{q1,y1} prod_{t>=2} A_{q(t-1),q(t)} B_{q(t),y(t)}
template <typename Scalar>
Scalar joint_path_probability(const HmmParams<Scalar>& h, const ObservedSequence& y, const HiddenPath& q) {
  check_sequence(h.dims, y);
  check_path(h.dims, q);
  Scalar p = h.pi(q[0]) * h.B(q[0], y[0]);
  for (int t = 1; t < h.dims.T; ++t) p *= h.A(q[t - 1], q[t]) * h.B(q[t], y[t]);
  return p;
}

struct ForwardOptions {
  bool scaled = true;  // normalize alpha at every step and carry the scale factors
};

template <typename Scalar>
struct ForwardResult {
  Scalar likelihood;
  Scalar log_likelihood;
};

template <typename Scalar>
ForwardResult<Scalar> forward(const HmmParams<Scalar>& h, const ObservedSequence& y, ForwardOptions opt = {}) {
  check_sequence(h.dims, y);
  using std::log;
  Vector<Scalar> alpha = h.pi.cwiseProduct(h.B.col(y[0]));
  Vector<Scalar> next(h.dims.n);
  Scalar log_scale(0);
  Scalar scale_product(1);
  auto rescale = [&]() -> bool {
    if (!opt.scaled) return true;
    const Scalar c = alpha.sum();
    if (!(c > Scalar(0))) return false;
    alpha /= c;
    log_scale += log(c);
    scale_product *= c;
    return true;
  };
  if (!rescale()) return {Scalar(0), -std::numeric_limits<Scalar>::infinity()};
  for (int t = 1; t < h.dims.T; ++t) {
    next.noalias() = h.A.transpose() * alpha;
    alpha = next.cwiseProduct(h.B.col(y[t]));
    if (!rescale()) return {Scalar(0), -std::numeric_limits<Scalar>::infinity()};
  }
  if (opt.scaled) return {scale_product, log_scale};
  const Scalar p = alpha.sum();
  return {p, p > Scalar(0) ? log(p) : -std::numeric_limits<Scalar>::infinity()};
}

/// P(y | params) by the forward recursion, O(n^2 T).
template <typename Scalar>
Scalar sequence_likelihood(const HmmParams<Scalar>& h, const ObservedSequence& y, ForwardOptions opt = {}) {
  return forward(h, y, opt).likelihood;
}

/// Test oracle: sum of joint_path_probability over all n^T hidden paths.
template <typename Scalar>
Scalar brute_force_likelihood(const HmmParams<Scalar>& h, const ObservedSequence& y,
                              std::uint64_t cap = kDefaultEnumerationCap) {
  check_sequence(h.dims, y);
  const std::uint64_t paths = checked_count(h.dims.n, h.dims.T, cap, "hidden paths");
  Scalar total(0);
  HiddenPath q{std::vector<int>(h.dims.T)};
  for (std::uint64_t k = 0; k < paths; ++k) {
    decode_index(k, h.dims.n, q.states);
    total += joint_path_probability(h, y, q);
  }
  return total;
}

/// Posterior marginals of the hidden chain given one observed sequence.
template <typename Scalar>
struct PathPosterior {
  Matrix<Scalar> gamma;            // T x n
  std::vector<Matrix<Scalar>> xi;  // T-1 matrices, n x n
  Scalar log_likelihood;
};

template <typename Scalar>
PathPosterior<Scalar> forward_backward(const HmmParams<Scalar>& h, const ObservedSequence& y) {
  check_sequence(h.dims, y);
  const int n = h.dims.n;
  const int T = h.dims.T;
  using std::log;

  Matrix<Scalar> alpha(T, n);
  Vector<Scalar> scale(T);
  alpha.row(0) = h.pi.cwiseProduct(h.B.col(y[0])).transpose();
  for (int t = 0; t < T; ++t) {
    if (t > 0) {
      alpha.row(t) = (alpha.row(t - 1) * h.A).cwiseProduct(h.B.col(y[t]).transpose());
    }
    scale(t) = alpha.row(t).sum();
    if (!(scale(t) > Scalar(0))) throw ZeroLikelihoodError("observed sequence has zero likelihood under the model");
    alpha.row(t) /= scale(t);
  }

  Matrix<Scalar> beta(T, n);
  beta.row(T - 1).setOnes();
  for (int t = T - 2; t >= 0; --t) {
    const Vector<Scalar> weighted = h.B.col(y[t + 1]).cwiseProduct(beta.row(t + 1).transpose());
    beta.row(t) = (h.A * weighted).transpose() / scale(t + 1);
  }

  PathPosterior<Scalar> post;
  post.gamma = alpha.cwiseProduct(beta);
  for (int t = 0; t < T; ++t) post.gamma.row(t) /= post.gamma.row(t).sum();
  post.xi.reserve(T > 1 ? T - 1 : 0);
  for (int t = 0; t + 1 < T; ++t) {
    Matrix<Scalar> x(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) x(i, j) = alpha(t, i) * h.A(i, j) * h.B(j, y[t + 1]) * beta(t + 1, j);
    }
    x /= x.sum();
    post.xi.push_back(std::move(x));
  }
  post.log_likelihood = scale.array().log().sum();
  return post;
}

// ---------------------------------------------------------------------------
// Sampling

namespace detail {

template <typename Row, typename Rng>
int draw_categorical(const Row& probs, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  double cumulative = 0.0;
  int last_positive = 0;
  for (Eigen::Index k = 0; k < probs.size(); ++k) {
    const double p = static_cast<double>(probs(k));
    if (p > 0.0) last_positive = static_cast<int>(k);
    cumulative += p;
    if (u < cumulative && p > 0.0) return static_cast<int>(k);
  }
  return last_positive;
}

}  // namespace detail

/// Draws q_1 ~ pi, y_t ~ B[q_t], q_{t+1} ~ A[q_t] and returns y.
template <typename Scalar, typename Rng>
ObservedSequence sample_sequence(const HmmParams<Scalar>& h, Rng& rng) {
  ObservedSequence y{std::vector<int>(h.dims.T)};
  int q = detail::draw_categorical(h.pi, rng);
  for (int t = 0; t < h.dims.T; ++t) {
    if (t > 0) q = detail::draw_categorical(h.A.row(q), rng);
    y.symbols[t] = detail::draw_categorical(h.B.row(q), rng);
  }
  return y;
}

// ---------------------------------------------------------------------------
// Sequence-space distributions and KL divergence

/// P(y | params) for every y in {0..m-1}^T, indexed by sequence_at order.
template <typename Scalar>
std::vector<Scalar> sequence_distribution(const HmmParams<Scalar>& h, std::uint64_t cap = kDefaultEnumerationCap) {
  const std::uint64_t count = checked_count(h.dims.m, h.dims.T, cap, "observation sequences");
  std::vector<Scalar> probs(count);
  ObservedSequence y{std::vector<int>(h.dims.T)};
  for (std::uint64_t k = 0; k < count; ++k) {
    decode_index(k, h.dims.m, y.symbols);
    probs[k] = sequence_likelihood(h, y);
  }
  return probs;
}

/// sum_y P1(y) ln(P1(y) / P2(y)) over two precomputed sequence distributions.
/// Returns +infinity when P2 vanishes somewhere P1 does not.
template <typename Scalar>
Scalar kl_divergence(const std::vector<Scalar>& p1, const std::vector<Scalar>& p2) {
  if (p1.size() != p2.size()) throw DimensionError("sequence distributions differ in size");
  using std::log;
  Scalar total(0);
  for (std::size_t k = 0; k < p1.size(); ++k) {
    if (!(p1[k] > Scalar(0))) continue;
    if (!(p2[k] > Scalar(0))) return std::numeric_limits<Scalar>::infinity();
    total += p1[k] * log(p1[k] / p2[k]);
  }
  // Rounding can leave a tiny negative residue for (near-)identical models.
  return total < Scalar(0) ? Scalar(0) : total;
}

/// Exact KL divergence between the sequence distributions of two HMMs with equal dims.
template <typename Scalar>
Scalar kl_divergence(const HmmParams<Scalar>& h1, const HmmParams<Scalar>& h2,
                     std::uint64_t cap = kDefaultEnumerationCap) {
  if (!(h1.dims == h2.dims)) throw DimensionError("KL divergence between HMMs of different dimensions");
  return kl_divergence(sequence_distribution(h1, cap), sequence_distribution(h2, cap));
}

// ---------------------------------------------------------------------------
// Row utilities

/// Clamps every entry below `floor` up to it and renormalizes the touched rows.
template <typename Derived>
void floor_rows(Eigen::MatrixBase<Derived>& rows, typename Derived::Scalar floor) {
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    auto row = rows.row(i);
    if (row.minCoeff() >= floor) continue;
    row = row.cwiseMax(floor);
    row /= row.sum();
  }
}

/// Copy of `h` with all entries floored at `epsilon` (rows renormalized only where clamped).
template <typename Scalar>
HmmParams<Scalar> floored(HmmParams<Scalar> h, Scalar epsilon) {
  auto pi_row = h.pi.transpose();
  floor_rows(pi_row, epsilon);
  floor_rows(h.A, epsilon);
  floor_rows(h.B, epsilon);
  return h;
}

}  // namespace ohmm
