// Acceptance suite. Prints one PASS/FAIL line per criterion.
//
//   acceptance            run every criterion
//   acceptance 3 7 ...    run only the listed criteria
//
// Exit status is non-zero when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ohmm/dirichlet.hpp"
#include "ohmm/harness.hpp"
#include "ohmm/hmm.hpp"
#include "ohmm/learners.hpp"

using namespace ohmm;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Hmm random_hmm(const ModelDims& d, Rng& rng) { return random_teacher(d, rng); }

ObservedSequence random_sequence(const ModelDims& d, Rng& rng) {
  std::uniform_int_distribution<int> sym(0, d.m - 1);
  ObservedSequence y;
  y.symbols.resize(d.T);
  for (auto& s : y.symbols) s = sym(rng);
  return y;
}

ModelDims random_dims(Rng& rng, int max_n, int max_m, int max_T) {
  std::uniform_int_distribution<int> n(1, max_n), m(1, max_m), T(1, max_T);
  return {n(rng), m(rng), T(rng)};
}

// ---------------------------------------------------------------------------

Outcome likelihood_oracle() {
  Stopwatch clock;
  Rng rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const ModelDims d = random_dims(rng, 3, 4, 5);
    const Hmm h = random_hmm(d, rng);
    const ObservedSequence y = random_sequence(d, rng);
    const double fwd = sequence_likelihood(h, y);
    const double brute = brute_force_likelihood(h, y);
    worst = std::max(worst, std::abs(fwd - brute) / std::max(1e-300, std::abs(brute)));
  }
  const double t = clock.seconds();
  return {worst <= 1e-12 && t < 10.0, fmt("max relative error %.3g over 1000 instances, %.2f s", worst, t)};
}

Outcome kl_sanity() {
  Stopwatch clock;
  Rng rng(202);
  double worst_self = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Hmm h = random_hmm(random_dims(rng, 3, 3, 4), rng);
    worst_self = std::max(worst_self, std::abs(kl_divergence(h, h)));
  }
  const double cycle_vs_uniform = kl_divergence(cycle_teacher(), Hmm::uniform({2, 3, 2}));
  const double err = std::abs(cycle_vs_uniform - std::log(9.0));
  const double t = clock.seconds();
  return {worst_self <= 1e-12 && err <= 1e-12 && t < 1.0,
          fmt("max |kl(w,w)| %.3g; kl(cycle teacher, uniform) = %.17g, |. - ln 9| = %.3g; %.3f s", worst_self,
              cycle_vs_uniform, err, t)};
}

Outcome digamma_round_trip() {
  Stopwatch clock;
  Rng rng(303);
  std::uniform_real_distribution<double> entry(0.1, 50.0);
  std::uniform_int_distribution<int> size(2, 6);
  double worst = 0.0;
  int bisections = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const int N = size(rng);
    Vector<double> u(N);
    for (int i = 0; i < N; ++i) u(i) = entry(rng);
    DigammaSystem<double> sys{Vector<double>(N)};
    const double psi0 = digamma(u.sum());
    for (int i = 0; i < N; ++i) sys.mu(i) = digamma(u(i)) - psi0;
    const auto sol = solve_digamma_system(sys);
    bisections += sol.bisection ? 1 : 0;
    worst = std::max(worst, ((sol.x - u).array().abs() / u.array()).maxCoeff());
  }
  const double t = clock.seconds();
  return {worst <= 1e-8 && t < 5.0,
          fmt("max relative error %.3g over 500 systems (%d used bisection), %.2f s", worst, bisections, t)};
}

Outcome log_moment_monte_carlo() {
  Stopwatch clock;
  Rng rng(404);
  std::uniform_real_distribution<double> conc(0.5, 5.0);
  std::uniform_int_distribution<int> size(2, 4), expo(0, 3);
  constexpr int kSamples = 1'000'000;
  int failures = 0;
  double worst_z = 0.0;
  for (int c = 0; c < 50; ++c) {
    const int N = size(rng);
    Vector<double> u(N), r(N);
    for (int j = 0; j < N; ++j) {
      u(j) = conc(rng);
      r(j) = expo(rng);
    }
    const int i = std::uniform_int_distribution<int>(0, N - 1)(rng);
    const LogMoment<double> exact = log_moment(DirichletParams<double>(u), MonomialExponents<double>(r), i);

    std::vector<std::gamma_distribution<double>> gammas;
    for (int j = 0; j < N; ++j) gammas.emplace_back(u(j), 1.0);
    double sum = 0.0, sum_sq = 0.0;
    Vector<double> x(N);
    for (int s = 0; s < kSamples; ++s) {
      for (int j = 0; j < N; ++j) x(j) = gammas[j](rng);
      x /= x.sum();
      double f = std::log(x(i));
      for (int j = 0; j < N; ++j)
        for (int k = 0; k < static_cast<int>(r(j)); ++k) f *= x(j);
      sum += f;
      sum_sq += f * f;
    }
    const double mean = sum / kSamples;
    const double se = std::sqrt((sum_sq / kSamples - mean * mean) / (kSamples - 1));
    const double z = std::abs(mean - exact.average()) / se;
    worst_z = std::max(worst_z, z);
    if (z > 3.0) ++failures;
  }
  const double t = clock.seconds();
  return {failures == 0 && t < 60.0,
          fmt("%d of 50 cases outside 3 standard errors (worst %.2f SE), %.1f s", failures, worst_z, t)};
}

Outcome em_monotonicity() {
  Stopwatch clock;
  Rng rng(505);
  int decreases = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const ModelDims d = random_dims(rng, 3, 4, 5);
    const Hmm h = random_hmm(d, rng);
    const ObservedSequence y = random_sequence(d, rng);
    const double before = sequence_likelihood(h, y);
    const double after = sequence_likelihood(bw_reestimate(h, y), y);
    // Relative slack of a few ulps for the summation order of the two likelihoods.
    if (after < before * (1.0 - 1e-13)) {
      ++decreases;
      worst = std::max(worst, (before - after) / before);
    }
  }
  const double t = clock.seconds();
  return {decreases == 0 && t < 5.0, fmt("%d decreases in 1000 instances (worst %.3g), %.2f s", decreases, worst, t)};
}

// First-order BC vs BWO comparison on matched states: BC logits w (fixed,
// random), BWO parameters softmax(lambda * w). Per block, the prediction is
// (lambda / n)(eta_bc / eta_bw) * occupancy * (BWO variation), where the
// occupancy is 1 for pi, sum_{t<T} gamma_t(i) for A rows and sum_t gamma_t(i)
// for B rows. Returns the worst relative deviation per block.
struct BlockDeviation {
  double pi = 0.0, A = 0.0, B = 0.0;
  double worst() const { return std::max({pi, A, B}); }
};

BlockDeviation first_order_deviation(const ModelDims& d, double lambda, int instances, std::uint64_t seed,
                                     bool width_scaled_b) {
  const double eta_bc = 0.5;
  const double eta_bw = 0.1;
  Rng rng(seed);
  std::uniform_real_distribution<double> logit(-5.0, 5.0);
  BlockDeviation dev;
  for (int k = 0; k < instances; ++k) {
    BcState bc{d, Vector<double>(d.n), Matrix<double>(d.n, d.n), Matrix<double>(d.n, d.m), lambda, eta_bc, 1e-12};
    for (auto* m : {&bc.w_A, &bc.w_B})
      for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = logit(rng);
    for (int i = 0; i < d.n; ++i) bc.w_pi(i) = logit(rng);
    const ObservedSequence y = random_sequence(d, rng);

    const Hmm start = bc_params(bc);
    BwoState bwo{start, eta_bw, 1e-12};
    bwo_observe(bwo, y);
    bc_observe(bc, y);
    const Hmm after_bc = bc_params(bc);

    const auto post = forward_backward(start, y);
    Vector<double> visits = Vector<double>::Zero(d.n), occupancy = Vector<double>::Zero(d.n);
    for (int t = 0; t < d.T; ++t) {
      occupancy += post.gamma.row(t).transpose();
      if (t + 1 < d.T) visits += post.gamma.row(t).transpose();
    }
    const double scale = (lambda / d.n) * (eta_bc / eta_bw);
    const double scale_b = width_scaled_b ? (lambda / d.m) * (eta_bc / eta_bw) : scale;

    const Vector<double> pred_pi = scale * (bwo.omega.pi - start.pi);
    const Matrix<double> pred_A = scale * (visits.asDiagonal() * (bwo.omega.A - start.A));
    const Matrix<double> pred_B = scale_b * (occupancy.asDiagonal() * (bwo.omega.B - start.B));

    auto rel = [](const auto& actual, const auto& predicted) {
      const double denom = predicted.norm();
      return denom > 0.0 ? (actual - predicted).norm() / denom : 0.0;
    };
    dev.pi = std::max(dev.pi, rel(after_bc.pi - start.pi, pred_pi));
    if (d.T > 1) dev.A = std::max(dev.A, rel(after_bc.A - start.A, pred_A));
    dev.B = std::max(dev.B, rel(after_bc.B - start.B, pred_B));
  }
  return dev;
}

Outcome first_order_bc() {
  Stopwatch clock;
  const double lambdas[] = {1e-2, 1e-3, 1e-4};
  std::ostringstream os;
  bool monotone = true;
  double previous = std::numeric_limits<double>::infinity();
  double last = 0.0;
  for (double lambda : lambdas) {
    const BlockDeviation dev = first_order_deviation({3, 3, 3}, lambda, 200, 606, false);
    monotone = monotone && dev.worst() < previous;
    previous = last = dev.worst();
    os << fmt("lambda=%g: pi %.2e A %.2e B %.2e; ", lambda, dev.pi, dev.A, dev.B);
  }
  // n != m: the emission block uses its own row width.
  const BlockDeviation rect = first_order_deviation({2, 3, 2}, 1e-4, 200, 607, true);
  os << fmt("n=2,m=3 at lambda=1e-4 (B scaled by 1/m): worst %.2e; ", rect.worst());
  const double t = clock.seconds();
  os << fmt("%.2f s", t);
  return {monotone && last <= 0.05 && rect.worst() <= 0.05 && t < 10.0, os.str()};
}

ExperimentConfig static_config(long P, int R, std::uint64_t seed) {
  ExperimentConfig c;
  c.dims = {2, 3, 2};
  c.sequences = P;
  c.replicas = R;
  c.seed = seed;
  c.threads = 0;
  return c;
}

double window_mean(const AveragedCurve& c, long from, long to) {
  double s = 0.0;
  long k = 0;
  for (std::size_t i = 0; i < c.p.size(); ++i) {
    if (c.p[i] >= from && c.p[i] <= to) {
      s += c.mean[i];
      ++k;
    }
  }
  return s / static_cast<double>(k);
}

Outcome bwo_plateau() {
  Stopwatch clock;
  const long P = 5000;
  std::ostringstream os;
  bool ok = true;
  for (double eta : {0.02, 0.005, 0.002}) {
    LearnerConfig l;
    l.algorithm = Algorithm::bwo;
    l.eta_bw = eta;
    ExperimentConfig sym = static_config(P, 100, 707);
    const AveragedCurve a = run_averaged(sym, l);
    const double mid = a.mean[P / 2];
    const double tail = window_mean(a, P - P / 10, P);
    const double rel = std::abs(tail - mid) / mid;

    ExperimentConfig pert = sym;
    pert.student.init = StudentInit::perturbed;
    const AveragedCurve b = run_averaged(pert, l);
    const double sym_final = a.mean.back();
    const double pert_final = b.mean.back();
    const bool this_ok = rel < 0.02 && pert_final < sym_final;
    ok = ok && this_ok;
    os << fmt("eta_bw=%g: KL(p=%ld)=%.5f tail=%.5f (%.2f%%), final symmetric %.5f vs perturbed %.5f; ", eta, P / 2,
              mid, tail, 100 * rel, sym_final, pert_final);
  }
  const double t = clock.seconds();
  os << fmt("%.1f s", t);
  return {ok && t < 300.0, os.str()};
}

Outcome bona_vs_mpa_and_projection(Outcome* projection) {
  ExperimentConfig c = static_config(1000, 50, 808);
  LearnerConfig bona;
  bona.algorithm = Algorithm::bona;
  LearnerConfig mpa;
  mpa.algorithm = Algorithm::mpa;

  Stopwatch total;
  Stopwatch t_bona;
  const AveragedCurve b = run_averaged(c, bona);
  const double bona_s = t_bona.seconds();
  Stopwatch t_mpa;
  const AveragedCurve m = run_averaged(c, mpa);
  const double mpa_s = t_mpa.seconds();

  const double gap10 = std::abs(b.mean[10] - m.mean[10]);
  const double gap1000 = std::abs(b.mean[1000] - m.mean[1000]);
  const double ratio = bona_s / mpa_s;
  const double t = total.seconds();
  if (projection) {
    *projection = {b.max_projection_residual <= 1e-8 && b.annotations == 0,
                   fmt("max |psi(u_i)-psi(u_0)-mu_i| %.3g over %d x 1000 BOnA updates, %ld learner errors",
                       b.max_projection_residual, b.replicas, b.annotations)};
  }
  return {gap1000 < gap10 && ratio >= 10.0 && t < 1800.0,
          fmt("gap p=10 %.3g, p=1000 %.3g; wall clock BOnA %.2f s, MPA %.3f s (ratio %.1f); %.1f s", gap10, gap1000,
              bona_s, mpa_s, ratio, t)};
}

Outcome static_ordering() {
  Stopwatch clock;
  ExperimentConfig c = static_config(10'000, 500, 909);
  LearnerConfig mpa;
  mpa.algorithm = Algorithm::mpa;
  LearnerConfig bc;
  bc.algorithm = Algorithm::bc;
  bc.eta_bc = 0.5;
  bc.lambda = 0.01;
  LearnerConfig bwo;
  bwo.algorithm = Algorithm::bwo;
  bwo.eta_bw = 0.1;
  const double k_mpa = run_averaged(c, mpa).mean.back();
  const double k_bc = run_averaged(c, bc).mean.back();
  const double k_bwo = run_averaged(c, bwo).mean.back();
  const double t = clock.seconds();
  return {k_mpa < k_bc && k_mpa < k_bwo && t < 1800.0,
          fmt("final mean KL: MPA %.5f, BC %.5f, BWO %.5f; %.1f s", k_mpa, k_bc, k_bwo, t)};
}

Outcome drift_memory() {
  Stopwatch clock;
  ExperimentConfig c = static_config(1500, 200, 1010);
  c.schedule.kind = ScheduleKind::abrupt;
  c.schedule.interval = 500;
  LearnerConfig bc;
  bc.algorithm = Algorithm::bc;
  bc.lambda = 0.01;
  bc.eta_bc = 10.0;
  LearnerConfig mpa;
  mpa.algorithm = Algorithm::mpa;
  const AveragedCurve b = run_averaged(c, bc);
  const AveragedCurve m = run_averaged(c, mpa);
  // Point 1001 is the first one measured against the teacher drawn at the
  // second switch; point 1500 is the last one before the third.
  const double bc_drop = b.mean[1001] - b.mean[1500];
  const double mpa_drop = m.mean[1001] - m.mean[1500];
  const double t = clock.seconds();
  return {bc_drop > mpa_drop && t < 1200.0,
          fmt("KL drop 1001 -> 1500: BC %.4f (%.4f -> %.4f), MPA %.4f (%.4f -> %.4f); %.1f s", bc_drop, b.mean[1001],
              b.mean[1500], mpa_drop, m.mean[1001], m.mean[1500], t)};
}

std::string fired_blocks(const std::array<BlockBreak, 3>& breaks) {
  std::string s;
  for (const auto& b : breaks) {
    if (!b.fired) continue;
    if (!s.empty()) s += ",";
    s += std::string(to_string(b.block)) + "@" + std::to_string(b.p);
  }
  return s.empty() ? "none" : s;
}

Outcome symmetry_breaking() {
  Stopwatch clock;
  ExperimentConfig c;
  c.dims = {2, 3, 2};
  c.teacher.source = TeacherSource::cycle;
  c.student.init = StudentInit::symmetric;
  c.sequences = 10'000;
  c.snapshots = true;
  c.snapshot_stride = 1;

  LearnerConfig bwo;
  bwo.algorithm = Algorithm::bwo;
  bwo.eta_bw = 0.01;
  LearnerConfig bc;
  bc.algorithm = Algorithm::bc;
  bc.lambda = 0.01;
  bc.eta_bc = 1.0;
  LearnerConfig mpa;
  mpa.algorithm = Algorithm::mpa;

  std::ostringstream os;
  bool ok = true;

  const LearningCurve w = run_single(c, bwo);
  const auto wb = detect_block_breaks(w.snapshots);
  const SharpDrop wd = detect_sharp_drop(w.points);
  const bool bwo_ok = wd.fired && !wb[0].fired && !wb[1].fired && wb[2].fired;
  ok = ok && bwo_ok;
  os << fmt("BWO: sharp drop %s at p=%ld, blocks %s (expect B); ", wd.fired ? "yes" : "no", wd.p,
            fired_blocks(wb).c_str());

  const LearningCurve b = run_single(c, bc);
  const auto bb = detect_block_breaks(b.snapshots);
  // B first, pi and A afterwards.
  const bool bc_ok = bb[0].fired && bb[1].fired && bb[2].fired && bb[2].p < bb[0].p && bb[2].p < bb[1].p;
  ok = ok && bc_ok;
  os << fmt("BC: blocks %s (expect B, then pi and A); ", fired_blocks(bb).c_str());

  const LearningCurve m = run_single(c, mpa);
  const auto mb = detect_block_breaks(m.snapshots);
  const bool mpa_ok = !mb[0].fired && mb[1].fired && mb[2].fired;
  ok = ok && mpa_ok;
  os << fmt("MPA: blocks %s (expect B and A); ", fired_blocks(mb).c_str());

  const double t = clock.seconds();
  os << fmt("%.1f s", t);
  return {ok && t < 300.0, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  Outcome projection{false, "not run (needs criterion 8)"};
  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria = {
      {1, {"likelihood oracle equivalence", likelihood_oracle}},
      {2, {"KL sanity", kl_sanity}},
      {3, {"digamma-system round trip", digamma_round_trip}},
      {4, {"log-moment vs Monte Carlo", log_moment_monte_carlo}},
      {5, {"EM monotonicity", em_monotonicity}},
      {6, {"BC/BWO first-order relation", first_order_bc}},
      {7, {"BWO plateau with symmetric student", bwo_plateau}},
      {8, {"BOnA/MPA proximity and runtime gap", [&] { return bona_vs_mpa_and_projection(&projection); }}},
      {9, {"static ordering MPA < BC, BWO", static_ordering}},
      {10, {"abrupt drift memory effect", drift_memory}},
      {11, {"symmetry breaking per block", symmetry_breaking}},
      {12, {"BOnA projection postcondition", [&] { return projection; }}},
  };

  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  if (selected.empty())
    for (const auto& [k, v] : criteria) selected.push_back(k);
  // Criterion 12 replays the runs of criterion 8.
  if (std::find(selected.begin(), selected.end(), 12) != selected.end() &&
      std::find(selected.begin(), selected.end(), 8) == selected.end()) {
    bona_vs_mpa_and_projection(&projection);
  }
  std::sort(selected.begin(), selected.end());

  int failed = 0;
  for (int k : selected) {
    const auto it = criteria.find(k);
    if (it == criteria.end()) {
      std::printf("criterion %d: unknown\n", k);
      ++failed;
      continue;
    }
    Outcome o;
    try {
      o = it->second.second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %2d [%s]: %s | %s\n", k, it->second.first, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
