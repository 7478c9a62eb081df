#include "ohmm/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

namespace ohmm {

namespace {

template <typename Derived>
void fill_dirichlet_rows(Eigen::MatrixBase<Derived>& rows, Rng& rng) {
  std::exponential_distribution<double> expo(1.0);
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    auto row = rows.row(i);
    for (Eigen::Index k = 0; k < row.size(); ++k) row(k) = expo(rng);
    row /= row.sum();
  }
}

template <typename Derived>
void perturb_rows(Eigen::MatrixBase<Derived>& rows, double size, Rng& rng) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    auto row = rows.row(i);
    for (Eigen::Index k = 0; k < row.size(); ++k) row(k) *= 1.0 + size * unit(rng);
    row /= row.sum();
  }
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng stream(std::uint64_t seed, std::uint32_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), purpose};
  return Rng(seq);
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(v.begin(), mid);
  return 0.5 * (lower + upper);
}

}  // namespace

void check_experiment(const ExperimentConfig& c) {
  if (c.dims.n < 1 || c.dims.m < 1 || c.dims.T < 1) throw ConfigError("dims: n, m and T must be >= 1");
  if (c.sequences < 0) throw ConfigError("sequences: must be >= 0");
  if (c.replicas < 1) throw ConfigError("replicas: must be >= 1");
  if (c.snapshot_stride < 1) throw ConfigError("snapshot_stride: must be >= 1");
  if (c.threads < 0) throw ConfigError("threads: must be >= 0");
  if (c.enumeration_cap < 1) throw ConfigError("enumeration_cap: must be >= 1");
  if (c.schedule.kind == ScheduleKind::abrupt && c.schedule.interval < 1) {
    throw ConfigError("schedule.interval: must be >= 1");
  }
  if (c.schedule.kind == ScheduleKind::gradual && !(c.schedule.delta > 0.0)) {
    throw ConfigError("schedule.delta: must be > 0");
  }
  if (!(c.student.perturbation >= 0.0 && c.student.perturbation < 1.0)) {
    throw ConfigError("student.perturbation: must lie in [0, 1)");
  }
  if (c.teacher.source == TeacherSource::cycle && !(c.dims == ModelDims{2, 3, 2})) {
    throw ConfigError("teacher: the cycle teacher needs dims n=2, m=3, T=2");
  }
  if (c.teacher.source == TeacherSource::given) {
    if (!c.teacher.params) throw ConfigError("teacher.params: required for a given teacher");
    if (!(c.teacher.params->dims == c.dims)) throw ConfigError("teacher.params: dims disagree with config dims");
    const auto report = validate(*c.teacher.params);
    if (!report.ok()) throw ConfigError("teacher.params: invalid HMM:\n" + report.describe());
  }
  checked_count(c.dims.m, c.dims.T, c.enumeration_cap, "dims: observation sequences for exact KL");
}

// ---------------------------------------------------------------------------
// Teachers

Hmm random_teacher(const ModelDims& dims, Rng& rng) {
  dims.check();
  Hmm h;
  h.dims = dims;
  h.pi.resize(dims.n);
  h.A.resize(dims.n, dims.n);
  h.B.resize(dims.n, dims.m);
  auto pi_row = h.pi.transpose();
  fill_dirichlet_rows(pi_row, rng);
  fill_dirichlet_rows(h.A, rng);
  fill_dirichlet_rows(h.B, rng);
  return h;
}

Hmm cycle_teacher() {
  Hmm h;
  h.dims = {2, 3, 2};
  h.pi.resize(2);
  h.pi << 1, 0;
  h.A.resize(2, 2);
  h.A << 0, 1, 1, 0;
  h.B.resize(2, 3);
  h.B << 1, 0, 0, 0, 0, 1;
  return h;
}

Hmm drift_step(const TeacherSchedule& schedule, const Hmm& teacher, long p, Rng& rng) {
  switch (schedule.kind) {
    case ScheduleKind::fixed:
      return teacher;
    case ScheduleKind::abrupt:
      if (p > 0 && p % schedule.interval == 0) return random_teacher(teacher.dims, rng);
      return teacher;
    case ScheduleKind::gradual: {
      std::uniform_real_distribution<double> noise(0.0, schedule.delta);
      Hmm next = teacher;
      auto bump = [&](auto& rows) {
        for (Eigen::Index i = 0; i < rows.rows(); ++i) {
          auto row = rows.row(i);
          for (Eigen::Index k = 0; k < row.size(); ++k) row(k) = std::max(0.0, row(k) + noise(rng));
          row /= row.sum();
        }
      };
      auto pi_row = next.pi.transpose();
      bump(pi_row);
      bump(next.A);
      bump(next.B);
      return next;
    }
  }
  return teacher;
}

LearnerState initial_student(const ExperimentConfig& config, const LearnerConfig& learner, const Hmm& teacher,
                             Rng& rng) {
  switch (config.student.init) {
    case StudentInit::symmetric:
      return symmetric_learner(config.dims, learner);
    case StudentInit::perturbed: {
      Hmm h = Hmm::uniform(config.dims);
      auto pi_row = h.pi.transpose();
      perturb_rows(pi_row, config.student.perturbation, rng);
      perturb_rows(h.A, config.student.perturbation, rng);
      perturb_rows(h.B, config.student.perturbation, rng);
      return learner_from(h, learner);
    }
    case StudentInit::teacher_mean:
      // Hard zeros would give zero Dirichlet concentrations and -inf BC logits.
      return learner_from(floored(teacher, learner.epsilon), learner);
  }
  throw ConfigError("unknown student initialization");
}

// ---------------------------------------------------------------------------
// Runs

std::uint64_t replica_seed(std::uint64_t master, int replica) {
  return splitmix64(splitmix64(master) ^ static_cast<std::uint64_t>(replica));
}

LearningCurve run_replica(const ExperimentConfig& config, const LearnerConfig& learner_config, std::uint64_t seed) {
  Rng teacher_rng = stream(seed, 1);
  Rng sequence_rng = stream(seed, 2);
  Rng student_rng = stream(seed, 3);

  Hmm teacher;
  switch (config.teacher.source) {
    case TeacherSource::random:
      teacher = random_teacher(config.dims, teacher_rng);
      break;
    case TeacherSource::cycle:
      teacher = cycle_teacher();
      break;
    case TeacherSource::given:
      teacher = *config.teacher.params;
      break;
  }
  OnlineLearner learner(learner_config, initial_student(config, learner_config, teacher, student_rng));

  const std::uint64_t cap = config.enumeration_cap;
  std::vector<double> teacher_dist = sequence_distribution(teacher, cap);

  LearningCurve curve;
  curve.points.reserve(static_cast<std::size_t>(config.sequences) + 1);
  auto record = [&](long p) {
    const Hmm est = learner.estimate();
    curve.points.push_back({p, kl_divergence(teacher_dist, sequence_distribution(est, cap))});
    if (config.snapshots && p % config.snapshot_stride == 0) curve.snapshots.push_back({p, est});
  };

  record(0);
  for (long p = 1; p <= config.sequences; ++p) {
    const ObservedSequence y = sample_sequence(teacher, sequence_rng);
    try {
      const UpdateReport report = learner.observe(y);
      curve.max_projection_residual = std::max(curve.max_projection_residual, report.projection_residual);
      curve.bisection_solves += report.bisection_solves;
    } catch (const Error& e) {
      curve.annotations.push_back({p, e.what()});
    }
    record(p);
    if (config.schedule.kind != ScheduleKind::fixed) {
      Hmm next = drift_step(config.schedule, teacher, p, teacher_rng);
      if (!(next == teacher)) {
        teacher = std::move(next);
        teacher_dist = sequence_distribution(teacher, cap);
      }
    }
  }
  return curve;
}

LearningCurve run_single(const ExperimentConfig& config, const LearnerConfig& learner) {
  check_experiment(config);
  return run_replica(config, learner, replica_seed(config.seed, 0));
}

AveragedCurve run_replicas(const ExperimentConfig& config, const LearnerConfig& learner,
                           std::span<const std::uint64_t> seeds) {
  check_experiment(config);
  std::vector<LearningCurve> curves(seeds.size());
  const int workers =
      std::max(1, std::min<int>(config.threads == 0 ? static_cast<int>(std::thread::hardware_concurrency())
                                                    : config.threads,
                                static_cast<int>(seeds.size())));
  if (workers == 1) {
    for (std::size_t r = 0; r < seeds.size(); ++r) curves[r] = run_replica(config, learner, seeds[r]);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto work = [&] {
      for (std::size_t r = next++; r < seeds.size(); r = next++) {
        try {
          curves[r] = run_replica(config, learner, seeds[r]);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    };
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    pool.clear();
    if (failure) std::rethrow_exception(failure);
  }
  return average(curves);
}

AveragedCurve run_averaged(const ExperimentConfig& config, const LearnerConfig& learner) {
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(config.replicas));
  for (int r = 0; r < config.replicas; ++r) seeds[static_cast<std::size_t>(r)] = replica_seed(config.seed, r);
  return run_replicas(config, learner, seeds);
}

AveragedCurve average(std::span<const LearningCurve> curves) {
  AveragedCurve out;
  out.replicas = static_cast<int>(curves.size());
  if (curves.empty()) return out;
  const std::size_t len = curves.front().points.size();
  for (const auto& c : curves) {
    if (c.points.size() != len || c.snapshots.size() != curves.front().snapshots.size()) {
      throw DimensionError("cannot average curves of different lengths");
    }
  }
  const double R = static_cast<double>(curves.size());
  out.p.resize(len);
  out.mean.assign(len, 0.0);
  out.stderr_.assign(len, 0.0);
  out.infinite.assign(len, 0);
  for (std::size_t k = 0; k < len; ++k) {
    out.p[k] = curves.front().points[k].p;
    double sum = 0.0;
    for (const auto& c : curves) {
      const double v = c.points[k].kl;
      if (std::isinf(v)) {
        ++out.infinite[k];
      } else {
        sum += v;
      }
    }
    if (out.infinite[k] > 0) {
      out.mean[k] = std::numeric_limits<double>::infinity();
      out.stderr_[k] = std::numeric_limits<double>::infinity();
      continue;
    }
    const double mean = sum / R;
    double ss = 0.0;
    for (const auto& c : curves) ss += (c.points[k].kl - mean) * (c.points[k].kl - mean);
    out.mean[k] = mean;
    out.stderr_[k] = curves.size() > 1 ? std::sqrt(ss / (R - 1.0)) / std::sqrt(R) : 0.0;
  }
  for (std::size_t s = 0; s < curves.front().snapshots.size(); ++s) {
    Snapshot avg = curves.front().snapshots[s];
    for (std::size_t r = 1; r < curves.size(); ++r) {
      const Hmm& h = curves[r].snapshots[s].params;
      avg.params.pi += h.pi;
      avg.params.A += h.A;
      avg.params.B += h.B;
    }
    avg.params.pi /= R;
    avg.params.A /= R;
    avg.params.B /= R;
    out.snapshots.push_back(std::move(avg));
  }
  for (const auto& c : curves) {
    out.max_projection_residual = std::max(out.max_projection_residual, c.max_projection_residual);
    out.annotations += static_cast<long>(c.annotations.size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Symmetry breaking

SharpDrop detect_sharp_drop(std::span<const CurvePoint> points, double factor) {
  SharpDrop out;
  if (points.size() < 2) return out;
  std::vector<double> changes;
  changes.reserve(points.size() - 1);
  for (std::size_t k = 1; k < points.size(); ++k) {
    const double delta = points[k].kl - points[k - 1].kl;
    if (!std::isfinite(delta)) continue;
    changes.push_back(std::abs(delta));
    if (-delta > out.max_drop) {
      out.max_drop = -delta;
      out.p = points[k].p;
    }
  }
  out.median_change = median(changes);
  out.fired = out.max_drop > 0.0 && out.max_drop > factor * out.median_change;
  return out;
}

std::string_view to_string(Block b) {
  switch (b) {
    case Block::pi:
      return "pi";
    case Block::A:
      return "A";
    case Block::B:
      return "B";
  }
  return "?";
}

double block_departure(const Hmm& h, Block block) {
  switch (block) {
    case Block::pi:
      return (h.pi.array() - 1.0 / h.dims.n).abs().maxCoeff();
    case Block::A:
      return (h.A.array() - 1.0 / h.dims.n).abs().maxCoeff();
    case Block::B:
      return (h.B.array() - 1.0 / h.dims.m).abs().maxCoeff();
  }
  return 0.0;
}

std::array<BlockBreak, 3> detect_block_breaks(std::span<const Snapshot> snapshots, double factor,
                                              double min_departure) {
  std::array<BlockBreak, 3> out{BlockBreak{Block::pi}, BlockBreak{Block::A}, BlockBreak{Block::B}};
  for (auto& br : out) {
    if (snapshots.empty()) continue;
    std::vector<double> steps;
    double prev = block_departure(snapshots.front().params, br.block);
    br.max_departure = prev;
    for (std::size_t k = 1; k < snapshots.size(); ++k) {
      const double cur = block_departure(snapshots[k].params, br.block);
      const double step = std::abs(cur - prev);
      steps.push_back(step);
      if (step > br.max_step) {
        br.max_step = step;
        br.p = snapshots[k].p;
      }
      br.max_departure = std::max(br.max_departure, cur);
      prev = cur;
    }
    br.median_step = median(steps);
    br.fired = br.max_departure > min_departure && br.max_step > factor * br.median_step;
  }
  return out;
}

}  // namespace ohmm
