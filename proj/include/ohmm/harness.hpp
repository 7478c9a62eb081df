#pragma once

// Teacher-student experiments: a teacher HMM (possibly drifting) emits
// sequences, a learner observes them one at a time, and after every
// observation the exact KL divergence from the current teacher to the
// learner's estimate is recorded.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ohmm/hmm.hpp"
#include "ohmm/learners.hpp"

namespace ohmm {

using Rng = std::mt19937_64;

/// Value recorded in exported data in place of an infinite divergence.
inline constexpr double kInfiniteKlSentinel = 1e9;

enum class ScheduleKind { fixed, abrupt, gradual };

struct TeacherSchedule {
  ScheduleKind kind = ScheduleKind::fixed;
  long interval = 500;  // abrupt: redraw the teacher after every `interval` sequences
  double delta = 0.01;  // gradual: per-entry uniform(0, delta) noise after every sequence

  friend bool operator==(const TeacherSchedule&, const TeacherSchedule&) = default;
};

enum class TeacherSource { random, cycle, given };

struct TeacherSpec {
  TeacherSource source = TeacherSource::random;
  std::optional<Hmm> params;  // for TeacherSource::given

  friend bool operator==(const TeacherSpec&, const TeacherSpec&) = default;
};

enum class StudentInit {
  symmetric,     // all rows uniform
  perturbed,     // uniform rows with multiplicative noise of relative size `perturbation`
  teacher_mean,  // estimate starts at the initial teacher
};

struct StudentSpec {
  StudentInit init = StudentInit::symmetric;
  double perturbation = 0.5;

  friend bool operator==(const StudentSpec&, const StudentSpec&) = default;
};

struct ExperimentConfig {
  ModelDims dims{2, 3, 2};
  std::vector<LearnerConfig> learners;
  TeacherSchedule schedule;
  TeacherSpec teacher;
  StudentSpec student;
  long sequences = 1000;  // P
  int replicas = 1;       // R
  bool snapshots = false;
  int snapshot_stride = 10;
  std::uint64_t seed = 1;
  int threads = 1;
  std::uint64_t enumeration_cap = kDefaultEnumerationCap;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Throws ConfigError naming the offending field.
void check_experiment(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Teachers

/// Every row of pi, A and B drawn from the flat Dirichlet on its simplex.
Hmm random_teacher(const ModelDims& dims, Rng& rng);

/// n=2, m=3, T=2 teacher that starts in state 0, alternates states
/// deterministically, and emits symbol 0 from state 0 and symbol 2 from state 1.
Hmm cycle_teacher();

/// Teacher in force for sequence p + 1, given the teacher that emitted sequence p.
Hmm drift_step(const TeacherSchedule& schedule, const Hmm& teacher, long p, Rng& rng);

/// Initial learner state for the configured student initialization.
LearnerState initial_student(const ExperimentConfig& config, const LearnerConfig& learner, const Hmm& teacher,
                             Rng& rng);

// ---------------------------------------------------------------------------
// Curves

struct CurvePoint {
  long p = 0;
  double kl = 0.0;  // +infinity when the student misses support of the teacher
};

struct Snapshot {
  long p = 0;
  Hmm params;
};

struct Annotation {
  long p = 0;
  std::string message;
};

struct LearningCurve {
  std::vector<CurvePoint> points;  // p = 0 (before any observation) .. P
  std::vector<Snapshot> snapshots;
  std::vector<Annotation> annotations;  // learner errors; the state is kept unchanged for that step
  double max_projection_residual = 0.0;
  long bisection_solves = 0;
};

struct AveragedCurve {
  std::vector<long> p;
  std::vector<double> mean;
  std::vector<double> stderr_;
  std::vector<int> infinite;        // replicas with infinite KL at that point
  std::vector<Snapshot> snapshots;  // replica-averaged parameters
  double max_projection_residual = 0.0;
  long annotations = 0;
  int replicas = 0;
};

/// Seed of replica r, derived from the master seed alone.
std::uint64_t replica_seed(std::uint64_t master, int replica);

LearningCurve run_replica(const ExperimentConfig& config, const LearnerConfig& learner, std::uint64_t seed);

/// One teacher, one stream: replica 0 of `config`.
LearningCurve run_single(const ExperimentConfig& config, const LearnerConfig& learner);

/// Pointwise mean and standard error over config.replicas independent replicas.
AveragedCurve run_averaged(const ExperimentConfig& config, const LearnerConfig& learner);

/// As run_averaged, with explicit per-replica seeds.
AveragedCurve run_replicas(const ExperimentConfig& config, const LearnerConfig& learner,
                           std::span<const std::uint64_t> seeds);

/// Deterministic reduction in replica order.
AveragedCurve average(std::span<const LearningCurve> curves);

// ---------------------------------------------------------------------------
// Symmetry breaking

/// Largest single-step KL decrease compared to the median absolute step change.
struct SharpDrop {
  bool fired = false;
  long p = 0;  // index of the point reached by the largest drop
  double max_drop = 0.0;
  double median_change = 0.0;
};

SharpDrop detect_sharp_drop(std::span<const CurvePoint> points, double factor = 10.0);

enum class Block { pi, A, B };
std::string_view to_string(Block b);

/// Largest deviation of the block's entries from their uniform (symmetric) value.
double block_departure(const Hmm& h, Block block);

/// A block breaks symmetry when it moves away from uniform by more than
/// `min_departure` and its largest single-step change exceeds `factor` times the
/// median step change.
struct BlockBreak {
  Block block = Block::pi;
  bool fired = false;
  long p = 0;  // snapshot index where the largest step lands
  double max_step = 0.0;
  double median_step = 0.0;
  double max_departure = 0.0;
};

std::array<BlockBreak, 3> detect_block_breaks(std::span<const Snapshot> snapshots, double factor = 10.0,
                                              double min_departure = 0.05);

}  // namespace ohmm
