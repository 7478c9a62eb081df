#include "ohmm/runner.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "ohmm/hmm_json.hpp"

#ifndef OHMM_VERSION
#define OHMM_VERSION "0.0.0"
#endif

namespace ohmm {

using nlohmann::json;

std::string_view artifact_version() { return OHMM_VERSION; }

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// Config

namespace {

void reject_unknown(const json& obj, const std::string& where, std::initializer_list<const char*> known) {
  if (!obj.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError(where + ": unknown key \"" + key + "\"");
  }
}

template <typename T>
T field(const json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

std::string_view to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::fixed:
      return "static";
    case ScheduleKind::abrupt:
      return "abrupt";
    case ScheduleKind::gradual:
      return "gradual";
  }
  return "?";
}

std::string_view to_string(StudentInit s) {
  switch (s) {
    case StudentInit::symmetric:
      return "symmetric";
    case StudentInit::perturbed:
      return "perturbed";
    case StudentInit::teacher_mean:
      return "teacher_mean";
  }
  return "?";
}

LearnerConfig learner_from_json(const json& j, const std::string& where) {
  reject_unknown(j, where, {"algorithm", "name", "eta_bw", "eta_bc", "lambda", "prior_strength", "epsilon"});
  if (!j.contains("algorithm")) throw ConfigError(where + ".algorithm: required");
  LearnerConfig c;
  c.algorithm = algorithm_from_string(field<std::string>(j, "algorithm", "", where));
  c.name = field<std::string>(j, "name", "", where);
  c.eta_bw = field<double>(j, "eta_bw", c.eta_bw, where);
  c.eta_bc = field<double>(j, "eta_bc", c.eta_bc, where);
  c.lambda = field<double>(j, "lambda", c.lambda, where);
  c.prior_strength = field<double>(j, "prior_strength", c.prior_strength, where);
  c.epsilon = field<double>(j, "epsilon", c.epsilon, where);
  if (!(c.eta_bw > 0.0)) throw ConfigError(where + ".eta_bw: must be > 0");
  if (!(c.eta_bc > 0.0)) throw ConfigError(where + ".eta_bc: must be > 0");
  if (!(c.lambda > 0.0)) throw ConfigError(where + ".lambda: must be > 0");
  if (!(c.prior_strength > 0.0)) throw ConfigError(where + ".prior_strength: must be > 0");
  if (!(c.epsilon > 0.0 && c.epsilon < 1.0)) throw ConfigError(where + ".epsilon: must lie in (0, 1)");
  if (c.name.empty()) c.name = std::string(to_string(c.algorithm));
  if (c.name.find_first_of("/\\") != std::string::npos || c.name == "." || c.name == ".." ||
      c.name == "manifest") {
    throw ConfigError(where + ".name: not usable as a file name");
  }
  return c;
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  reject_unknown(j, "config",
                 {"dims", "learners", "schedule", "teacher", "student", "sequences", "replicas", "snapshots",
                  "snapshot_stride", "seed", "threads", "enumeration_cap"});
  ExperimentConfig c;

  if (!j.contains("dims")) throw ConfigError("dims: required");
  const json& d = j.at("dims");
  reject_unknown(d, "dims", {"n", "m", "T"});
  for (const char* k : {"n", "m", "T"}) {
    if (!d.contains(k)) throw ConfigError(std::string("dims.") + k + ": required");
  }
  c.dims = {field<int>(d, "n", 0, "dims"), field<int>(d, "m", 0, "dims"), field<int>(d, "T", 0, "dims")};

  if (!j.contains("learners") || !j.at("learners").is_array() || j.at("learners").empty()) {
    throw ConfigError("learners: required non-empty array");
  }
  std::set<std::string> names;
  for (std::size_t k = 0; k < j.at("learners").size(); ++k) {
    LearnerConfig lc = learner_from_json(j.at("learners")[k], "learners[" + std::to_string(k) + "]");
    if (!names.insert(lc.name).second) {
      throw ConfigError("learners[" + std::to_string(k) + "].name: duplicate \"" + lc.name + "\"");
    }
    c.learners.push_back(std::move(lc));
  }

  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    reject_unknown(s, "schedule", {"kind", "interval", "delta"});
    const auto kind = field<std::string>(s, "kind", "static", "schedule");
    if (kind == "static") {
      c.schedule.kind = ScheduleKind::fixed;
    } else if (kind == "abrupt") {
      c.schedule.kind = ScheduleKind::abrupt;
    } else if (kind == "gradual") {
      c.schedule.kind = ScheduleKind::gradual;
    } else {
      throw ConfigError("schedule.kind: expected static, abrupt or gradual");
    }
    c.schedule.interval = field<long>(s, "interval", c.schedule.interval, "schedule");
    c.schedule.delta = field<double>(s, "delta", c.schedule.delta, "schedule");
  }

  if (j.contains("teacher")) {
    const json& t = j.at("teacher");
    if (t.is_string()) {
      const auto name = t.get<std::string>();
      if (name == "random") {
        c.teacher.source = TeacherSource::random;
      } else if (name == "cycle") {
        c.teacher.source = TeacherSource::cycle;
      } else {
        throw ConfigError("teacher: expected \"random\", \"cycle\" or an HMM object");
      }
    } else {
      reject_unknown(t, "teacher", {"n", "m", "T", "pi", "A", "B"});
      try {
        c.teacher.source = TeacherSource::given;
        c.teacher.params = hmm_from_json(t);
      } catch (const DimensionError& e) {
        throw ConfigError(std::string("teacher: ") + e.what());
      }
    }
  }

  if (j.contains("student")) {
    const json& s = j.at("student");
    reject_unknown(s, "student", {"init", "perturbation"});
    const auto init = field<std::string>(s, "init", "symmetric", "student");
    if (init == "symmetric") {
      c.student.init = StudentInit::symmetric;
    } else if (init == "perturbed") {
      c.student.init = StudentInit::perturbed;
    } else if (init == "teacher_mean") {
      c.student.init = StudentInit::teacher_mean;
    } else {
      throw ConfigError("student.init: expected symmetric, perturbed or teacher_mean");
    }
    c.student.perturbation = field<double>(s, "perturbation", c.student.perturbation, "student");
  }

  c.sequences = field<long>(j, "sequences", c.sequences, "config");
  c.replicas = field<int>(j, "replicas", c.replicas, "config");
  c.snapshots = field<bool>(j, "snapshots", c.snapshots, "config");
  c.snapshot_stride = field<int>(j, "snapshot_stride", c.snapshot_stride, "config");
  c.seed = field<std::uint64_t>(j, "seed", c.seed, "config");
  c.threads = field<int>(j, "threads", c.threads, "config");
  c.enumeration_cap = field<std::uint64_t>(j, "enumeration_cap", c.enumeration_cap, "config");
  for (auto& lc : c.learners) lc.enumeration_cap = c.enumeration_cap;

  try {
    check_experiment(c);
  } catch (const EnumerationCapError& e) {
    throw ConfigError(e.what());
  }
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["dims"] = {{"n", c.dims.n}, {"m", c.dims.m}, {"T", c.dims.T}};
  j["learners"] = json::array();
  for (const auto& lc : c.learners) {
    j["learners"].push_back({{"algorithm", std::string(to_string(lc.algorithm))},
                             {"name", lc.label()},
                             {"eta_bw", lc.eta_bw},
                             {"eta_bc", lc.eta_bc},
                             {"lambda", lc.lambda},
                             {"prior_strength", lc.prior_strength},
                             {"epsilon", lc.epsilon}});
  }
  j["schedule"] = {
      {"kind", std::string(to_string(c.schedule.kind))}, {"interval", c.schedule.interval}, {"delta", c.schedule.delta}};
  switch (c.teacher.source) {
    case TeacherSource::random:
      j["teacher"] = "random";
      break;
    case TeacherSource::cycle:
      j["teacher"] = "cycle";
      break;
    case TeacherSource::given:
      j["teacher"] = to_json(*c.teacher.params);
      break;
  }
  j["student"] = {{"init", std::string(to_string(c.student.init))}, {"perturbation", c.student.perturbation}};
  j["sequences"] = c.sequences;
  j["replicas"] = c.replicas;
  j["snapshots"] = c.snapshots;
  j["snapshot_stride"] = c.snapshot_stride;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["enumeration_cap"] = c.enumeration_cap;
  return j;
}

ExperimentConfig parse_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("malformed config " + file.string() + ": " + e.what());
  }
  return config_from_json(j);
}

std::string config_defaults_help() {
  const LearnerConfig l;
  const ExperimentConfig c;
  const DigammaSolverOptions s;
  std::ostringstream os;
  os << "Config file (JSON) keys and defaults:\n"
     << "  dims {n, m, T}            required\n"
     << "  learners [ ... ]          required; each {algorithm: bwo|bc|bona|mpa, name, eta_bw=" << l.eta_bw
     << ", eta_bc=" << l.eta_bc << ", lambda=" << l.lambda << ", prior_strength=" << l.prior_strength
     << ", epsilon=" << l.epsilon << "}\n"
     << "  schedule {kind, interval, delta}   kind=static; interval=" << c.schedule.interval
     << " (abrupt: new random teacher after every interval sequences); delta=" << c.schedule.delta
     << " (gradual: uniform(0, delta) added to every entry per sequence, rows renormalized)\n"
     << "  teacher                   \"random\" (flat-Dirichlet rows, default), \"cycle\" (n=2,m=3,T=2 "
        "alternating teacher) or an HMM object {n,m,T,pi,A,B}\n"
     << "  student {init, perturbation}       init=symmetric|perturbed|teacher_mean; perturbation="
     << c.student.perturbation << "\n"
     << "  sequences=" << c.sequences << "  replicas=" << c.replicas << "  snapshots=false  snapshot_stride="
     << c.snapshot_stride << "  seed=" << c.seed << "  threads=" << c.threads << " (0 = all cores)"
     << "  enumeration_cap=" << c.enumeration_cap << "\n"
     << "Numerical defaults:\n"
     << "  likelihood floor epsilon=" << l.epsilon << " on student parameters (learners only)\n"
     << "  forward recursion scaled per step\n"
     << "  digamma solver: x0 starts at N, tol=" << s.tol << " (relative), max_iter=" << s.max_iter
     << ", bisection fallback on [" << s.bracket_lo << ", " << s.bracket_hi << "], rejects mu_i >= -"
     << s.degeneracy_guard << "\n"
     << "  BWO rows leaving the simplex are clamped at epsilon and renormalized\n"
     << "  MPA matches the variance of component 0; variance < 1e-14 is an error\n"
     << "  infinite KL exported as " << kInfiniteKlSentinel << " with inf_flag=1\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Manifest

json manifest_to_json(const RunManifest& m) {
  json j;
  j["artifact_version"] = m.artifact_version;
  j["seed"] = m.seed;
  j["config"] = config_to_json(m.config);
  j["learners"] = json::array();
  for (const auto& l : m.learners) {
    j["learners"].push_back({{"name", l.name},
                             {"algorithm", std::string(to_string(l.algorithm))},
                             {"csv", l.csv},
                             {"wall_clock_seconds", l.wall_clock_seconds},
                             {"annotations", l.annotations},
                             {"max_projection_residual", l.max_projection_residual}});
  }
  return j;
}

RunManifest manifest_from_json(const json& j) {
  try {
    RunManifest m;
    m.artifact_version = j.at("artifact_version").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config = config_from_json(j.at("config"));
    for (const auto& l : j.at("learners")) {
      LearnerOutput out;
      out.name = l.at("name").get<std::string>();
      out.algorithm = algorithm_from_string(l.at("algorithm").get<std::string>());
      out.csv = l.at("csv").get<std::string>();
      out.wall_clock_seconds = l.at("wall_clock_seconds").get<double>();
      out.annotations = l.at("annotations").get<long>();
      out.max_projection_residual = l.at("max_projection_residual").get<double>();
      m.learners.push_back(std::move(out));
    }
    return m;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed manifest: ") + e.what());
  }
}

RunManifest read_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open manifest " + file.string());
  try {
    return manifest_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError("malformed manifest " + file.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// CSV

void write_curve_csv(std::ostream& os, const AveragedCurve& curve, const ModelDims& dims, bool with_snapshots) {
  os << "p,kl_mean,kl_stderr,inf_flag";
  if (with_snapshots) {
    for (int i = 0; i < dims.n; ++i) os << ",pi_" << i;
    for (int i = 0; i < dims.n; ++i)
      for (int j = 0; j < dims.n; ++j) os << ",A_" << i << j;
    for (int i = 0; i < dims.n; ++i)
      for (int k = 0; k < dims.m; ++k) os << ",B_" << i << k;
  }
  os << '\n';
  std::size_t next_snapshot = 0;
  for (std::size_t k = 0; k < curve.p.size(); ++k) {
    const bool inf = curve.infinite[k] > 0;
    os << curve.p[k] << ',' << format_double(inf ? kInfiniteKlSentinel : curve.mean[k]) << ','
       << format_double(inf ? kInfiniteKlSentinel : curve.stderr_[k]) << ',' << (inf ? 1 : 0);
    if (with_snapshots) {
      const bool has = next_snapshot < curve.snapshots.size() && curve.snapshots[next_snapshot].p == curve.p[k];
      const int cells = dims.n + dims.n * dims.n + dims.n * dims.m;
      if (has) {
        const Hmm& h = curve.snapshots[next_snapshot++].params;
        for (int i = 0; i < dims.n; ++i) os << ',' << format_double(h.pi(i));
        for (int i = 0; i < dims.n; ++i)
          for (int j = 0; j < dims.n; ++j) os << ',' << format_double(h.A(i, j));
        for (int i = 0; i < dims.n; ++i)
          for (int c = 0; c < dims.m; ++c) os << ',' << format_double(h.B(i, c));
      } else {
        for (int c = 0; c < cells; ++c) os << ',';
      }
    }
    os << '\n';
  }
}

CurveTable read_curve_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open curve " + file.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("p,kl_mean,kl_stderr,inf_flag", 0) != 0) {
    throw ConfigError("unexpected CSV header in " + file.string());
  }
  CurveTable t;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell[4];
    for (auto& c : cell) std::getline(row, c, ',');
    try {
      t.p.push_back(std::stol(cell[0]));
      t.kl_mean.push_back(std::stod(cell[1]));
      t.kl_stderr.push_back(std::stod(cell[2]));
      t.inf_flag.push_back(std::stoi(cell[3]));
    } catch (const std::exception&) {
      throw ConfigError("malformed CSV row in " + file.string() + ": " + line);
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Run / compare

RunManifest run(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
  check_experiment(config);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create output directory " + out_dir.string() + ": " + ec.message());

  RunManifest manifest;
  manifest.artifact_version = std::string(artifact_version());
  manifest.seed = config.seed;
  manifest.config = config;
  for (const auto& lc : config.learners) {
    const auto start = std::chrono::steady_clock::now();
    const AveragedCurve curve = run_averaged(config, lc);
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;

    LearnerOutput out;
    out.name = lc.label();
    out.algorithm = lc.algorithm;
    out.csv = out.name + ".csv";
    out.wall_clock_seconds = elapsed.count();
    out.annotations = curve.annotations;
    out.max_projection_residual = curve.max_projection_residual;

    std::ofstream csv(out_dir / out.csv, std::ios::binary);
    if (!csv) throw Error("cannot write " + (out_dir / out.csv).string());
    write_curve_csv(csv, curve, config.dims, config.snapshots);
    if (!csv) throw Error("write failed for " + (out_dir / out.csv).string());
    manifest.learners.push_back(std::move(out));
  }
  std::ofstream mf(out_dir / "manifest.json", std::ios::binary);
  if (!mf) throw Error("cannot write " + (out_dir / "manifest.json").string());
  mf << manifest_to_json(manifest).dump(2) << '\n';
  if (!mf) throw Error("write failed for manifest.json");
  return manifest;
}

std::vector<SummaryRow> compare(std::span<const std::filesystem::path> manifests) {
  if (manifests.size() < 2) throw ConfigError("compare needs at least two manifests");
  std::vector<RunManifest> loaded;
  for (const auto& path : manifests) loaded.push_back(read_manifest(path));
  for (std::size_t k = 1; k < loaded.size(); ++k) {
    if (!(loaded[k].config.dims == loaded[0].config.dims) ||
        !(loaded[k].config.schedule == loaded[0].config.schedule)) {
      throw ConfigError("incompatible manifests: " + manifests[0].string() + " and " + manifests[k].string() +
                        " differ in dims or schedule");
    }
  }
  std::vector<SummaryRow> rows;
  for (std::size_t k = 0; k < loaded.size(); ++k) {
    const auto dir = manifests[k].parent_path();
    for (const auto& l : loaded[k].learners) {
      const CurveTable t = read_curve_csv(dir / l.csv);
      SummaryRow row;
      row.manifest = manifests[k].string();
      row.learner = l.name;
      row.wall_clock_seconds = l.wall_clock_seconds;
      if (!t.p.empty()) {
        row.final_kl = t.inf_flag.back() ? std::numeric_limits<double>::infinity() : t.kl_mean.back();
        for (std::size_t i = 1; i < t.p.size(); ++i) {
          if (t.inf_flag[i] || t.inf_flag[i - 1]) {
            row.auc = std::numeric_limits<double>::infinity();
            break;
          }
          row.auc += 0.5 * static_cast<double>(t.p[i] - t.p[i - 1]) * (t.kl_mean[i] + t.kl_mean[i - 1]);
        }
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string format_summary(std::span<const SummaryRow> rows) {
  std::ostringstream os;
  os << std::left << std::setw(40) << "manifest" << std::setw(12) << "learner" << std::right << std::setw(16)
     << "final_kl" << std::setw(16) << "auc" << std::setw(14) << "wall_clock_s" << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(40) << r.manifest << std::setw(12) << r.learner << std::right << std::setw(16)
       << std::setprecision(6) << r.final_kl << std::setw(16) << r.auc << std::setw(14) << std::setprecision(4)
       << r.wall_clock_seconds << '\n';
  }
  return os.str();
}

}  // namespace ohmm
