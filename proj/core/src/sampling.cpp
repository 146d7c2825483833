#include "sacbf/sampling.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace sacbf {

std::string to_string(SampleStrategy s) {
  switch (s) {
    case SampleStrategy::UniformRandom: return "uniform";
    case SampleStrategy::Grid: return "grid";
    case SampleStrategy::Trajectory: return "trajectory";
  }
  return "uniform";
}

SampleStrategy strategy_from_string(const std::string& s) {
  if (s == "uniform") return SampleStrategy::UniformRandom;
  if (s == "grid") return SampleStrategy::Grid;
  if (s == "trajectory") return SampleStrategy::Trajectory;
  throw std::invalid_argument("unknown sampling strategy: " + s);
}

MatrixXd TransitionDataset::joined_inputs() const {
  MatrixXd z(x.rows() + u.rows(), count());
  z.topRows(x.rows()) = x;
  z.bottomRows(u.rows()) = u;
  return z;
}

TransitionDataset TransitionDataset::head(Eigen::Index n) const {
  TransitionDataset d = *this;
  n = std::min(n, count());
  d.x = x.leftCols(n);
  d.u = u.leftCols(n);
  d.xnext = xnext.leftCols(n);
  return d;
}

std::pair<TransitionDataset, TransitionDataset> TransitionDataset::split(
    double holdout_fraction, uint64_t split_seed) const {
  const Eigen::Index n = count();
  Eigen::Index hold = static_cast<Eigen::Index>(std::floor(holdout_fraction * n));
  hold = std::min(std::max<Eigen::Index>(hold, 0), n);
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(split_seed);
  rng.shuffle(order);

  auto take = [&](Eigen::Index begin, Eigen::Index len) {
    TransitionDataset d;
    d.strategy = strategy;
    d.seed = seed;
    d.system = system;
    d.x.resize(x.rows(), len);
    d.u.resize(u.rows(), len);
    d.xnext.resize(xnext.rows(), len);
    for (Eigen::Index i = 0; i < len; ++i) {
      d.x.col(i) = x.col(order[begin + i]);
      d.u.col(i) = u.col(order[begin + i]);
      d.xnext.col(i) = xnext.col(order[begin + i]);
    }
    return d;
  };
  return {take(hold, n - hold), take(0, hold)};
}

namespace {
constexpr char kDataMagic[8] = {'S', 'A', 'C', 'B', 'F', 'D', 'A', 'T'};
constexpr uint32_t kDataVersion = 1;

void write_matrix(std::ofstream& out, const MatrixXd& m) {
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    out.write(reinterpret_cast<const char*>(m.col(c).data()),
              static_cast<std::streamsize>(m.rows() * sizeof(double)));
}

void read_matrix(std::ifstream& in, MatrixXd& m) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    VectorXd col(m.rows());
    in.read(reinterpret_cast<char*>(col.data()),
            static_cast<std::streamsize>(m.rows() * sizeof(double)));
    m.col(c) = col;
  }
}
}  // namespace

void TransitionDataset::save(const std::string& dir) const {
  ensure_directory(dir);
  std::ofstream out(dir + "/transitions.bin", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset in " + dir);
  out.write(kDataMagic, 8);
  uint32_t version = kDataVersion;
  uint32_t nx = static_cast<uint32_t>(x.rows());
  uint32_t nu = static_cast<uint32_t>(u.rows());
  uint64_t n = static_cast<uint64_t>(count());
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&nx), 4);
  out.write(reinterpret_cast<const char*>(&nu), 4);
  out.write(reinterpret_cast<const char*>(&n), 8);
  // record layout: x, u, xnext per sample
  for (Eigen::Index i = 0; i < count(); ++i) {
    out.write(reinterpret_cast<const char*>(x.col(i).data()), nx * sizeof(double));
    out.write(reinterpret_cast<const char*>(u.col(i).data()), nu * sizeof(double));
    out.write(reinterpret_cast<const char*>(xnext.col(i).data()), nx * sizeof(double));
  }
  if (!out) throw std::runtime_error("short dataset write in " + dir);

  nlohmann::json manifest;
  manifest["count"] = n;
  manifest["state_dim"] = nx;
  manifest["input_dim"] = nu;
  manifest["strategy"] = to_string(strategy);
  manifest["seed"] = seed;
  manifest["system"] = system;
  std::ofstream mf(dir + "/manifest.json");
  mf << manifest.dump(2) << "\n";
}

TransitionDataset TransitionDataset::load(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.json");
  if (!mf) throw std::runtime_error("missing manifest.json in " + dir);
  nlohmann::json manifest;
  mf >> manifest;

  std::ifstream in(dir + "/transitions.bin", std::ios::binary);
  if (!in) throw std::runtime_error("missing transitions.bin in " + dir);
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, kDataMagic, 8) != 0)
    throw std::runtime_error("bad dataset magic in " + dir);
  uint32_t version = 0, nx = 0, nu = 0;
  uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&nx), 4);
  in.read(reinterpret_cast<char*>(&nu), 4);
  in.read(reinterpret_cast<char*>(&n), 8);
  if (version != kDataVersion)
    throw std::runtime_error("unsupported dataset version in " + dir);

  TransitionDataset d;
  d.x.resize(nx, n);
  d.u.resize(nu, n);
  d.xnext.resize(nx, n);
  for (uint64_t i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(d.x.col(i).data()), nx * sizeof(double));
    in.read(reinterpret_cast<char*>(d.u.col(i).data()), nu * sizeof(double));
    in.read(reinterpret_cast<char*>(d.xnext.col(i).data()), nx * sizeof(double));
  }
  if (!in) throw std::runtime_error("truncated transitions.bin in " + dir);
  d.strategy = strategy_from_string(manifest.value("strategy", "uniform"));
  d.seed = manifest.value("seed", uint64_t{0});
  d.system = manifest.value("system", std::string());
  return d;
}

void TransitionDataset::to_csv(const std::string& path) const {
  std::ostringstream header;
  for (int i = 0; i < state_dim(); ++i) header << (i ? "," : "") << "x" << i;
  for (int i = 0; i < input_dim(); ++i) header << ",u" << i;
  for (int i = 0; i < state_dim(); ++i) header << ",xn" << i;
  std::vector<std::string> rows;
  rows.reserve(count());
  for (Eigen::Index c = 0; c < count(); ++c) {
    std::ostringstream row;
    for (int i = 0; i < state_dim(); ++i)
      row << (i ? "," : "") << format_double(x(i, c));
    for (int i = 0; i < input_dim(); ++i) row << "," << format_double(u(i, c));
    for (int i = 0; i < state_dim(); ++i) row << "," << format_double(xnext(i, c));
    rows.push_back(row.str());
  }
  write_csv(path, header.str(), rows);
}

TransitionDataset sample_transitions(const SystemSpec& system,
                                     const ConstraintSpec& constraints,
                                     Eigen::Index N, SampleStrategy strategy,
                                     uint64_t seed) {
  if (N < 1) throw std::invalid_argument("sample_transitions: N must be >= 1");
  TransitionDataset d;
  d.strategy = strategy;
  d.seed = seed;
  d.system = system.name;
  const int nx = system.state_dim, nu = system.input_dim;

  if (strategy == SampleStrategy::UniformRandom) {
    d.x.resize(nx, N);
    d.u.resize(nu, N);
    d.xnext.resize(nx, N);
    Rng rng(seed);
    for (Eigen::Index i = 0; i < N; ++i) {
      VectorXd xs = rng.uniform_vector(constraints.domain_lo, constraints.domain_hi);
      VectorXd us = rng.uniform_vector(constraints.input_lo, constraints.input_hi);
      d.x.col(i) = xs;
      d.u.col(i) = us;
      d.xnext.col(i) = system.step(xs, us);
    }
    return d;
  }

  if (strategy == SampleStrategy::Grid) {
    const int dims = nx + nu;
    int per_axis = std::max(2, static_cast<int>(std::round(
                                   std::pow(static_cast<double>(N), 1.0 / dims))));
    while (per_axis > 2 &&
           std::pow(static_cast<double>(per_axis), dims) > static_cast<double>(N))
      --per_axis;
    Eigen::Index total = 1;
    for (int k = 0; k < dims; ++k) total *= per_axis;
    d.x.resize(nx, total);
    d.u.resize(nu, total);
    d.xnext.resize(nx, total);
    VectorXd lo(dims), hi(dims);
    lo << constraints.domain_lo, constraints.input_lo;
    hi << constraints.domain_hi, constraints.input_hi;
    std::vector<int> idx(dims, 0);
    for (Eigen::Index i = 0; i < total; ++i) {
      VectorXd z(dims);
      for (int k = 0; k < dims; ++k)
        z(k) = lo(k) + (hi(k) - lo(k)) * idx[k] / (per_axis - 1);
      VectorXd xs = z.head(nx), us = z.tail(nu);
      d.x.col(i) = xs;
      d.u.col(i) = us;
      d.xnext.col(i) = system.step(xs, us);
      for (int k = dims - 1; k >= 0; --k) {
        if (++idx[k] < per_axis) break;
        idx[k] = 0;
      }
    }
    return d;
  }

  throw std::invalid_argument(
      "sample_transitions: trajectory-tagged datasets come from "
      "LabeledTrajectorySet::to_transitions");
}

MatrixXd sample_input_grid(const ConstraintSpec& constraints,
                           const std::vector<int>& per_axis) {
  const int nu = static_cast<int>(constraints.input_lo.size());
  if (static_cast<int>(per_axis.size()) != nu)
    throw std::invalid_argument("sample_input_grid: per_axis size mismatch");
  Eigen::Index total = 1;
  for (int c : per_axis) {
    if (c < 2) throw std::invalid_argument("sample_input_grid: per_axis must be >= 2");
    total *= c;
  }
  MatrixXd grid(nu, total);
  std::vector<int> idx(nu, 0);
  for (Eigen::Index i = 0; i < total; ++i) {
    for (int k = 0; k < nu; ++k)
      grid(k, i) = constraints.input_lo(k) +
                   (constraints.input_hi(k) - constraints.input_lo(k)) * idx[k] /
                       (per_axis[k] - 1);
    for (int k = nu - 1; k >= 0; --k) {
      if (++idx[k] < per_axis[k]) break;
      idx[k] = 0;
    }
  }
  return grid;
}

int LabeledTrajectorySet::safe_trajectories() const {
  int n = 0;
  for (uint8_t s : trajectory_safe) n += s ? 1 : 0;
  return n;
}

int LabeledTrajectorySet::unsafe_trajectories() const {
  return static_cast<int>(trajectory_safe.size()) - safe_trajectories();
}

TransitionDataset LabeledTrajectorySet::to_transitions() const {
  Eigen::Index total = 0;
  for (const auto& t : trajectories) total += t.steps();
  TransitionDataset d;
  d.strategy = SampleStrategy::Trajectory;
  d.seed = seed;
  d.system = system;
  if (trajectories.empty()) return d;
  const int nx = static_cast<int>(trajectories[0].states[0].size());
  const int nu = static_cast<int>(trajectories[0].inputs.empty()
                                      ? input_samples.rows()
                                      : trajectories[0].inputs[0].size());
  d.x.resize(nx, total);
  d.u.resize(nu, total);
  d.xnext.resize(nx, total);
  Eigen::Index c = 0;
  for (const auto& t : trajectories) {
    for (int s = 0; s < t.steps(); ++s, ++c) {
      d.x.col(c) = t.states[s];
      d.u.col(c) = t.inputs[s];
      d.xnext.col(c) = t.states[s + 1];
    }
  }
  return d;
}

namespace {
// rebuilds the flat matrices of a LabeledTrajectorySet from a subset of
// trajectory indices, carrying successor columns along with safe states
LabeledTrajectorySet subset_of(const LabeledTrajectorySet& src,
                               const std::vector<int>& traj_indices) {
  LabeledTrajectorySet out;
  out.seed = src.seed;
  out.system = src.system;
  out.horizon = src.horizon;
  out.input_samples = src.input_samples;

  std::vector<char> selected(src.trajectories.size(), 0);
  for (int i : traj_indices) selected[i] = 1;

  Eigen::Index n_safe = 0, n_all = 0;
  for (Eigen::Index i = 0; i < src.safe_states.cols(); ++i)
    if (selected[src.safe_state_traj[i]]) ++n_safe;
  for (int i : traj_indices)
    n_all += static_cast<Eigen::Index>(src.trajectories[i].states.size());

  const Eigen::Index m = src.input_samples.cols();
  out.safe_states.resize(src.safe_states.rows(), n_safe);
  out.safe_expert_inputs.resize(src.safe_expert_inputs.rows(), n_safe);
  out.safe_grid_successors.resize(src.safe_states.rows(), n_safe * m);
  out.safe_state_traj.reserve(n_safe);
  out.all_states.resize(src.all_states.rows(), n_all);

  std::vector<int> traj_remap(src.trajectories.size(), -1);
  int next_traj = 0;
  for (int i : traj_indices) {
    traj_remap[i] = next_traj++;
    out.trajectories.push_back(src.trajectories[i]);
    out.trajectory_safe.push_back(src.trajectory_safe[i]);
  }

  Eigen::Index cs = 0;
  for (Eigen::Index i = 0; i < src.safe_states.cols(); ++i) {
    if (!selected[src.safe_state_traj[i]]) continue;
    out.safe_states.col(cs) = src.safe_states.col(i);
    out.safe_expert_inputs.col(cs) = src.safe_expert_inputs.col(i);
    out.safe_grid_successors.middleCols(cs * m, m) =
        src.safe_grid_successors.middleCols(i * m, m);
    out.safe_state_traj.push_back(traj_remap[src.safe_state_traj[i]]);
    ++cs;
  }
  Eigen::Index ca = 0;
  for (int i : traj_indices)
    for (const auto& s : src.trajectories[i].states) out.all_states.col(ca++) = s;
  return out;
}
}  // namespace

std::pair<LabeledTrajectorySet, LabeledTrajectorySet> LabeledTrajectorySet::split(
    double holdout_fraction, uint64_t split_seed) const {
  const int n = static_cast<int>(trajectories.size());
  int hold = static_cast<int>(std::floor(holdout_fraction * n));
  hold = std::min(std::max(hold, 0), n);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(split_seed);
  rng.shuffle(order);
  std::vector<int> hold_idx(order.begin(), order.begin() + hold);
  std::vector<int> train_idx(order.begin() + hold, order.end());
  return {subset_of(*this, train_idx), subset_of(*this, hold_idx)};
}

LabeledTrajectorySet collect_expert_trajectories(
    const SystemSpec& system, const ConstraintSpec& constraints,
    const Policy& expert, int N0, int T, uint64_t seed,
    const MatrixXd& input_samples) {
  if (T < 1) throw std::invalid_argument("collect_expert_trajectories: T >= 1");
  if (N0 < 1) throw std::invalid_argument("collect_expert_trajectories: N0 >= 1");

  LabeledTrajectorySet set;
  set.seed = seed;
  set.system = system.name;
  set.horizon = T;
  set.input_samples = input_samples;
  set.trajectories.reserve(N0);
  set.trajectory_safe.reserve(N0);

  Rng rng(seed);
  Eigen::Index n_all = 0, n_safe_states = 0;
  for (int i = 0; i < N0; ++i) {
    VectorXd x0 = rng.uniform_vector(constraints.domain_lo, constraints.domain_hi);
    Trajectory traj = rollout(system, constraints, expert, x0, T);
    // the labeling check: tightened state constraint and input box at every
    // step, target membership at the final state
    bool safe = traj.reached_target;
    if (safe) {
      for (const auto& s : traj.states)
        if (constraints.h_learning(s) > 0.0) {
          safe = false;
          break;
        }
    }
    if (safe) {
      for (uint8_t f : traj.input_feasible)
        if (!f) {
          safe = false;
          break;
        }
    }
    n_all += static_cast<Eigen::Index>(traj.states.size());
    if (safe) n_safe_states += static_cast<Eigen::Index>(traj.states.size());
    set.trajectories.push_back(std::move(traj));
    set.trajectory_safe.push_back(safe ? 1 : 0);
  }

  const int nx = system.state_dim;
  const Eigen::Index m = input_samples.cols();
  set.all_states.resize(nx, n_all);
  set.safe_states.resize(nx, n_safe_states);
  set.safe_expert_inputs.resize(system.input_dim, n_safe_states);
  set.safe_grid_successors.resize(nx, n_safe_states * m);
  set.safe_state_traj.reserve(n_safe_states);

  Eigen::Index ca = 0, cs = 0;
  for (size_t ti = 0; ti < set.trajectories.size(); ++ti) {
    const Trajectory& traj = set.trajectories[ti];
    for (size_t s = 0; s < traj.states.size(); ++s) {
      set.all_states.col(ca++) = traj.states[s];
      if (!set.trajectory_safe[ti]) continue;
      set.safe_states.col(cs) = traj.states[s];
      // expert input at the final state is its own evaluation
      set.safe_expert_inputs.col(cs) =
          s < traj.inputs.size() ? traj.inputs[s] : expert(traj.states[s]);
      for (Eigen::Index j = 0; j < m; ++j)
        set.safe_grid_successors.col(cs * m + j) =
            system.step(traj.states[s], input_samples.col(j));
      set.safe_state_traj.push_back(static_cast<int>(ti));
      ++cs;
    }
  }
  return set;
}

namespace {
constexpr char kTrajMagic[8] = {'S', 'A', 'C', 'B', 'F', 'T', 'R', 'J'};
constexpr uint32_t kTrajVersion = 1;
}  // namespace

void LabeledTrajectorySet::save(const std::string& dir) const {
  ensure_directory(dir);
  std::ofstream out(dir + "/labeled.bin", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write labeled set in " + dir);
  out.write(kTrajMagic, 8);
  uint32_t version = kTrajVersion;
  out.write(reinterpret_cast<const char*>(&version), 4);
  const uint32_t nx = static_cast<uint32_t>(all_states.rows());
  const uint32_t nu = static_cast<uint32_t>(input_samples.rows());
  const uint64_t ntraj = trajectories.size();
  out.write(reinterpret_cast<const char*>(&nx), 4);
  out.write(reinterpret_cast<const char*>(&nu), 4);
  out.write(reinterpret_cast<const char*>(&ntraj), 8);
  for (size_t i = 0; i < trajectories.size(); ++i) {
    const Trajectory& t = trajectories[i];
    uint32_t steps = static_cast<uint32_t>(t.steps());
    uint8_t safe = trajectory_safe[i];
    uint8_t reached = t.reached_target ? 1 : 0;
    out.write(reinterpret_cast<const char*>(&steps), 4);
    out.write(reinterpret_cast<const char*>(&safe), 1);
    out.write(reinterpret_cast<const char*>(&reached), 1);
    for (const auto& s : t.states)
      out.write(reinterpret_cast<const char*>(s.data()), nx * sizeof(double));
    for (const auto& u : t.inputs)
      out.write(reinterpret_cast<const char*>(u.data()), nu * sizeof(double));
  }
  uint64_t m = static_cast<uint64_t>(input_samples.cols());
  out.write(reinterpret_cast<const char*>(&m), 8);
  write_matrix(out, input_samples);
  // derived matrices are persisted so loading never needs the simulator
  uint64_t ns = static_cast<uint64_t>(safe_count());
  out.write(reinterpret_cast<const char*>(&ns), 8);
  write_matrix(out, safe_states);
  write_matrix(out, safe_expert_inputs);
  write_matrix(out, safe_grid_successors);
  for (int ti : safe_state_traj) {
    uint32_t v = static_cast<uint32_t>(ti);
    out.write(reinterpret_cast<const char*>(&v), 4);
  }
  if (!out) throw std::runtime_error("short labeled-set write in " + dir);

  nlohmann::json manifest;
  manifest["trajectories"] = ntraj;
  manifest["safe_trajectories"] = safe_trajectories();
  manifest["unsafe_trajectories"] = unsafe_trajectories();
  manifest["safe_states"] = static_cast<uint64_t>(safe_count());
  manifest["input_samples"] = m;
  manifest["horizon"] = horizon;
  manifest["seed"] = seed;
  manifest["system"] = system;
  std::ofstream mf(dir + "/manifest.json");
  mf << manifest.dump(2) << "\n";
}

LabeledTrajectorySet LabeledTrajectorySet::load(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.json");
  if (!mf) throw std::runtime_error("missing manifest.json in " + dir);
  nlohmann::json manifest;
  mf >> manifest;

  std::ifstream in(dir + "/labeled.bin", std::ios::binary);
  if (!in) throw std::runtime_error("missing labeled.bin in " + dir);
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, kTrajMagic, 8) != 0)
    throw std::runtime_error("bad labeled-set magic in " + dir);
  uint32_t version = 0, nx = 0, nu = 0;
  uint64_t ntraj = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  if (version != kTrajVersion)
    throw std::runtime_error("unsupported labeled-set version in " + dir);
  in.read(reinterpret_cast<char*>(&nx), 4);
  in.read(reinterpret_cast<char*>(&nu), 4);
  in.read(reinterpret_cast<char*>(&ntraj), 8);

  LabeledTrajectorySet set;
  set.seed = manifest.value("seed", uint64_t{0});
  set.system = manifest.value("system", std::string());
  set.horizon = manifest.value("horizon", 0);
  set.trajectories.resize(ntraj);
  set.trajectory_safe.resize(ntraj);
  Eigen::Index n_all = 0;
  for (uint64_t i = 0; i < ntraj; ++i) {
    uint32_t steps = 0;
    uint8_t safe = 0, reached = 0;
    in.read(reinterpret_cast<char*>(&steps), 4);
    in.read(reinterpret_cast<char*>(&safe), 1);
    in.read(reinterpret_cast<char*>(&reached), 1);
    Trajectory& t = set.trajectories[i];
    t.states.resize(steps + 1, VectorXd(nx));
    t.inputs.resize(steps, VectorXd(nu));
    t.reached_target = reached != 0;
    for (auto& s : t.states)
      in.read(reinterpret_cast<char*>(s.data()), nx * sizeof(double));
    for (auto& u : t.inputs)
      in.read(reinterpret_cast<char*>(u.data()), nu * sizeof(double));
    set.trajectory_safe[i] = safe;
    n_all += steps + 1;
  }
  uint64_t m = 0;
  in.read(reinterpret_cast<char*>(&m), 8);
  set.input_samples.resize(nu, m);
  read_matrix(in, set.input_samples);
  uint64_t ns = 0;
  in.read(reinterpret_cast<char*>(&ns), 8);
  set.safe_states.resize(nx, ns);
  set.safe_expert_inputs.resize(nu, ns);
  set.safe_grid_successors.resize(nx, ns * m);
  read_matrix(in, set.safe_states);
  read_matrix(in, set.safe_expert_inputs);
  read_matrix(in, set.safe_grid_successors);
  set.safe_state_traj.resize(ns);
  for (uint64_t i = 0; i < ns; ++i) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    set.safe_state_traj[i] = static_cast<int>(v);
  }
  if (!in) throw std::runtime_error("truncated labeled.bin in " + dir);

  // feasibility flags are not stored; they are only used at collection time
  set.all_states.resize(nx, n_all);
  Eigen::Index ca = 0;
  for (const auto& t : set.trajectories)
    for (const auto& s : t.states) set.all_states.col(ca++) = s;
  return set;
}

}  // namespace sacbf
