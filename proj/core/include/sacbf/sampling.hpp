#pragma once

#include <string>
#include <vector>

#include "sacbf/dynamics.hpp"

namespace sacbf {

enum class SampleStrategy : uint8_t { UniformRandom = 0, Grid = 1, Trajectory = 2 };

std::string to_string(SampleStrategy s);
SampleStrategy strategy_from_string(const std::string& s);

// Transition triples (x, u, x+); columns are samples.
struct TransitionDataset {
  MatrixXd x;      // n_x by N
  MatrixXd u;      // n_u by N
  MatrixXd xnext;  // n_x by N
  SampleStrategy strategy = SampleStrategy::UniformRandom;
  uint64_t seed = 0;
  std::string system;

  Eigen::Index count() const { return x.cols(); }
  int state_dim() const { return static_cast<int>(x.rows()); }
  int input_dim() const { return static_cast<int>(u.rows()); }

  // joined (x; u) matrix, the natural regression input
  MatrixXd joined_inputs() const;

  TransitionDataset head(Eigen::Index n) const;
  // deterministic split by shuffled column index
  std::pair<TransitionDataset, TransitionDataset> split(double holdout_fraction,
                                                        uint64_t seed) const;

  // directory with transitions.bin + manifest.json
  void save(const std::string& dir) const;
  static TransitionDataset load(const std::string& dir);
  void to_csv(const std::string& path) const;
};

// Uniform-random or lattice sampling over the domain box and input box.
// Grid strategy uses floor(N^(1/(nx+nu))) points per axis, so the actual
// count is the largest full lattice not exceeding N.
TransitionDataset sample_transitions(const SystemSpec& system,
                                     const ConstraintSpec& constraints,
                                     Eigen::Index N, SampleStrategy strategy,
                                     uint64_t seed);

// Uniform lattice over the input box, endpoints included; columns = points.
MatrixXd sample_input_grid(const ConstraintSpec& constraints,
                           const std::vector<int>& per_axis);

// Expert demonstration data with the trajectory-level safe/unsafe labeling:
// a trajectory's states are safe iff every step keeps the (tightened) state
// constraint and the input box, and the final state reaches the target.
// States of failing trajectories all stay out of the safe set but still
// enter all_states.
struct LabeledTrajectorySet {
  std::vector<Trajectory> trajectories;
  std::vector<uint8_t> trajectory_safe;

  MatrixXd safe_states;         // n_x by n_s
  MatrixXd safe_expert_inputs;  // n_u by n_s, the expert action at each safe state
  std::vector<int> safe_state_traj;  // trajectory index per safe state
  MatrixXd all_states;          // n_x by n_a
  MatrixXd input_samples;       // U_s, n_u by m
  // successor f(x, u) for each safe state x and each u in U_s;
  // column i * m + j holds the successor of (safe state i, input j)
  MatrixXd safe_grid_successors;

  uint64_t seed = 0;
  std::string system;
  int horizon = 0;

  Eigen::Index safe_count() const { return safe_states.cols(); }
  int safe_trajectories() const;
  int unsafe_trajectories() const;

  // transition triples harvested from the demonstration trajectories
  TransitionDataset to_transitions() const;
  // split at trajectory level; successor blocks follow their safe states
  std::pair<LabeledTrajectorySet, LabeledTrajectorySet> split(
      double holdout_fraction, uint64_t seed) const;

  void save(const std::string& dir) const;
  static LabeledTrajectorySet load(const std::string& dir);
};

// Rolls the expert from N0 random initial states for T steps and labels
// trajectories. `input_samples` (U_s) is needed here so the successors used
// by downstream learning can be generated while the simulator is available.
LabeledTrajectorySet collect_expert_trajectories(
    const SystemSpec& system, const ConstraintSpec& constraints,
    const Policy& expert, int N0, int T, uint64_t seed,
    const MatrixXd& input_samples);

}  // namespace sacbf
