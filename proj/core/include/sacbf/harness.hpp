#pragma once

#include "sacbf/filter.hpp"

namespace sacbf {

struct PolicyUnderTest {
  std::string name;
  Policy act;
  // present for filtered policies: solve timing and infeasibility events
  std::shared_ptr<FilterRuntimeStats> stats;
};

struct EvalRow {
  std::string policy;
  double safety_rate = 0.0;     // percent of fully-feasible, event-free trials
  double total_cost = 0.0;      // mean over trials of the summed stage cost
  double mean_cpu_ms = 0.0;     // mean over trials of the median solve time
  int trials = 0;
  int64_t infeasibility_events = 0;
  int64_t reached_target = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  uint64_t seed = 0;
  int steps = 0;
  std::string config_hash;

  void save_json(const std::string& path) const;
  void save_csv(const std::string& path) const;
};

// Deterministic rollouts of each policy from the given initial states.
// A trial counts as safe when every step satisfies the raw state constraint
// and the input box and no filter-infeasibility event occurred during it.
// CPU time is the median per-step solve wall time (for unfiltered policies,
// the policy call itself), averaged over trials.
EvalReport evaluate(std::vector<PolicyUnderTest>& policies,
                    const SystemSpec& system, const ConstraintSpec& constraints,
                    const MatrixXd& x0_set, int T, uint64_t seed,
                    const std::function<double(const VectorXd&, const VectorXd&)>&
                        stage_cost,
                    const std::string& config_text = "");

// squared distance of the position block to the origin, the evaluation cost
// used by both plants (positions are the leading coordinates)
std::function<double(const VectorXd&, const VectorXd&)> position_cost(
    int position_dims);

// --- plot-data export ------------------------------------------------------

// Scalar field sampled on a 2-D slice: the two free dims sweep their grid,
// the remaining coordinates are pinned. CSV columns: a,b,value.
void export_levelset_slice(const std::function<double(const VectorXd&)>& field,
                           const VectorXd& pinned_state, int dim_a, int dim_b,
                           const VectorXd& lo, const VectorXd& hi, int per_axis,
                           const std::string& path);

struct BetaSweepRow {
  double beta = 0.0;
  double epsilon = 0.0;
  double safe_level = 0.0;
  Eigen::Index slice_nodes = 0;
  Eigen::Index safe_nodes = 0;
  double safe_area = 0.0;
};

// safe-set slice areas across bundles trained at different beta values
void export_beta_sweep(const std::vector<BetaSweepRow>& rows,
                       const std::string& path);

}  // namespace sacbf
