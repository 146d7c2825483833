#pragma once

#include "sacbf/filter.hpp"

namespace sacbf {

// Potential-field controller for the vehicle: attractive quadratic well at
// the origin plus inverse-distance repulsion active within
// `influence_radius` of each obstacle center. The gradient field maps to
// (a, delta) by proportional speed/heading tracking, then clips to the
// input box. repulse_gain = 0 is the attraction-only variant. The field has
// genuine local optima (some inside obstacle regions), which is what makes
// it an imperfect expert.
struct ApfConfig {
  double attract_gain = 1.0;
  double repulse_gain = 0.6;
  double influence_radius = 1.3;  // from the obstacle center
  double speed_setpoint = 0.7;
  double heading_gain = 2.0;
  double speed_gain = 4.0;
};

Policy apf_policy(const ApfConfig& cfg, const ConstraintSpec& constraints,
                  const std::vector<Obstacle>& obstacles);

// --- indirect data-driven pipeline ----------------------------------------

struct IdentifyConfig {
  std::vector<int> hidden = {32, 32};
  TrainConfig fit;
  double holdout_fraction = 0.1;
};

struct IdentifiedModel {
  MlpModel model;  // (x; u) -> x+
  double holdout_mse = 0.0;

  VectorXd predict(const VectorXd& x, const VectorXd& u) const;
};

IdentifiedModel identify_model(const TransitionDataset& data,
                               const IdentifyConfig& cfg);

struct IndirectConfig {
  int horizon = 20;
  // random two-segment piecewise-constant profiles per target, top-1
  int shooting_sequences = 256;
  double beta_b = 1.0;
  std::vector<int> cbf_hidden = {32, 32};
  TrainConfig fit;
  Eigen::Index max_target_states = 20000;
};

// Model-based baseline: truncated-horizon reachability targets computed by
// random shooting on the identified model, a neural barrier fit to them,
// and a filter that enforces B(f_hat(x, u)) <= beta_b B(x). The factory
// takes only the identified model; the true plant is never consulted after
// identification.
struct IndirectFilter {
  MlpModel cbf;
  IdentifiedModel identified;
  double beta_b = 1.0;

  double barrier(const VectorXd& x) const;
  FilterPolicy make_policy(const FilterObjective& objective,
                           const FilterConfig& cfg) const;
};

// shooting targets for a set of states (columns); exposed for validation
Eigen::RowVectorXd indirect_reachability_targets(
    const IdentifiedModel& identified,
    const std::function<double(const VectorXd&)>& h, const MatrixXd& states,
    const VectorXd& input_lo, const VectorXd& input_hi, int horizon,
    int sequences, uint64_t seed);

IndirectFilter build_indirect_filter(const IdentifiedModel& identified,
                                     const TransitionDataset& data,
                                     const ConstraintSpec& constraints,
                                     const IndirectConfig& cfg);

}  // namespace sacbf
