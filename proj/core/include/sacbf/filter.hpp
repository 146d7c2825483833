#pragma once

#include <memory>

#include "sacbf/learn.hpp"

namespace sacbf {

// Objective of the per-step program: either squared distance to a reference
// action (safety-filter mode) or a learned state-action value (greedy mode).
struct FilterObjective {
  enum class Mode : uint8_t { DistanceToReference = 0, LearnedQ = 1 };
  Mode mode = Mode::DistanceToReference;
  Policy reference;
  std::optional<MlpModel> qtheta;

  static FilterObjective distance_to(Policy ref);
  static FilterObjective learned_q(MlpModel q);
};

enum class OnInfeasible : uint8_t { HoldLastInput = 0, BestEffort = 1 };

struct FilterConfig {
  VectorXd input_lo, input_hi;
  double feas_tol = 1e-6;
  int k_starts = 8;
  int grid_per_axis = 11;
  int max_refine_iters = 60;
  double step_init = 0.5;
  double step_min = 1e-12;
  double converge_tol = 1e-10;
  OnInfeasible on_infeasible = OnInfeasible::BestEffort;

  static FilterConfig for_constraints(const ConstraintSpec& constraints);
};

struct FilterSolution {
  VectorXd u;
  double objective_value = 0.0;   // squared distance in distance mode
  double constraint_value = 0.0;  // qb(x, u)
  bool feasible = false;
  struct Stats {
    int starts_used = 0;
    int iterations = 0;
    double wall_ms = 0.0;
    double seed_objective = 0.0;  // best phase-(i) objective among the starts
  } stats;
};

// Two-phase solve of min_u Q(x,u) s.t. qb(x,u) <= level over the input box:
// candidate screening on an action lattice (plus the clipped reference in
// distance mode), then projected-gradient refinement from the best feasible
// candidates, rejecting iterates that violate the constraint beyond
// feas_tol. Ties break on the objective, then lexicographically on u.
// When nothing is feasible the returned input minimizes the constraint
// value and `feasible` is false.
FilterSolution solve(const SacbfBundle& bundle, const FilterObjective& objective,
                     const VectorXd& x, const FilterConfig& cfg);

// Same machinery for an arbitrary constraint field (used by the indirect
// model-based baseline).
FilterSolution solve_constrained(
    const std::function<double(const VectorXd&)>& objective_value,
    const std::function<VectorXd(const VectorXd&)>& objective_grad,
    const std::function<double(const VectorXd&)>& constraint, double level,
    const FilterConfig& cfg);

struct FilterRuntimeStats {
  int64_t infeasible_events = 0;
  int64_t steps = 0;
  std::vector<double> solve_ms;

  double median_solve_ms() const;
};

// Closure over solve(); infeasibility is surfaced through the shared stats
// and handled per cfg.on_infeasible.
class FilterPolicy {
 public:
  FilterPolicy(SacbfBundle bundle, FilterObjective objective, FilterConfig cfg);
  // generic constraint variant
  FilterPolicy(std::function<double(const VectorXd&, const VectorXd&)> constraint,
               double level, FilterObjective objective, FilterConfig cfg);

  VectorXd operator()(const VectorXd& x);
  std::shared_ptr<FilterRuntimeStats> stats() const { return stats_; }
  Policy as_policy();

 private:
  std::function<double(const VectorXd&, const VectorXd&)> constraint_;
  double level_ = 0.0;
  FilterObjective objective_;
  FilterConfig cfg_;
  std::shared_ptr<FilterRuntimeStats> stats_;
  VectorXd last_input_;
};

FilterPolicy make_policy(const SacbfBundle& bundle, const FilterObjective& objective,
                         const FilterConfig& cfg);

}  // namespace sacbf
