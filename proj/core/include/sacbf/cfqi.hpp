#pragma once

#include <memory>

#include "sacbf/learn.hpp"

namespace sacbf {

// Fitted-Q approximator interface. The production path wraps an MlpModel;
// the table-backed variant makes the iteration exact on finite problems so
// it can be checked against plain dynamic programming.
class QFunction {
 public:
  virtual ~QFunction() = default;
  virtual double value(const VectorXd& x, const VectorXd& u) const = 0;
  // refit to the given (x;u) columns and scalar targets
  virtual void fit_targets(const MatrixXd& inputs, const Eigen::RowVectorXd& targets,
                           uint64_t seed) = 0;
  virtual std::unique_ptr<QFunction> clone() const = 0;
};

class MlpQFunction : public QFunction {
 public:
  MlpQFunction(MlpModel model, TrainConfig fit_cfg);
  double value(const VectorXd& x, const VectorXd& u) const override;
  void fit_targets(const MatrixXd& inputs, const Eigen::RowVectorXd& targets,
                   uint64_t seed) override;
  std::unique_ptr<QFunction> clone() const override;
  const MlpModel& model() const { return model_; }

 private:
  MlpModel model_;
  TrainConfig fit_cfg_;
};

// Nearest-anchor table over finite state/action sets; fitting assigns each
// cell the mean of its targets, which reproduces exact value iteration.
class TabularQFunction : public QFunction {
 public:
  TabularQFunction(MatrixXd state_anchors, MatrixXd action_anchors);
  double value(const VectorXd& x, const VectorXd& u) const override;
  void fit_targets(const MatrixXd& inputs, const Eigen::RowVectorXd& targets,
                   uint64_t seed) override;
  std::unique_ptr<QFunction> clone() const override;

  MatrixXd& table() { return table_; }
  const MatrixXd& table() const { return table_; }
  Eigen::Index nearest_state(const VectorXd& x) const;
  Eigen::Index nearest_action(const VectorXd& u) const;

 private:
  MatrixXd states_, actions_;
  MatrixXd table_;  // states x actions
};

struct CfqiConfig {
  double gamma = 0.99;  // in (0, 1)
  std::function<double(const VectorXd&, const VectorXd&)> stage_cost;
  int max_updates = 50;
  double stop_tol = 1e-4;
  MatrixXd action_grid;
  uint64_t seed = 0;
  int audit_size = 512;  // fixed seeded set for the stopping check

  void validate() const;
};

struct BellmanTarget {
  double value = 0.0;
  bool fallback_used = false;  // no grid action passed the safe level at x+
};

// g(x,u) + gamma * min over grid actions passing qb(x+, a) <= safe_level of
// q(x+, a). When no action passes, the action minimizing qb completes the
// target conservatively and the sample is flagged.
BellmanTarget constrained_bellman_target(const QFunction& q,
                                         const SacbfBundle& bundle,
                                         const VectorXd& x, const VectorXd& u,
                                         const VectorXd& xnext,
                                         const CfqiConfig& cfg);

struct CfqiResult {
  std::unique_ptr<QFunction> q;
  std::vector<double> residual_history;     // mean squared Bellman residual
  std::vector<double> audit_delta_history;  // sup change on the audit set
  int iterations = 0;
  int64_t fallback_count = 0;
  bool converged = false;
};

// keeps only triples whose x and x+ both pass the bundle's safe-set test
TransitionDataset filter_to_safe(const TransitionDataset& data,
                                 const SacbfBundle& bundle);

// Offline iteration: compute constrained targets, refit, stop when the sup
// change over a fixed seeded audit subset drops below stop_tol or after
// max_updates. Requires pre-filtered data (see filter_to_safe).
CfqiResult run_cfqi(const TransitionDataset& data, const SacbfBundle& bundle,
                    const QFunction& init, const CfqiConfig& cfg);

}  // namespace sacbf
