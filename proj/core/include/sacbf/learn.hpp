#pragma once

#include <optional>
#include <stdexcept>

#include "sacbf/grid_oracle.hpp"
#include "sacbf/mlp.hpp"
#include "sacbf/sampling.hpp"

namespace sacbf {

enum class SacbfMethod : uint8_t { Sl = 0, Expert = 1, Rl = 2 };

std::string to_string(SacbfMethod m);
SacbfMethod method_from_string(const std::string& s);

// A learned state-action barrier plus everything the filter and the audits
// need: the companion safe-set function (expert method), the action grid
// U_s, and the error margins filled in after verification.
struct SacbfBundle {
  SacbfMethod method = SacbfMethod::Rl;
  double beta = 1.0;       // beta_B for sl, beta for expert, 1 for rl
  double epsilon = 0.0;    // measured learning error
  double kappa = 0.0;      // relaxed filter level kappa(epsilon)
  double safe_level = 0.0; // level of the safe-set test

  std::function<double(const VectorXd& x, const VectorXd& u)> qb;
  std::function<double(const VectorXd& x)> qfun;  // expert method only
  std::optional<MlpModel> qb_model;
  std::optional<MlpModel> qfun_model;
  MatrixXd action_grid;  // U_s, columns are inputs

  double qb_min_over_grid(const VectorXd& x) const;
  // expert: qfun(x) <= safe_level; sl/rl: min over U_s of qb <= safe_level
  bool safe_set_test(const VectorXd& x) const;

  // persistence requires model-backed qb (oracle-backed bundles are
  // in-memory objects for tests and pipelines)
  void save(const std::string& dir) const;
  static SacbfBundle load(const std::string& dir);
};

// Bundle backed by a grid Q computed by the oracle; method tag rl with
// kappa = safe_level = 0 (the exact case).
SacbfBundle make_oracle_bundle(GridValue qgrid, MatrixXd action_grid);
// Bundle around an arbitrary state-action field, for tests and audits.
SacbfBundle make_function_bundle(
    std::function<double(const VectorXd&, const VectorXd&)> qb,
    MatrixXd action_grid, SacbfMethod method = SacbfMethod::Rl,
    double beta = 1.0);

struct TrainingDiverged : std::runtime_error {
  std::vector<double> loss_history;
  TrainingDiverged(const std::string& msg, std::vector<double> history)
      : std::runtime_error(msg), loss_history(std::move(history)) {}
};

// --- supervised learning from a known CBF -------------------------------

struct SlLearnConfig {
  std::vector<int> hidden = {48, 48};
  TrainConfig fit;
  double holdout_fraction = 0.1;
  MatrixXd action_grid;
};

// Regression of max{h(x), B(x+)/beta_b} onto (x, u); labels use the stored
// successor only, never the simulator. beta_b must lie strictly in (0, 1).
SacbfBundle learn_sl(const std::function<double(const VectorXd&)>& cbf,
                     double beta_b, const TransitionDataset& data,
                     const ConstraintSpec& constraints, const SlLearnConfig& cfg);

// --- expert-guided learning ----------------------------------------------

struct ExpertLearnConfig {
  double beta = 0.1;  // strictly below 1
  double lambda_b = 1.0, lambda_c = 10.0, lambda_d = 10.0;
  std::vector<int> qb_hidden = {32, 32};
  std::vector<int> q_hidden = {32, 32};
  TrainConfig fit;
  double holdout_fraction = 0.1;
};

// Joint training of (qb, qfun) on the sampled relaxation of the robust
// program: minimize the mean of qfun over all sampled states, with squared
// relu penalties for sign on unsafe states, expert decrease, and successor
// consistency on safe states times U_s. Throws if no trajectory was safe.
SacbfBundle learn_expert(const LabeledTrajectorySet& labeled,
                         const ExpertLearnConfig& cfg);

struct ExpertLossTerms {
  double objective = 0.0;  // mean of qfun over sampled states
  double pen_b = 0.0;      // mean relu(-q)^2 on unsafe states
  double pen_c = 0.0;      // mean relu(qb(x, pi_s(x)) - beta q(x))^2 on safe states
  double pen_d = 0.0;      // mean relu(q(x+) - qb(x, u))^2 on safe states x U_s
  double total(double lb, double lc, double ld) const {
    return objective + lb * pen_b + lc * pen_c + ld * pen_d;
  }
};
ExpertLossTerms expert_loss_terms(
    const std::function<double(const VectorXd&, const VectorXd&)>& qb,
    const std::function<double(const VectorXd&)>& qfun,
    const LabeledTrajectorySet& labeled, double beta);

// --- reinforcement learning on the reachability Bellman equation ---------

struct RlLearnConfig {
  double rho = 1e-3;  // weight of the value-minimizing term
  MatrixXd action_grid;
  int epochs = 60;
  int target_refresh = 4;  // epochs between frozen-target refreshes
  std::vector<int> hidden = {32, 32};
  TrainConfig fit;
};

// Temporal-difference regression toward max{h(x), min_a Q(x+, a)} with the
// inner min taken on a frozen parameter copy. Aborts (with history) when
// the loss exceeds 1e6.
SacbfBundle learn_rl(const TransitionDataset& data,
                     const ConstraintSpec& constraints, const RlLearnConfig& cfg);

struct RlLossTerms {
  double l1 = 0.0;  // mean squared Bellman residual
  double l2 = 0.0;  // mean value
};
RlLossTerms rl_loss_terms(
    const std::function<double(const VectorXd&, const VectorXd&)>& qb,
    const TransitionDataset& data,
    const std::function<double(const VectorXd&)>& h,
    const MatrixXd& action_grid);

// min over action-grid columns of model(x+, a), batched over states
VectorXd min_over_action_grid(const MlpModel& model, const MatrixXd& states,
                              const MatrixXd& action_grid);

}  // namespace sacbf
