#pragma once

#include "sacbf/learn.hpp"

namespace sacbf {

// Closed-form tightening/relaxation quantities as functions of the measured
// learning error. sl: kappa = (1+b)/(1-b) eps, level and margin 2b/(1-b) eps
// (levels apply to the known CBF). expert: kappa = (1+b)/(1-b) eps, level
// and margin 2/(1-b) eps (levels apply to qfun). The rl method carries no
// error-to-safety guarantee, so no margins are produced for it.
struct Margins {
  double kappa = 0.0;
  double safe_level = 0.0;
  double tighten_margin = 0.0;
};
Margins essf_margins(SacbfMethod method, double beta, double epsilon);

// Smallest error bound consistent with the held-out samples.
// sl: max |qb(x,u) - max{h(x), cbf(x+)/beta}| over the dataset.
double estimate_epsilon_sl(const SacbfBundle& bundle,
                           const std::function<double(const VectorXd&)>& cbf,
                           const TransitionDataset& holdout,
                           const ConstraintSpec& constraints);

// expert: smallest eps such that the expert-decrease condition, the
// successor-consistency condition (both on held-out safe samples) and the
// non-emptiness condition min_x qfun <= 2 eps/(1-beta) all hold.
struct ExpertEpsilonDetails {
  double epsilon = 0.0;
  double cond_a_max = 0.0;  // max qb(x, pi_s(x)) - beta q(x) on safe samples
  double cond_b_max = 0.0;  // max q(x+) - qb(x, u) on safe samples x U_s
  double min_q = 0.0;       // min qfun over all sampled states
};
ExpertEpsilonDetails expert_epsilon_details(const SacbfBundle& bundle,
                                            const LabeledTrajectorySet& holdout);
double estimate_epsilon_expert(const SacbfBundle& bundle,
                               const LabeledTrajectorySet& holdout);

// N = ceil(ln(1/delta) / (2 p^2)): zero observed violations over N i.i.d.
// samples certify a violation rate <= p with confidence >= 1 - delta.
int64_t hoeffding_samples(double p, double delta);

// Sampled audit of the barrier-certificate conditions. Membership uses the
// bundle's safe-set test; per member sample the audit checks the raw state
// constraint, the existence of a grid action at the safe level, and the
// successor membership of the best-scoring action (one simulator call per
// sample; the deployed filter never touches the simulator).
struct AuditReport {
  int64_t samples = 0;
  int64_t members = 0;
  int64_t violations_state = 0;      // h(x) > 0 on claimed-safe samples
  int64_t violations_existence = 0;  // no grid action passes the level
  int64_t violations_successor = 0;  // best action leads outside the set
  bool safe_set_empty = false;

  int64_t total_violations() const {
    return violations_state + violations_existence + violations_successor;
  }
  double violation_rate() const {
    return members > 0 ? static_cast<double>(total_violations()) /
                             static_cast<double>(members)
                       : 0.0;
  }
};
AuditReport audit_definition2(const SacbfBundle& bundle, const SystemSpec& system,
                              const ConstraintSpec& constraints,
                              const MatrixXd& state_samples,
                              const MatrixXd& action_grid);

// Depth of the deepest strictly-feasible point, estimated on a domain
// lattice: max over nodes of -h(x). A required margin above this would
// tighten the constraint set into (near) emptiness.
double constraint_inradius_estimate(const ConstraintSpec& constraints,
                                    int per_axis = 9);

struct EssfReport {
  SacbfMethod method = SacbfMethod::Sl;
  double beta = 0.0;
  double epsilon = 0.0;
  double kappa = 0.0;
  double safe_level = 0.0;
  double tighten_margin = 0.0;  // required by the measured epsilon
  double margin_used = 0.0;     // margin the learning stage actually applied
  double cond_a_max = 0.0, cond_b_max = 0.0, min_q = 0.0;
  int64_t containment_checked = 0;
  int64_t containment_violations = 0;
  double inradius = 0.0;
  double p = 0.0, delta = 0.0;
  int64_t hoeffding_required = 0;
  int64_t samples_checked = 0;
  bool certified = false;
  std::string refusal_reason;

  void save_json(const std::string& path) const;
};

// Theorem-style certification: margins from the measured epsilon, the
// safe-set containment check against the raw constraint, the inradius
// refusal, and the Hoeffding sample-count requirement at (p, delta).
EssfReport certify_sl(const SacbfBundle& bundle,
                      const std::function<double(const VectorXd&)>& cbf,
                      const TransitionDataset& holdout,
                      const ConstraintSpec& constraints, double p, double delta);
EssfReport certify_expert(const SacbfBundle& bundle,
                          const LabeledTrajectorySet& holdout,
                          const ConstraintSpec& constraints, double p,
                          double delta);

}  // namespace sacbf
