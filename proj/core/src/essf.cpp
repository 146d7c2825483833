#include "sacbf/essf.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace sacbf {

Margins essf_margins(SacbfMethod method, double beta, double epsilon) {
  if (epsilon < 0.0) throw std::invalid_argument("essf_margins: epsilon < 0");
  if (beta < 0.0 || beta >= 1.0)
    throw std::invalid_argument("essf_margins: beta must lie in [0, 1)");
  Margins m;
  switch (method) {
    case SacbfMethod::Sl:
      m.kappa = (1.0 + beta) / (1.0 - beta) * epsilon;
      m.safe_level = 2.0 * beta / (1.0 - beta) * epsilon;
      m.tighten_margin = m.safe_level;
      return m;
    case SacbfMethod::Expert:
      m.kappa = (1.0 + beta) / (1.0 - beta) * epsilon;
      m.safe_level = 2.0 / (1.0 - beta) * epsilon;
      m.tighten_margin = m.safe_level;
      return m;
    case SacbfMethod::Rl:
      throw std::invalid_argument(
          "essf_margins: no error-to-safety margins exist for the rl method");
  }
  return m;
}

double estimate_epsilon_sl(const SacbfBundle& bundle,
                           const std::function<double(const VectorXd&)>& cbf,
                           const TransitionDataset& holdout,
                           const ConstraintSpec& constraints) {
  if (bundle.method != SacbfMethod::Sl)
    throw std::invalid_argument("estimate_epsilon_sl: bundle method is not sl");
  if (holdout.count() == 0)
    throw std::invalid_argument("estimate_epsilon_sl: empty dataset");
  double eps = 0.0;
  for (Eigen::Index i = 0; i < holdout.count(); ++i) {
    const double label = std::max(constraints.h_learning(holdout.x.col(i)),
                                  cbf(holdout.xnext.col(i)) / bundle.beta);
    eps = std::max(eps,
                   std::abs(bundle.qb(holdout.x.col(i), holdout.u.col(i)) - label));
  }
  return eps;
}

ExpertEpsilonDetails expert_epsilon_details(const SacbfBundle& bundle,
                                            const LabeledTrajectorySet& holdout) {
  if (bundle.method != SacbfMethod::Expert)
    throw std::invalid_argument("expert_epsilon_details: bundle method is not expert");
  if (holdout.safe_count() == 0)
    throw std::invalid_argument("expert_epsilon_details: empty safe set in data");

  ExpertEpsilonDetails d;
  d.cond_a_max = -std::numeric_limits<double>::infinity();
  d.cond_b_max = -std::numeric_limits<double>::infinity();
  d.min_q = std::numeric_limits<double>::infinity();

  const Eigen::Index ns = holdout.safe_count();
  const Eigen::Index m = holdout.input_samples.cols();
  for (Eigen::Index i = 0; i < ns; ++i) {
    const VectorXd& x = holdout.safe_states.col(i);
    d.cond_a_max = std::max(
        d.cond_a_max, bundle.qb(x, holdout.safe_expert_inputs.col(i)) -
                          bundle.beta * bundle.qfun(x));
    for (Eigen::Index j = 0; j < m; ++j)
      d.cond_b_max = std::max(
          d.cond_b_max,
          bundle.qfun(holdout.safe_grid_successors.col(i * m + j)) -
              bundle.qb(x, holdout.input_samples.col(j)));
  }
  for (Eigen::Index i = 0; i < holdout.all_states.cols(); ++i)
    d.min_q = std::min(d.min_q, bundle.qfun(holdout.all_states.col(i)));

  const double eps_c = (1.0 - bundle.beta) / 2.0 * d.min_q;
  d.epsilon = std::max({0.0, d.cond_a_max, d.cond_b_max, eps_c});
  return d;
}

double estimate_epsilon_expert(const SacbfBundle& bundle,
                               const LabeledTrajectorySet& holdout) {
  return expert_epsilon_details(bundle, holdout).epsilon;
}

int64_t hoeffding_samples(double p, double delta) {
  if (!(p > 0.0 && p < 1.0) || !(delta > 0.0 && delta < 1.0))
    throw std::invalid_argument("hoeffding_samples: p and delta must lie in (0, 1)");
  return static_cast<int64_t>(std::ceil(std::log(1.0 / delta) / (2.0 * p * p)));
}

AuditReport audit_definition2(const SacbfBundle& bundle, const SystemSpec& system,
                              const ConstraintSpec& constraints,
                              const MatrixXd& state_samples,
                              const MatrixXd& action_grid) {
  AuditReport report;
  report.samples = state_samples.cols();
  for (Eigen::Index s = 0; s < state_samples.cols(); ++s) {
    const VectorXd x = state_samples.col(s);
    if (!bundle.safe_set_test(x)) continue;
    ++report.members;
    if (constraints.h(x) > 0.0) ++report.violations_state;

    double best = std::numeric_limits<double>::infinity();
    Eigen::Index best_a = 0;
    for (Eigen::Index a = 0; a < action_grid.cols(); ++a) {
      const double v = bundle.qb(x, action_grid.col(a));
      if (v < best) {
        best = v;
        best_a = a;
      }
    }
    if (best > bundle.safe_level) {
      ++report.violations_existence;
      continue;
    }
    const VectorXd xn = system.step(x, action_grid.col(best_a));
    if (!bundle.safe_set_test(xn)) ++report.violations_successor;
  }
  report.safe_set_empty = report.members == 0;
  return report;
}

double constraint_inradius_estimate(const ConstraintSpec& constraints,
                                    int per_axis) {
  const int d = static_cast<int>(constraints.domain_lo.size());
  Eigen::Index total = 1;
  for (int k = 0; k < d; ++k) total *= per_axis;
  double depth = 0.0;
  std::vector<int> idx(d, 0);
  VectorXd x(d);
  for (Eigen::Index i = 0; i < total; ++i) {
    for (int k = 0; k < d; ++k)
      x(k) = constraints.domain_lo(k) +
             (constraints.domain_hi(k) - constraints.domain_lo(k)) * idx[k] /
                 (per_axis - 1);
    depth = std::max(depth, -constraints.h(x));
    for (int k = d - 1; k >= 0; --k) {
      if (++idx[k] < per_axis) break;
      idx[k] = 0;
    }
  }
  return depth;
}

void EssfReport::save_json(const std::string& path) const {
  nlohmann::json j;
  j["method"] = to_string(method);
  j["beta"] = beta;
  j["epsilon"] = epsilon;
  j["kappa"] = kappa;
  j["safe_level"] = safe_level;
  j["tighten_margin_required"] = tighten_margin;
  j["margin_used"] = margin_used;
  j["cond_a_max"] = cond_a_max;
  j["cond_b_max"] = cond_b_max;
  j["min_q"] = min_q;
  j["containment_checked"] = containment_checked;
  j["containment_violations"] = containment_violations;
  j["inradius"] = inradius;
  j["p"] = p;
  j["delta"] = delta;
  j["hoeffding_required"] = hoeffding_required;
  j["samples_checked"] = samples_checked;
  j["certified"] = certified;
  j["refusal_reason"] = refusal_reason;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write essf report: " + path);
  out << j.dump(2) << "\n";
}

namespace {

void finish_certification(EssfReport& r) {
  if (r.tighten_margin > r.margin_used) {
    r.refusal_reason = "required tightening margin exceeds the margin used for learning";
  } else if (r.tighten_margin > r.inradius) {
    r.refusal_reason = "required tightening margin exceeds the constraint inradius";
  } else if (r.containment_violations > 0) {
    r.refusal_reason = "claimed-safe samples violate the raw state constraint";
  } else if (r.samples_checked < r.hoeffding_required) {
    r.refusal_reason = "not enough held-out samples for the requested confidence";
  } else {
    r.certified = true;
  }
}

}  // namespace

EssfReport certify_sl(const SacbfBundle& bundle,
                      const std::function<double(const VectorXd&)>& cbf,
                      const TransitionDataset& holdout,
                      const ConstraintSpec& constraints, double p, double delta) {
  EssfReport r;
  r.method = SacbfMethod::Sl;
  r.beta = bundle.beta;
  r.epsilon = estimate_epsilon_sl(bundle, cbf, holdout, constraints);
  Margins m = essf_margins(SacbfMethod::Sl, bundle.beta, r.epsilon);
  r.kappa = m.kappa;
  r.safe_level = m.safe_level;
  r.tighten_margin = m.tighten_margin;
  r.margin_used = constraints.tighten_margin;
  r.cond_a_max = r.epsilon;
  r.inradius = constraint_inradius_estimate(constraints);
  r.p = p;
  r.delta = delta;
  r.hoeffding_required = hoeffding_samples(p, delta);
  r.samples_checked = holdout.count();
  // safe-set containment against the raw constraint; membership is the
  // theorem-native level test on the known CBF
  for (Eigen::Index i = 0; i < holdout.count(); ++i) {
    const VectorXd& x = holdout.x.col(i);
    if (cbf(x) > r.safe_level) continue;
    ++r.containment_checked;
    if (constraints.h(x) > 0.0) ++r.containment_violations;
  }
  finish_certification(r);
  return r;
}

EssfReport certify_expert(const SacbfBundle& bundle,
                          const LabeledTrajectorySet& holdout,
                          const ConstraintSpec& constraints, double p,
                          double delta) {
  EssfReport r;
  r.method = SacbfMethod::Expert;
  r.beta = bundle.beta;
  ExpertEpsilonDetails d = expert_epsilon_details(bundle, holdout);
  r.epsilon = d.epsilon;
  r.cond_a_max = d.cond_a_max;
  r.cond_b_max = d.cond_b_max;
  r.min_q = d.min_q;
  Margins m = essf_margins(SacbfMethod::Expert, bundle.beta, r.epsilon);
  r.kappa = m.kappa;
  r.safe_level = m.safe_level;
  r.tighten_margin = m.tighten_margin;
  r.margin_used = constraints.tighten_margin;
  r.inradius = constraint_inradius_estimate(constraints);
  r.p = p;
  r.delta = delta;
  r.hoeffding_required = hoeffding_samples(p, delta);
  r.samples_checked = holdout.all_states.cols();
  for (Eigen::Index i = 0; i < holdout.all_states.cols(); ++i) {
    const VectorXd& x = holdout.all_states.col(i);
    if (bundle.qfun(x) > r.safe_level) continue;
    ++r.containment_checked;
    if (constraints.h(x) > 0.0) ++r.containment_violations;
  }
  finish_certification(r);
  return r;
}

}  // namespace sacbf
