#include "sacbf/cfqi.hpp"

#include <cmath>
#include <numeric>

namespace sacbf {

MlpQFunction::MlpQFunction(MlpModel model, TrainConfig fit_cfg)
    : model_(std::move(model)), fit_cfg_(fit_cfg) {}

double MlpQFunction::value(const VectorXd& x, const VectorXd& u) const {
  VectorXd z(x.size() + u.size());
  z << x, u;
  return model_.forward_scalar(z);
}

void MlpQFunction::fit_targets(const MatrixXd& inputs,
                               const Eigen::RowVectorXd& targets, uint64_t seed) {
  TrainConfig cfg = fit_cfg_;
  cfg.seed = seed;
  fit(model_, inputs, targets, cfg);
}

std::unique_ptr<QFunction> MlpQFunction::clone() const {
  return std::make_unique<MlpQFunction>(*this);
}

TabularQFunction::TabularQFunction(MatrixXd state_anchors, MatrixXd action_anchors)
    : states_(std::move(state_anchors)),
      actions_(std::move(action_anchors)),
      table_(MatrixXd::Zero(states_.cols(), actions_.cols())) {}

namespace {
Eigen::Index nearest_column(const MatrixXd& anchors, const VectorXd& v) {
  Eigen::Index best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < anchors.cols(); ++c) {
    const double d = (anchors.col(c) - v).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}
}  // namespace

Eigen::Index TabularQFunction::nearest_state(const VectorXd& x) const {
  return nearest_column(states_, x);
}

Eigen::Index TabularQFunction::nearest_action(const VectorXd& u) const {
  return nearest_column(actions_, u);
}

double TabularQFunction::value(const VectorXd& x, const VectorXd& u) const {
  return table_(nearest_state(x), nearest_action(u));
}

void TabularQFunction::fit_targets(const MatrixXd& inputs,
                                   const Eigen::RowVectorXd& targets, uint64_t) {
  const Eigen::Index nx = states_.rows();
  MatrixXd sums = MatrixXd::Zero(table_.rows(), table_.cols());
  MatrixXd counts = MatrixXd::Zero(table_.rows(), table_.cols());
  for (Eigen::Index i = 0; i < inputs.cols(); ++i) {
    const Eigen::Index s = nearest_state(inputs.col(i).head(nx));
    const Eigen::Index a = nearest_action(inputs.col(i).tail(inputs.rows() - nx));
    sums(s, a) += targets(i);
    counts(s, a) += 1.0;
  }
  for (Eigen::Index s = 0; s < table_.rows(); ++s)
    for (Eigen::Index a = 0; a < table_.cols(); ++a)
      if (counts(s, a) > 0.0) table_(s, a) = sums(s, a) / counts(s, a);
}

std::unique_ptr<QFunction> TabularQFunction::clone() const {
  return std::make_unique<TabularQFunction>(*this);
}

void CfqiConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0))
    throw std::invalid_argument("cfqi: gamma must lie in (0, 1)");
  if (!stage_cost) throw std::invalid_argument("cfqi: stage cost is required");
  if (max_updates < 0) throw std::invalid_argument("cfqi: max_updates < 0");
  if (stop_tol <= 0.0) throw std::invalid_argument("cfqi: stop_tol must be > 0");
  if (action_grid.cols() < 1) throw std::invalid_argument("cfqi: empty action grid");
}

BellmanTarget constrained_bellman_target(const QFunction& q,
                                         const SacbfBundle& bundle,
                                         const VectorXd& x, const VectorXd& u,
                                         const VectorXd& xnext,
                                         const CfqiConfig& cfg) {
  double best = std::numeric_limits<double>::infinity();
  double best_qb = std::numeric_limits<double>::infinity();
  Eigen::Index best_qb_action = 0;
  bool any = false;
  for (Eigen::Index a = 0; a < cfg.action_grid.cols(); ++a) {
    const double qb_val = bundle.qb(xnext, cfg.action_grid.col(a));
    if (qb_val < best_qb) {
      best_qb = qb_val;
      best_qb_action = a;
    }
    if (qb_val <= bundle.safe_level) {
      any = true;
      best = std::min(best, q.value(xnext, cfg.action_grid.col(a)));
    }
  }
  BellmanTarget t;
  if (!any) {
    // conservative completion keeps the sample instead of dropping it
    best = q.value(xnext, cfg.action_grid.col(best_qb_action));
    t.fallback_used = true;
  }
  t.value = cfg.stage_cost(x, u) + cfg.gamma * best;
  return t;
}

TransitionDataset filter_to_safe(const TransitionDataset& data,
                                 const SacbfBundle& bundle) {
  std::vector<Eigen::Index> keep;
  keep.reserve(data.count());
  for (Eigen::Index i = 0; i < data.count(); ++i)
    if (bundle.safe_set_test(data.x.col(i)) &&
        bundle.safe_set_test(data.xnext.col(i)))
      keep.push_back(i);
  TransitionDataset out;
  out.strategy = data.strategy;
  out.seed = data.seed;
  out.system = data.system;
  out.x.resize(data.x.rows(), keep.size());
  out.u.resize(data.u.rows(), keep.size());
  out.xnext.resize(data.xnext.rows(), keep.size());
  for (size_t i = 0; i < keep.size(); ++i) {
    out.x.col(i) = data.x.col(keep[i]);
    out.u.col(i) = data.u.col(keep[i]);
    out.xnext.col(i) = data.xnext.col(keep[i]);
  }
  return out;
}

CfqiResult run_cfqi(const TransitionDataset& data, const SacbfBundle& bundle,
                    const QFunction& init, const CfqiConfig& cfg) {
  cfg.validate();
  if (data.count() < 1) throw std::invalid_argument("run_cfqi: empty dataset");
  for (Eigen::Index i = 0; i < data.count(); ++i)
    if (!bundle.safe_set_test(data.x.col(i)) ||
        !bundle.safe_set_test(data.xnext.col(i)))
      throw std::invalid_argument(
          "run_cfqi: dataset contains triples outside the bundle safe set; "
          "apply filter_to_safe first");

  CfqiResult result;
  result.q = init.clone();

  // fixed audit pairs for the stopping rule: a seeded subset of the data,
  // drawn without replacement
  Rng rng(cfg.seed);
  const Eigen::Index n_audit =
      std::min<Eigen::Index>(cfg.audit_size, data.count());
  std::vector<Eigen::Index> all(data.count());
  std::iota(all.begin(), all.end(), 0);
  rng.shuffle(all);
  std::vector<Eigen::Index> audit(all.begin(), all.begin() + n_audit);

  MatrixXd inputs = data.joined_inputs();
  Eigen::RowVectorXd targets(data.count());
  VectorXd audit_prev(n_audit), audit_cur(n_audit);
  for (Eigen::Index i = 0; i < n_audit; ++i)
    audit_prev(i) = result.q->value(data.x.col(audit[i]), data.u.col(audit[i]));

  for (int k = 0; k < cfg.max_updates; ++k) {
    double residual = 0.0;
    for (Eigen::Index i = 0; i < data.count(); ++i) {
      BellmanTarget t = constrained_bellman_target(
          *result.q, bundle, data.x.col(i), data.u.col(i), data.xnext.col(i), cfg);
      if (t.fallback_used) ++result.fallback_count;
      targets(i) = t.value;
      const double r = t.value - result.q->value(data.x.col(i), data.u.col(i));
      residual += r * r;
    }
    residual /= static_cast<double>(data.count());
    result.residual_history.push_back(residual);

    result.q->fit_targets(inputs, targets, cfg.seed + static_cast<uint64_t>(k) + 1);
    ++result.iterations;

    for (Eigen::Index i = 0; i < n_audit; ++i)
      audit_cur(i) = result.q->value(data.x.col(audit[i]), data.u.col(audit[i]));
    const double delta = (audit_cur - audit_prev).cwiseAbs().maxCoeff();
    result.audit_delta_history.push_back(delta);
    audit_prev = audit_cur;
    if (delta <= cfg.stop_tol) {
      result.converged = true;
      break;
    }
  }
  return result;
}

}  // namespace sacbf
