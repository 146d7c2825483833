// sacbf-lab: experiment driver around the sacbf core library.
// Exit codes: 0 ok, 2 invalid configuration or arguments,
// 3 infeasibility-dominated run.

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "sacbf/baselines.hpp"
#include "sacbf/cfqi.hpp"
#include "sacbf/essf.hpp"
#include "sacbf/harness.hpp"

using namespace sacbf;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitInfeasible = 3;

struct Plant {
  SystemSpec system;
  ConstraintSpec constraints;
  VehicleParams vehicle;  // meaningful for the vehicle plant only
  bool is_vehicle = false;
};

struct GlobalOptions {
  std::string config_path;
  uint64_t seed = 0;
  std::string out = ".";
};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config: " + path);
  json j;
  in >> j;
  return j;
}

Plant make_plant(const std::string& name, const json& config) {
  Plant plant;
  if (name == "dint") {
    std::tie(plant.system, plant.constraints) = make_double_integrator();
    if (config.contains("tighten_margin"))
      plant.constraints.tighten_margin = config["tighten_margin"].get<double>();
    return plant;
  }
  if (name == "vehicle") {
    VehicleParams params;
    if (config.contains("vehicle")) {
      // write the sub-config to a temp structure by reusing the file parser
      const json& v = config["vehicle"];
      params.wheelbase = v.value("wheelbase", params.wheelbase);
      params.dt = v.value("dt", params.dt);
      params.a_min = v.value("a_min", params.a_min);
      params.a_max = v.value("a_max", params.a_max);
      params.delta_max = v.value("delta_max", params.delta_max);
      params.pos_bound = v.value("pos_bound", params.pos_bound);
      params.v_min = v.value("v_min", params.v_min);
      params.v_max = v.value("v_max", params.v_max);
      params.psi_bound = v.value("psi_bound", params.psi_bound);
      params.target_radius = v.value("target_radius", params.target_radius);
      params.tighten_margin = v.value("tighten_margin", params.tighten_margin);
      if (v.contains("domain")) {
        params.domain_pos = v["domain"].value("pos", params.domain_pos);
        params.domain_v_lo = v["domain"].value("v_lo", params.domain_v_lo);
        params.domain_v_hi = v["domain"].value("v_hi", params.domain_v_hi);
      }
      if (v.contains("obstacles")) {
        params.obstacles.clear();
        for (const auto& o : v["obstacles"])
          params.obstacles.push_back({o.at("cx").get<double>(),
                                      o.at("cy").get<double>(),
                                      o.at("r").get<double>()});
      }
    }
    plant.vehicle = params;
    plant.is_vehicle = true;
    std::tie(plant.system, plant.constraints) = make_vehicle(params);
    return plant;
  }
  throw std::invalid_argument("unknown system: " + name +
                              " (expected dint or vehicle)");
}

TrainConfig train_config_from(const json& config, const char* key,
                              uint64_t seed) {
  TrainConfig cfg;
  cfg.seed = seed;
  if (!config.contains(key)) return cfg;
  const json& t = config[key];
  cfg.learning_rate = t.value("lr", cfg.learning_rate);
  cfg.momentum = t.value("momentum", cfg.momentum);
  cfg.lr_decay = t.value("lr_decay", cfg.lr_decay);
  cfg.batch_size = t.value("batch", cfg.batch_size);
  cfg.epochs = t.value("epochs", cfg.epochs);
  return cfg;
}

std::vector<int> hidden_from(const json& config, const char* key,
                             std::vector<int> fallback) {
  if (config.contains(key)) return config[key].get<std::vector<int>>();
  return fallback;
}

Policy reference_policy(const std::string& name, const Plant& plant) {
  if (name == "zero") {
    const int nu = plant.system.input_dim;
    return [nu](const VectorXd&) { return VectorXd(VectorXd::Zero(nu)); };
  }
  if (name == "lqr") {
    return [](const VectorXd& x) {
      return VectorXd(
          VectorXd::Constant(1, std::clamp(-1.2 * x(0) - 1.8 * x(1), -1.0, 1.0)));
    };
  }
  if (name == "apf" || name == "apf-unsafe") {
    if (!plant.is_vehicle)
      throw std::invalid_argument("apf references exist for the vehicle only");
    ApfConfig cfg;
    if (name == "apf-unsafe") cfg.repulse_gain = 0.0;
    return apf_policy(cfg, plant.constraints, plant.vehicle.obstacles);
  }
  throw std::invalid_argument("unknown reference policy: " + name);
}

MatrixXd load_states_csv(const std::string& path, int dim) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open x0 file: " + path);
  std::vector<VectorXd> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    VectorXd x(dim);
    std::string cell;
    bool numeric = true;
    for (int k = 0; k < dim; ++k) {
      if (!std::getline(ss, cell, ',')) {
        numeric = false;
        break;
      }
      try {
        x(k) = std::stod(cell);
      } catch (...) {
        numeric = false;
        break;
      }
    }
    if (numeric) rows.push_back(x);
  }
  if (rows.empty()) throw std::invalid_argument("no states parsed from " + path);
  MatrixXd out(dim, rows.size());
  for (size_t i = 0; i < rows.size(); ++i) out.col(i) = rows[i];
  return out;
}

std::vector<int> parse_grid_shape(const std::string& text) {
  // "101x101" style
  std::vector<int> counts;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, 'x')) counts.push_back(std::stoi(cell));
  if (counts.empty()) throw std::invalid_argument("bad grid shape: " + text);
  return counts;
}

// --- subcommand bodies -----------------------------------------------------

int cmd_sample(const GlobalOptions& g, const std::string& system_name,
               int64_t n, const std::string& strategy_name,
               const std::string& expert, int n0, int horizon,
               const std::string& csv) {
  json config = load_config(g.config_path);
  Plant plant = make_plant(system_name, config);
  ensure_directory(g.out);

  if (strategy_name == "trajectory") {
    if (expert.empty())
      throw std::invalid_argument("trajectory sampling needs --expert");
    Policy pi = reference_policy(expert, plant);
    std::vector<int> per_axis(plant.system.input_dim,
                              plant.system.input_dim > 1 ? 5 : 5);
    MatrixXd us = sample_input_grid(plant.constraints, per_axis);
    LabeledTrajectorySet set = collect_expert_trajectories(
        plant.system, plant.constraints, pi, n0, horizon, g.seed, us);
    set.save(g.out);
    std::cout << "labeled set: " << set.safe_trajectories() << " safe / "
              << set.trajectories.size() << " trajectories, "
              << set.safe_count() << " safe states -> " << g.out << "\n";
    return kExitOk;
  }

  TransitionDataset data =
      sample_transitions(plant.system, plant.constraints, n,
                         strategy_from_string(strategy_name), g.seed);
  data.save(g.out);
  if (!csv.empty()) data.to_csv(csv);
  std::cout << "dataset: " << data.count() << " transitions -> " << g.out << "\n";
  return kExitOk;
}

int cmd_oracle(const GlobalOptions& g, const std::string& system_name,
               const std::string& grid_shape, int actions, double beta,
               double tighten, int max_iters, double tol) {
  json config = load_config(g.config_path);
  Plant plant = make_plant(system_name, config);
  if (tighten >= 0.0)
    plant.constraints = plant.constraints.with_tighten_margin(tighten);
  ensure_directory(g.out);

  GridSpec grid = GridSpec::over_domain(plant.constraints,
                                        parse_grid_shape(grid_shape));
  std::vector<int> action_counts(plant.system.input_dim, actions);
  MatrixXd action_grid = sample_input_grid(plant.constraints, action_counts);
  GridSpec action_axes{plant.constraints.input_lo, plant.constraints.input_hi,
                       action_counts};

  ReachabilityResult r = solve_reachability(plant.system, plant.constraints,
                                            grid, action_grid, max_iters, tol,
                                            beta);
  r.bstar.save_binary(g.out + "/bstar.bin");
  r.bstar.save_csv(g.out + "/bstar.csv");
  GridValue q = q_from_b(r.bstar, plant.system, plant.constraints, action_axes,
                         beta);
  q.save_binary(g.out + "/qbstar.bin");
  SetIterationResult s = maximal_invariant_set(plant.system, plant.constraints,
                                               grid, action_grid);
  {
    std::vector<std::string> rows;
    for (Eigen::Index i = 0; i < grid.total(); ++i) {
      VectorXd x = grid.node_flat(i);
      std::ostringstream row;
      for (int k = 0; k < grid.dims(); ++k)
        row << (k ? "," : "") << format_double(x(k));
      row << "," << (s.member[i] ? 1 : 0);
      rows.push_back(row.str());
    }
    std::ostringstream header;
    for (int k = 0; k < grid.dims(); ++k) header << (k ? "," : "") << "x" << k;
    header << ",member";
    write_csv(g.out + "/invariant_set.csv", header.str(), rows);
  }

  json summary;
  summary["iterations"] = r.iterations;
  summary["converged"] = r.converged;
  summary["final_change"] = r.final_change;
  summary["clamp_events"] = r.clamp_events;
  summary["set_iterations"] = s.iterations;
  summary["set_members"] = s.member_count();
  summary["beta"] = beta;
  std::ofstream(g.out + "/oracle.json") << summary.dump(2) << "\n";
  std::cout << "oracle: " << (r.converged ? "converged" : "NOT converged")
            << " in " << r.iterations << " sweeps, invariant nodes "
            << s.member_count() << " -> " << g.out << "\n";
  return r.converged ? kExitOk : kExitInfeasible;
}

int cmd_train_sacbf(const GlobalOptions& g, const std::string& method,
                    const std::string& data_dir, const std::string& system_name,
                    const std::string& cbf_path, double beta_b, double beta,
                    double rho) {
  json config = load_config(g.config_path);
  Plant plant = make_plant(system_name, config);
  ensure_directory(g.out);

  if (method == "expert") {
    LabeledTrajectorySet labeled = LabeledTrajectorySet::load(data_dir);
    ExpertLearnConfig cfg;
    cfg.beta = beta;
    cfg.lambda_b = config.value("lambda_b", cfg.lambda_b);
    cfg.lambda_c = config.value("lambda_c", cfg.lambda_c);
    cfg.lambda_d = config.value("lambda_d", cfg.lambda_d);
    cfg.qb_hidden = hidden_from(config, "qb_hidden", cfg.qb_hidden);
    cfg.q_hidden = hidden_from(config, "q_hidden", cfg.q_hidden);
    cfg.fit = train_config_from(config, "train", g.seed);
    SacbfBundle bundle = learn_expert(labeled, cfg);
    bundle.save(g.out);
    std::cout << "expert bundle: epsilon " << bundle.epsilon << ", kappa "
              << bundle.kappa << ", safe level " << bundle.safe_level << " -> "
              << g.out << "\n";
    return kExitOk;
  }

  TransitionDataset data = TransitionDataset::load(data_dir);
  if (method == "sl") {
    if (cbf_path.empty())
      throw std::invalid_argument("sl method needs --cbf <grid file>");
    GridValue cbf_grid = GridValue::load_binary(cbf_path);
    auto cbf = [grid = std::move(cbf_grid)](const VectorXd& x) {
      return grid.interpolate(x);
    };
    SlLearnConfig cfg;
    cfg.hidden = hidden_from(config, "hidden", cfg.hidden);
    cfg.fit = train_config_from(config, "train", g.seed);
    std::vector<int> per_axis(plant.system.input_dim,
                              config.value("action_points", 11));
    cfg.action_grid = sample_input_grid(plant.constraints, per_axis);
    SacbfBundle bundle = learn_sl(cbf, beta_b, data, plant.constraints, cfg);
    bundle.save(g.out);
    std::cout << "sl bundle: epsilon " << bundle.epsilon << ", kappa "
              << bundle.kappa << " -> " << g.out << "\n";
    return kExitOk;
  }
  if (method == "rl") {
    RlLearnConfig cfg;
    cfg.rho = rho;
    cfg.hidden = hidden_from(config, "hidden", cfg.hidden);
    cfg.fit = train_config_from(config, "train", g.seed);
    cfg.epochs = config.value("epochs", cfg.epochs);
    cfg.target_refresh = config.value("target_refresh", cfg.target_refresh);
    std::vector<int> per_axis(plant.system.input_dim,
                              config.value("action_points", 5));
    cfg.action_grid = sample_input_grid(plant.constraints, per_axis);
    SacbfBundle bundle = learn_rl(data, plant.constraints, cfg);
    bundle.save(g.out);
    std::cout << "rl bundle trained on " << data.count() << " transitions -> "
              << g.out << "\n";
    return kExitOk;
  }
  throw std::invalid_argument("unknown method: " + method);
}

int cmd_verify_essf(const GlobalOptions& g, const std::string& bundle_dir,
                    const std::string& data_dir, const std::string& system_name,
                    const std::string& cbf_path, double p, double delta,
                    const std::string& report_path, Eigen::Index audit_n) {
  json config = load_config(g.config_path);
  Plant plant = make_plant(system_name, config);
  SacbfBundle bundle = SacbfBundle::load(bundle_dir);

  json out;
  if (bundle.method == SacbfMethod::Rl) {
    // no margin formulas exist for the rl method; the sampled audit is the
    // only check offered
    TransitionDataset data = TransitionDataset::load(data_dir);
    const Eigen::Index n = std::min(audit_n, data.count());
    AuditReport audit =
        audit_definition2(bundle, plant.system, plant.constraints,
                          data.x.leftCols(n), bundle.action_grid);
    out["method"] = "rl";
    out["audit"] = {{"samples", audit.samples},
                    {"members", audit.members},
                    {"violations_state", audit.violations_state},
                    {"violations_existence", audit.violations_existence},
                    {"violations_successor", audit.violations_successor},
                    {"violation_rate", audit.violation_rate()},
                    {"safe_set_empty", audit.safe_set_empty}};
    out["hoeffding_required"] = hoeffding_samples(p, delta);
    std::ofstream(report_path) << out.dump(2) << "\n";
    std::cout << "rl audit: members " << audit.members << ", violation rate "
              << audit.violation_rate() << " -> " << report_path << "\n";
    return kExitOk;
  }

  EssfReport report;
  if (bundle.method == SacbfMethod::Sl) {
    if (cbf_path.empty())
      throw std::invalid_argument("sl verification needs --cbf <grid file>");
    GridValue cbf_grid = GridValue::load_binary(cbf_path);
    auto cbf = [grid = std::move(cbf_grid)](const VectorXd& x) {
      return grid.interpolate(x);
    };
    TransitionDataset data = TransitionDataset::load(data_dir);
    report = certify_sl(bundle, cbf, data, plant.constraints, p, delta);
  } else {
    LabeledTrajectorySet labeled = LabeledTrajectorySet::load(data_dir);
    report = certify_expert(bundle, labeled, plant.constraints, p, delta);
  }
  report.save_json(report_path);
  std::cout << "essf: epsilon " << report.epsilon << ", kappa " << report.kappa
            << ", margin " << report.tighten_margin << ", certified "
            << (report.certified ? "yes" : "no");
  if (!report.certified) std::cout << " (" << report.refusal_reason << ")";
  std::cout << " -> " << report_path << "\n";
  return kExitOk;
}

int cmd_train_cfqi(const GlobalOptions& g, const std::string& bundle_dir,
                   const std::string& data_dir, const std::string& system_name,
                   double gamma, int k, double stop_tol) {
  json config = load_config(g.config_path);
  Plant plant = make_plant(system_name, config);
  SacbfBundle bundle = SacbfBundle::load(bundle_dir);
  TransitionDataset raw = TransitionDataset::load(data_dir);
  TransitionDataset data = filter_to_safe(raw, bundle);
  if (data.count() < 1)
    throw std::invalid_argument(
        "no transition passes the bundle safe-set test; check the bundle");
  ensure_directory(g.out);

  const double r2 = plant.is_vehicle
                        ? plant.vehicle.target_radius * plant.vehicle.target_radius
                        : 0.01;
  const int pos_dims = plant.is_vehicle ? 2 : 1;
  CfqiConfig cfg;
  cfg.gamma = gamma;
  cfg.stage_cost = [r2, pos_dims](const VectorXd& x, const VectorXd&) {
    return std::max(0.0, x.head(pos_dims).squaredNorm() - r2);
  };
  cfg.max_updates = k;
  cfg.stop_tol = stop_tol;
  cfg.action_grid = bundle.action_grid;
  cfg.seed = g.seed;

  std::vector<int> widths{plant.system.state_dim + plant.system.input_dim};
  std::vector<int> hidden = hidden_from(config, "hidden", {32, 32});
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(1);
  TrainConfig fit_cfg = train_config_from(config, "train", g.seed);
  MlpQFunction init(MlpModel(widths, g.seed, "theta"), fit_cfg);

  CfqiResult result = run_cfqi(data, bundle, init, cfg);
  auto* q = dynamic_cast<MlpQFunction*>(result.q.get());
  q->model().save(g.out + "/qtheta.mlp");

  json summary;
  summary["iterations"] = result.iterations;
  summary["converged"] = result.converged;
  summary["fallback_count"] = result.fallback_count;
  summary["residual_history"] = result.residual_history;
  summary["training_triples"] = data.count();
  summary["dropped_triples"] = raw.count() - data.count();
  std::ofstream(g.out + "/cfqi.json") << summary.dump(2) << "\n";
  std::cout << "cfqi: " << result.iterations << " iterations, "
            << (result.converged ? "converged" : "hit the update cap") << " -> "
            << g.out << "\n";
  return kExitOk;
}

int cmd_baseline(const GlobalOptions& g, const std::string& kind,
                 const std::string& system_name, const std::string& data_dir,
                 int horizon, int sequences) {
  json config = load_config(g.config_path);
  Plant plant = make_plant(system_name, config);
  ensure_directory(g.out);

  if (kind == "apf" || kind == "apf-unsafe") {
    // export the policy response over a position slice for inspection
    Policy pi = reference_policy(kind, plant);
    std::vector<std::string> rows;
    for (int i = 0; i < 41; ++i)
      for (int j = 0; j < 41; ++j) {
        VectorXd x(4);
        x << -3.0 + 6.0 * i / 40, -3.0 + 6.0 * j / 40, 0.5, 0.0;
        VectorXd u = pi(x);
        std::ostringstream row;
        row << format_double(x(0)) << "," << format_double(x(1)) << ","
            << format_double(u(0)) << "," << format_double(u(1));
        rows.push_back(row.str());
      }
    write_csv(g.out + "/" + kind + "_field.csv", "px,py,a,delta", rows);
    std::cout << kind << " response field -> " << g.out << "\n";
    return kExitOk;
  }

  if (kind == "indirect") {
    if (data_dir.empty())
      throw std::invalid_argument("indirect baseline needs --data");
    TransitionDataset data = TransitionDataset::load(data_dir);
    IdentifyConfig id_cfg;
    id_cfg.hidden = hidden_from(config, "identify_hidden", {32, 32});
    id_cfg.fit = train_config_from(config, "identify_train", g.seed);
    IdentifiedModel model = identify_model(data, id_cfg);

    IndirectConfig cfg;
    cfg.horizon = horizon;
    cfg.shooting_sequences = sequences;
    cfg.cbf_hidden = hidden_from(config, "cbf_hidden", {32, 32});
    cfg.fit = train_config_from(config, "cbf_train", g.seed);
    cfg.max_target_states = config.value("max_target_states",
                                         cfg.max_target_states);
    IndirectFilter filter = build_indirect_filter(model, data,
                                                  plant.constraints, cfg);
    filter.identified.model.save(g.out + "/identified.mlp");
    filter.cbf.save(g.out + "/cbf.mlp");
    json meta;
    meta["holdout_mse"] = model.holdout_mse;
    meta["horizon"] = horizon;
    meta["beta_b"] = cfg.beta_b;
    std::ofstream(g.out + "/indirect.json") << meta.dump(2) << "\n";
    std::cout << "indirect pipeline: identification mse " << model.holdout_mse
              << " -> " << g.out << "\n";
    return kExitOk;
  }
  throw std::invalid_argument("unknown baseline: " + kind);
}

IndirectFilter load_indirect(const std::string& dir) {
  IndirectFilter filter;
  filter.identified.model = MlpModel::load(dir + "/identified.mlp");
  filter.cbf = MlpModel::load(dir + "/cbf.mlp");
  std::ifstream in(dir + "/indirect.json");
  if (in) {
    json meta;
    in >> meta;
    filter.beta_b = meta.value("beta_b", 1.0);
    filter.identified.holdout_mse = meta.value("holdout_mse", 0.0);
  }
  return filter;
}

int cmd_rollout(const GlobalOptions& g, const std::string& bundle_dir,
                const std::string& objective_name,
                const std::string& reference_name,
                const std::string& qtheta_path, const std::string& system_name,
                const std::string& x0_file, int steps) {
  json config = load_config(g.config_path);
  Plant plant = make_plant(system_name, config);
  SacbfBundle bundle = SacbfBundle::load(bundle_dir);
  ensure_directory(g.out);

  FilterObjective objective;
  if (objective_name == "distance") {
    objective = FilterObjective::distance_to(
        reference_policy(reference_name, plant));
  } else if (objective_name == "greedy") {
    if (qtheta_path.empty())
      throw std::invalid_argument("greedy objective needs --qtheta");
    objective = FilterObjective::learned_q(MlpModel::load(qtheta_path));
  } else {
    throw std::invalid_argument("unknown objective: " + objective_name);
  }

  MatrixXd x0s = load_states_csv(x0_file, plant.system.state_dim);
  FilterConfig fcfg = FilterConfig::for_constraints(plant.constraints);
  int64_t events = 0, infeasible_dominated = 0;
  for (Eigen::Index i = 0; i < x0s.cols(); ++i) {
    FilterPolicy pol = make_policy(bundle, objective, fcfg);
    Trajectory traj = rollout(plant.system, plant.constraints, pol.as_policy(),
                              x0s.col(i), steps);
    write_trajectory_csv(g.out + "/traj_" + std::to_string(i) + ".csv", traj,
                         plant.constraints);
    events += pol.stats()->infeasible_events;
    if (pol.stats()->infeasible_events > 0) ++infeasible_dominated;
  }
  std::cout << "rollout: " << x0s.cols() << " trajectories, " << events
            << " infeasibility events -> " << g.out << "\n";
  return 2 * infeasible_dominated > x0s.cols() ? kExitInfeasible : kExitOk;
}

int cmd_evaluate(const GlobalOptions& g, const std::string& system_name,
                 const std::vector<std::string>& policy_specs,
                 const std::string& x0_file, int x0_count, int steps) {
  json config = load_config(g.config_path);
  Plant plant = make_plant(system_name, config);
  ensure_directory(g.out);

  // policy spec forms: apf | apf-unsafe | lqr | zero |
  //   3dsf:<bundle>[:<reference>] | greedy:<bundle>:<qtheta.mlp> |
  //   indirect:<dir>[:<reference>]
  std::vector<PolicyUnderTest> policies;
  std::optional<SacbfBundle> first_bundle;
  std::vector<std::shared_ptr<FilterPolicy>> keep_alive;
  for (const auto& spec : policy_specs) {
    std::vector<std::string> parts;
    std::stringstream ss(spec);
    std::string cell;
    while (std::getline(ss, cell, ':')) parts.push_back(cell);
    const std::string& kind = parts[0];
    if (kind == "3dsf" || kind == "greedy") {
      if (parts.size() < 2)
        throw std::invalid_argument(spec + ": needs a bundle directory");
      SacbfBundle bundle = SacbfBundle::load(parts[1]);
      if (!first_bundle) first_bundle = bundle;
      FilterObjective objective;
      if (kind == "greedy") {
        if (parts.size() < 3)
          throw std::invalid_argument(spec + ": needs a qtheta model path");
        objective = FilterObjective::learned_q(MlpModel::load(parts[2]));
      } else {
        const std::string ref = parts.size() > 2 ? parts[2] : "apf-unsafe";
        objective = FilterObjective::distance_to(reference_policy(ref, plant));
      }
      auto pol = std::make_shared<FilterPolicy>(
          bundle, objective, FilterConfig::for_constraints(plant.constraints));
      keep_alive.push_back(pol);
      policies.push_back({spec, [pol](const VectorXd& x) { return (*pol)(x); },
                          pol->stats()});
    } else if (kind == "indirect") {
      if (parts.size() < 2)
        throw std::invalid_argument(spec + ": needs the artifact directory");
      IndirectFilter filter = load_indirect(parts[1]);
      const std::string ref = parts.size() > 2 ? parts[2] : "apf-unsafe";
      auto pol = std::make_shared<FilterPolicy>(filter.make_policy(
          FilterObjective::distance_to(reference_policy(ref, plant)),
          FilterConfig::for_constraints(plant.constraints)));
      keep_alive.push_back(pol);
      policies.push_back({spec, [pol](const VectorXd& x) { return (*pol)(x); },
                          pol->stats()});
    } else {
      policies.push_back({spec, reference_policy(kind, plant), nullptr});
    }
  }
  if (policies.empty()) throw std::invalid_argument("no policies given");

  MatrixXd x0s;
  if (!x0_file.empty()) {
    x0s = load_states_csv(x0_file, plant.system.state_dim);
  } else {
    // sample initial states; restrict to the first bundle's learned safe
    // set when a filter policy is present
    Rng rng(g.seed);
    x0s.resize(plant.system.state_dim, x0_count);
    Eigen::Index got = 0;
    int64_t tried = 0;
    while (got < x0_count && tried < 1000000) {
      ++tried;
      VectorXd x = rng.uniform_vector(plant.constraints.domain_lo,
                                      plant.constraints.domain_hi);
      if (first_bundle && !first_bundle->safe_set_test(x)) continue;
      x0s.col(got++) = x;
    }
    if (got < x0_count)
      throw std::invalid_argument(
          "could not sample enough initial states in the learned safe set");
  }

  const int pos_dims = plant.is_vehicle ? 2 : 1;
  EvalReport report = evaluate(policies, plant.system, plant.constraints, x0s,
                               steps, g.seed, position_cost(pos_dims),
                               config.dump());
  report.save_json(g.out + "/eval.json");
  report.save_csv(g.out + "/eval.csv");
  int64_t worst_events = 0;
  for (const auto& row : report.rows) {
    std::cout << row.policy << ": safety " << row.safety_rate << "%, cost "
              << row.total_cost << ", cpu " << row.mean_cpu_ms << " ms, events "
              << row.infeasibility_events << "\n";
    worst_events = std::max(worst_events, row.infeasibility_events);
  }
  std::cout << "-> " << g.out << "/eval.json\n";
  // infeasibility-dominated: more events than half the rollout steps
  return worst_events > static_cast<int64_t>(x0s.cols()) * steps / 2
             ? kExitInfeasible
             : kExitOk;
}

int cmd_plot_data(const GlobalOptions& g,
                  const std::vector<std::string>& bundle_dirs,
                  const std::string& system_name, double v_slice,
                  double psi_slice, int per_axis) {
  json config = load_config(g.config_path);
  Plant plant = make_plant(system_name, config);
  if (bundle_dirs.empty()) {
    std::cerr << "plot-data: no artifacts given, nothing to export\n";
    return kExitConfig;
  }
  ensure_directory(g.out);

  std::vector<BetaSweepRow> sweep;
  for (size_t bi = 0; bi < bundle_dirs.size(); ++bi) {
    SacbfBundle bundle = SacbfBundle::load(bundle_dirs[bi]);
    VectorXd pinned = VectorXd::Zero(plant.system.state_dim);
    int dim_a = 0, dim_b = 1;
    if (plant.is_vehicle) {
      pinned(2) = v_slice;
      pinned(3) = psi_slice;
    }
    const std::string tag = "_" + std::to_string(bi);
    export_levelset_slice(
        [&bundle](const VectorXd& x) { return bundle.qb_min_over_grid(x); },
        pinned, dim_a, dim_b, plant.constraints.domain_lo,
        plant.constraints.domain_hi, per_axis,
        g.out + "/qb_min_slice" + tag + ".csv");
    if (bundle.qfun)
      export_levelset_slice(bundle.qfun, pinned, dim_a, dim_b,
                            plant.constraints.domain_lo,
                            plant.constraints.domain_hi, per_axis,
                            g.out + "/qfun_slice" + tag + ".csv");

    BetaSweepRow row;
    row.beta = bundle.beta;
    row.epsilon = bundle.epsilon;
    row.safe_level = bundle.safe_level;
    VectorXd x = pinned;
    for (int i = 0; i < per_axis; ++i) {
      x(dim_a) = plant.constraints.domain_lo(dim_a) +
                 (plant.constraints.domain_hi(dim_a) -
                  plant.constraints.domain_lo(dim_a)) *
                     i / (per_axis - 1);
      for (int j = 0; j < per_axis; ++j) {
        x(dim_b) = plant.constraints.domain_lo(dim_b) +
                   (plant.constraints.domain_hi(dim_b) -
                    plant.constraints.domain_lo(dim_b)) *
                       j / (per_axis - 1);
        ++row.slice_nodes;
        if (bundle.safe_set_test(x)) ++row.safe_nodes;
      }
    }
    const double cell_a = (plant.constraints.domain_hi(dim_a) -
                           plant.constraints.domain_lo(dim_a)) /
                          (per_axis - 1);
    const double cell_b = (plant.constraints.domain_hi(dim_b) -
                           plant.constraints.domain_lo(dim_b)) /
                          (per_axis - 1);
    row.safe_area = row.safe_nodes * cell_a * cell_b;
    sweep.push_back(row);
  }
  export_beta_sweep(sweep, g.out + "/beta_sweep.csv");
  std::cout << "plot data for " << bundle_dirs.size() << " bundle(s) -> "
            << g.out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sacbf-lab: data-driven safety filter toolkit"};
  app.require_subcommand(1);

  GlobalOptions g;
  app.add_option("--config", g.config_path, "JSON configuration file");
  app.add_option("--seed", g.seed, "run seed");
  app.add_option("--out", g.out, "output directory");

  // sample
  auto* sample = app.add_subcommand("sample", "generate transition or expert data");
  std::string s_system = "dint", s_strategy = "uniform", s_expert, s_csv;
  int64_t s_n = 10000;
  int s_n0 = 1000, s_t = 200;
  sample->add_option("--system", s_system, "dint or vehicle");
  sample->add_option("--n", s_n, "transition count");
  sample->add_option("--strategy", s_strategy, "uniform, grid or trajectory");
  sample->add_option("--expert", s_expert, "expert for trajectory sampling");
  sample->add_option("--n0", s_n0, "initial states for trajectory sampling");
  sample->add_option("--t", s_t, "trajectory horizon");
  sample->add_option("--csv", s_csv, "also export transitions as csv");

  // oracle
  auto* oracle = app.add_subcommand("oracle", "grid reachability oracle");
  std::string o_system = "dint", o_grid = "101x101";
  int o_actions = 21, o_iters = 5000;
  double o_beta = 1.0, o_tighten = -1.0, o_tol = 1e-9;
  oracle->add_option("--system", o_system, "plant (state dim <= 3)");
  oracle->add_option("--grid", o_grid, "nodes per axis, e.g. 101x101");
  oracle->add_option("--actions", o_actions, "action lattice points per axis");
  oracle->add_option("--beta", o_beta, "decrease parameter in (0, 1]");
  oracle->add_option("--tighten", o_tighten, "override tighten margin (>= 0)");
  oracle->add_option("--max-iters", o_iters, "sweep cap");
  oracle->add_option("--tol", o_tol, "sup-norm stopping tolerance");

  // train-sacbf
  auto* train = app.add_subcommand("train-sacbf", "learn a state-action barrier");
  std::string t_method = "rl", t_data, t_system = "dint", t_cbf;
  double t_beta_b = 0.9, t_beta = 0.1, t_rho = 1e-3;
  train->add_option("--method", t_method, "sl, expert or rl");
  train->add_option("--data", t_data, "dataset directory")->required();
  train->add_option("--system", t_system, "plant name");
  train->add_option("--cbf", t_cbf, "known barrier grid (sl method)");
  train->add_option("--beta-b", t_beta_b, "sl decrease parameter in (0,1)");
  train->add_option("--beta", t_beta, "expert decrease parameter in [0,1)");
  train->add_option("--rho", t_rho, "rl value-minimization weight");

  // verify-essf
  auto* verify = app.add_subcommand("verify-essf", "error-to-state-safety report");
  std::string v_bundle, v_data, v_system = "dint", v_cbf, v_report = "report.json";
  double v_p = 0.01, v_delta = 0.01;
  Eigen::Index v_audit = 20000;
  verify->add_option("--bundle", v_bundle, "bundle directory")->required();
  verify->add_option("--data", v_data, "held-out data directory")->required();
  verify->add_option("--system", v_system, "plant name");
  verify->add_option("--cbf", v_cbf, "known barrier grid (sl bundles)");
  verify->add_option("--p", v_p, "violation-rate bound");
  verify->add_option("--delta", v_delta, "one minus confidence");
  verify->add_option("--report", v_report, "report path");
  verify->add_option("--audit-samples", v_audit, "audit sample cap (rl)");

  // train-cfqi
  auto* cfqi = app.add_subcommand("train-cfqi", "constrained fitted-Q iteration");
  std::string c_bundle, c_data, c_system = "dint";
  double c_gamma = 0.99, c_tol = 1e-4;
  int c_k = 50;
  cfqi->add_option("--bundle", c_bundle, "bundle directory")->required();
  cfqi->add_option("--data", c_data, "dataset directory")->required();
  cfqi->add_option("--system", c_system, "plant name");
  cfqi->add_option("--gamma", c_gamma, "discount in (0,1)");
  cfqi->add_option("--k", c_k, "update cap");
  cfqi->add_option("--stop-tol", c_tol, "audit-set stopping tolerance");

  // baseline
  auto* baseline = app.add_subcommand("baseline", "reference policies and the indirect pipeline");
  std::string b_kind = "apf", b_system = "vehicle", b_data;
  int b_horizon = 20, b_sequences = 256;
  baseline->add_option("kind", b_kind, "apf, apf-unsafe or indirect")->required();
  baseline->add_option("--system", b_system, "plant name");
  baseline->add_option("--data", b_data, "dataset for the indirect pipeline");
  baseline->add_option("--horizon", b_horizon, "truncated reachability horizon");
  baseline->add_option("--sequences", b_sequences, "shooting profiles per state");

  // rollout
  auto* roll = app.add_subcommand("rollout", "closed-loop runs of a filtered policy");
  std::string r_bundle, r_objective = "distance", r_reference = "apf-unsafe";
  std::string r_qtheta, r_system = "vehicle", r_x0;
  int r_steps = 1000;
  roll->add_option("--bundle", r_bundle, "bundle directory")->required();
  roll->add_option("--objective", r_objective, "distance or greedy");
  roll->add_option("--reference", r_reference, "reference policy (distance)");
  roll->add_option("--qtheta", r_qtheta, "learned value model (greedy)");
  roll->add_option("--system", r_system, "plant name");
  roll->add_option("--x0-file", r_x0, "csv of initial states")->required();
  roll->add_option("--steps", r_steps, "rollout length");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "safety/cost/time comparison");
  std::string e_system = "vehicle", e_x0;
  std::vector<std::string> e_policies;
  int e_steps = 400, e_count = 100;
  eval->add_option("--system", e_system, "plant name");
  eval->add_option("--policies", e_policies,
                   "policy specs, e.g. apf-unsafe 3dsf:bundle/")
      ->required();
  eval->add_option("--x0-file", e_x0, "csv of initial states");
  eval->add_option("--x0-count", e_count, "sampled initial states");
  eval->add_option("--steps", e_steps, "rollout length");

  // plot-data
  auto* plot = app.add_subcommand("plot-data", "level-set slices and sweep tables");
  std::vector<std::string> p_bundles;
  std::string p_system = "vehicle";
  double p_v = 0.5, p_psi = 0.0;
  int p_axis = 61;
  plot->add_option("--bundle", p_bundles, "bundle directories");
  plot->add_option("--system", p_system, "plant name");
  plot->add_option("--v", p_v, "speed slice coordinate");
  plot->add_option("--psi", p_psi, "heading slice coordinate");
  plot->add_option("--per-axis", p_axis, "slice resolution");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (sample->parsed())
      return cmd_sample(g, s_system, s_n, s_strategy, s_expert, s_n0, s_t, s_csv);
    if (oracle->parsed())
      return cmd_oracle(g, o_system, o_grid, o_actions, o_beta, o_tighten,
                        o_iters, o_tol);
    if (train->parsed())
      return cmd_train_sacbf(g, t_method, t_data, t_system, t_cbf, t_beta_b,
                             t_beta, t_rho);
    if (verify->parsed())
      return cmd_verify_essf(g, v_bundle, v_data, v_system, v_cbf, v_p, v_delta,
                             v_report, v_audit);
    if (cfqi->parsed())
      return cmd_train_cfqi(g, c_bundle, c_data, c_system, c_gamma, c_k, c_tol);
    if (baseline->parsed())
      return cmd_baseline(g, b_kind, b_system, b_data, b_horizon, b_sequences);
    if (roll->parsed())
      return cmd_rollout(g, r_bundle, r_objective, r_reference, r_qtheta,
                         r_system, r_x0, r_steps);
    if (eval->parsed())
      return cmd_evaluate(g, e_system, e_policies, e_x0, e_count, e_steps);
    if (plot->parsed())
      return cmd_plot_data(g, p_bundles, p_system, p_v, p_psi, p_axis);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
