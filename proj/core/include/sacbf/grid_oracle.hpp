#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sacbf/dynamics.hpp"

namespace sacbf {

// Regular grid, endpoints included, row-major flat order (dim 0 slowest).
struct GridSpec {
  VectorXd lo, hi;
  std::vector<int> counts;

  int dims() const { return static_cast<int>(counts.size()); }
  Eigen::Index total() const;
  double spacing(int dim) const { return (hi(dim) - lo(dim)) / (counts[dim] - 1); }
  VectorXd node(const std::vector<int>& idx) const;
  VectorXd node_flat(Eigen::Index flat) const;
  std::vector<int> unflatten(Eigen::Index flat) const;
  Eigen::Index flatten(const std::vector<int>& idx) const;
  bool contains(const VectorXd& x) const;

  static GridSpec over_domain(const ConstraintSpec& constraints,
                              const std::vector<int>& counts);
  // columns enumerate all nodes in flat order
  MatrixXd enumerate() const;
};

struct GridValue {
  enum class Kind : uint8_t { BStar = 0, QBStar = 1 };
  GridSpec grid;
  VectorXd values;
  Kind kind = Kind::BStar;

  // multilinear interpolation; queries are clamped to the grid box
  double interpolate(const VectorXd& x) const;

  void save_csv(const std::string& path) const;
  void save_binary(const std::string& path) const;
  static GridValue load_binary(const std::string& path);
};

struct ReachabilityResult {
  GridValue bstar;
  int iterations = 0;
  double final_change = 0.0;
  bool converged = false;
  // number of (node, action) pairs whose successor leaves the grid
  int64_t clamp_events = 0;
};

// Fixed-point iteration V <- max{h, (1/beta) min_a V(f(x,a))} from V0 = h.
// beta = 1 is the plain reachability value whose zero sub-level set is the
// maximal control-invariant set; beta < 1 yields a barrier certificate with
// strict decrease (values are capped above to keep the iteration bounded,
// which only distorts the already-infeasible region). Off-grid successors
// are clamped for interpolation and floored by the exact constraint value.
ReachabilityResult solve_reachability(const SystemSpec& system,
                                      const ConstraintSpec& constraints,
                                      const GridSpec& grid,
                                      const MatrixXd& action_grid,
                                      int max_iters = 5000, double tol = 1e-9,
                                      double beta = 1.0,
                                      const std::optional<VectorXd>& init = {});

// Q(x, u) = max{h(x), (1/beta) B(f(x,u))} on the product grid of `bstar.grid`
// and `action_axes`.
GridValue q_from_b(const GridValue& bstar, const SystemSpec& system,
                   const ConstraintSpec& constraints, const GridSpec& action_axes,
                   double beta = 1.0);

struct SetIterationResult {
  GridSpec grid;
  std::vector<uint8_t> member;
  int iterations = 0;

  Eigen::Index member_count() const;
};

// Backward set iteration S0 = {h <= 0}, S_{k+1} = {x in S_k : exists a with
// f(x,a) in S_k}. Successor membership is decided at the nearest grid node
// (the usual finite abstraction); successors leaving the grid count as
// outside. Independent of the value iteration above, used to cross-validate
// it.
SetIterationResult maximal_invariant_set(const SystemSpec& system,
                                         const ConstraintSpec& constraints,
                                         const GridSpec& grid,
                                         const MatrixXd& action_grid,
                                         int max_iters = 10000);

// Nodes within Chebyshev radius `radius` of a membership change.
std::vector<uint8_t> boundary_band(const std::vector<uint8_t>& member,
                                   const GridSpec& grid, int radius = 1);

}  // namespace sacbf
