#include "sacbf/grid_oracle.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sacbf {

Eigen::Index GridSpec::total() const {
  Eigen::Index t = 1;
  for (int c : counts) t *= c;
  return t;
}

VectorXd GridSpec::node(const std::vector<int>& idx) const {
  VectorXd x(dims());
  for (int k = 0; k < dims(); ++k)
    x(k) = counts[k] == 1 ? lo(k) : lo(k) + spacing(k) * idx[k];
  return x;
}

std::vector<int> GridSpec::unflatten(Eigen::Index flat) const {
  std::vector<int> idx(dims());
  for (int k = dims() - 1; k >= 0; --k) {
    idx[k] = static_cast<int>(flat % counts[k]);
    flat /= counts[k];
  }
  return idx;
}

Eigen::Index GridSpec::flatten(const std::vector<int>& idx) const {
  Eigen::Index flat = 0;
  for (int k = 0; k < dims(); ++k) flat = flat * counts[k] + idx[k];
  return flat;
}

VectorXd GridSpec::node_flat(Eigen::Index flat) const { return node(unflatten(flat)); }

bool GridSpec::contains(const VectorXd& x) const {
  for (int k = 0; k < dims(); ++k)
    if (x(k) < lo(k) || x(k) > hi(k)) return false;
  return true;
}

GridSpec GridSpec::over_domain(const ConstraintSpec& constraints,
                               const std::vector<int>& counts) {
  GridSpec g;
  g.lo = constraints.domain_lo;
  g.hi = constraints.domain_hi;
  g.counts = counts;
  if (g.dims() != constraints.domain_lo.size())
    throw std::invalid_argument("GridSpec::over_domain: counts/domain mismatch");
  return g;
}

MatrixXd GridSpec::enumerate() const {
  MatrixXd nodes(dims(), total());
  std::vector<int> idx(dims(), 0);
  for (Eigen::Index i = 0; i < total(); ++i) {
    nodes.col(i) = node(idx);
    for (int k = dims() - 1; k >= 0; --k) {
      if (++idx[k] < counts[k]) break;
      idx[k] = 0;
    }
  }
  return nodes;
}

namespace {

// cell base index + normalized offsets for a (clamped) query point
struct CellStencil {
  std::vector<Eigen::Index> corners;  // 2^d flat indices
  std::vector<double> weights;        // matching multilinear weights
};

CellStencil build_stencil(const GridSpec& g, const VectorXd& x_raw) {
  const int d = g.dims();
  std::vector<int> base(d);
  std::vector<double> frac(d);
  for (int k = 0; k < d; ++k) {
    double x = std::min(std::max(x_raw(k), g.lo(k)), g.hi(k));
    if (g.counts[k] == 1) {
      base[k] = 0;
      frac[k] = 0.0;
      continue;
    }
    double t = (x - g.lo(k)) / g.spacing(k);
    int i = static_cast<int>(std::floor(t));
    i = std::min(std::max(i, 0), g.counts[k] - 2);
    base[k] = i;
    frac[k] = t - i;
  }
  const int ncorners = 1 << d;
  CellStencil s;
  s.corners.resize(ncorners);
  s.weights.resize(ncorners);
  std::vector<int> idx(d);
  for (int c = 0; c < ncorners; ++c) {
    double w = 1.0;
    for (int k = 0; k < d; ++k) {
      const int bit = (c >> k) & 1;
      idx[k] = base[k] + bit;
      if (idx[k] >= g.counts[k]) idx[k] = g.counts[k] - 1;
      w *= bit ? frac[k] : 1.0 - frac[k];
    }
    s.corners[c] = g.flatten(idx);
    s.weights[c] = w;
  }
  return s;
}

double apply_stencil(const CellStencil& s, const VectorXd& values) {
  double v = 0.0;
  for (size_t c = 0; c < s.corners.size(); ++c)
    v += s.weights[c] * values(s.corners[c]);
  return v;
}

}  // namespace

double GridValue::interpolate(const VectorXd& x) const {
  return apply_stencil(build_stencil(grid, x), values);
}

void GridValue::save_csv(const std::string& path) const {
  std::ostringstream header;
  for (int k = 0; k < grid.dims(); ++k) header << (k ? "," : "") << "x" << k;
  header << ",value";
  std::vector<std::string> rows;
  rows.reserve(grid.total());
  std::vector<int> idx(grid.dims(), 0);
  for (Eigen::Index i = 0; i < grid.total(); ++i) {
    VectorXd x = grid.node(idx);
    std::ostringstream row;
    for (int k = 0; k < grid.dims(); ++k)
      row << (k ? "," : "") << format_double(x(k));
    row << "," << format_double(values(i));
    rows.push_back(row.str());
    for (int k = grid.dims() - 1; k >= 0; --k) {
      if (++idx[k] < grid.counts[k]) break;
      idx[k] = 0;
    }
  }
  write_csv(path, header.str(), rows);
}

namespace {
constexpr char kGridMagic[8] = {'S', 'A', 'C', 'B', 'F', 'G', 'R', 'D'};
constexpr uint32_t kGridVersion = 1;
}  // namespace

void GridValue::save_binary(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write grid: " + path);
  out.write(kGridMagic, 8);
  uint32_t version = kGridVersion;
  uint32_t kind32 = static_cast<uint32_t>(kind);
  uint32_t d = static_cast<uint32_t>(grid.dims());
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&kind32), 4);
  out.write(reinterpret_cast<const char*>(&d), 4);
  for (int k = 0; k < grid.dims(); ++k) {
    double lo = grid.lo(k), hi = grid.hi(k);
    uint32_t c = static_cast<uint32_t>(grid.counts[k]);
    out.write(reinterpret_cast<const char*>(&lo), 8);
    out.write(reinterpret_cast<const char*>(&hi), 8);
    out.write(reinterpret_cast<const char*>(&c), 4);
  }
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!out) throw std::runtime_error("short grid write: " + path);
}

GridValue GridValue::load_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open grid: " + path);
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, kGridMagic, 8) != 0)
    throw std::runtime_error("bad grid magic: " + path);
  uint32_t version = 0, kind32 = 0, d = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&kind32), 4);
  in.read(reinterpret_cast<char*>(&d), 4);
  if (version != kGridVersion)
    throw std::runtime_error("unsupported grid version: " + path);
  GridValue g;
  g.kind = static_cast<Kind>(kind32);
  g.grid.lo.resize(d);
  g.grid.hi.resize(d);
  g.grid.counts.resize(d);
  for (uint32_t k = 0; k < d; ++k) {
    uint32_t c = 0;
    in.read(reinterpret_cast<char*>(&g.grid.lo(k)), 8);
    in.read(reinterpret_cast<char*>(&g.grid.hi(k)), 8);
    in.read(reinterpret_cast<char*>(&c), 4);
    g.grid.counts[k] = static_cast<int>(c);
  }
  g.values.resize(g.grid.total());
  in.read(reinterpret_cast<char*>(g.values.data()),
          static_cast<std::streamsize>(g.values.size() * sizeof(double)));
  if (!in) throw std::runtime_error("truncated grid file: " + path);
  return g;
}

ReachabilityResult solve_reachability(const SystemSpec& system,
                                      const ConstraintSpec& constraints,
                                      const GridSpec& grid,
                                      const MatrixXd& action_grid, int max_iters,
                                      double tol, double beta,
                                      const std::optional<VectorXd>& init) {
  if (system.state_dim > 3)
    throw std::invalid_argument(
        "solve_reachability: grid oracle is limited to state_dim <= 3");
  if (grid.dims() != system.state_dim)
    throw std::invalid_argument("solve_reachability: grid/state dim mismatch");
  if (action_grid.cols() < 1)
    throw std::invalid_argument("solve_reachability: empty action grid");
  if (beta <= 0.0 || beta > 1.0)
    throw std::invalid_argument("solve_reachability: beta must be in (0, 1]");

  const Eigen::Index n = grid.total();
  const Eigen::Index m = action_grid.cols();

  VectorXd h_node(n);
  for (Eigen::Index i = 0; i < n; ++i)
    h_node(i) = constraints.h_learning(grid.node_flat(i));

  // dynamics do not change across sweeps; successor stencils are built once
  struct Succ {
    CellStencil stencil;
    double h_floor;  // exact constraint value when the successor leaves the grid
    bool clamped;
  };
  std::vector<Succ> succ(static_cast<size_t>(n * m));
  int64_t clamp_events = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const VectorXd x = grid.node_flat(i);
    for (Eigen::Index a = 0; a < m; ++a) {
      VectorXd xn = system.step(x, action_grid.col(a));
      Succ& s = succ[i * m + a];
      s.clamped = !grid.contains(xn);
      s.h_floor = s.clamped ? constraints.h_learning(xn)
                            : -std::numeric_limits<double>::infinity();
      s.stencil = build_stencil(grid, xn);
      if (s.clamped) ++clamp_events;
    }
  }

  // cap keeps the beta < 1 iteration bounded on doomed states
  const double vcap = h_node.maxCoeff() + 1.0;
  const bool capped = beta < 1.0;

  VectorXd v = init ? *init : h_node;
  if (v.size() != n) throw std::invalid_argument("solve_reachability: bad init size");
  VectorXd v_next(n);

  ReachabilityResult result;
  result.clamp_events = clamp_events;
  double change = std::numeric_limits<double>::infinity();
  int it = 0;
  for (; it < max_iters; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index a = 0; a < m; ++a) {
        const Succ& s = succ[i * m + a];
        double val = apply_stencil(s.stencil, v);
        if (s.clamped) val = std::max(val, s.h_floor);
        if (val < best) best = val;
      }
      double updated = std::max(h_node(i), best / beta);
      if (capped) updated = std::min(updated, vcap);
      v_next(i) = updated;
    }
    change = (v_next - v).cwiseAbs().maxCoeff();
    v.swap(v_next);
    if (change <= tol) {
      ++it;
      break;
    }
  }
  result.iterations = it;
  result.final_change = change;
  result.converged = change <= tol;
  result.bstar.grid = grid;
  result.bstar.values = std::move(v);
  result.bstar.kind = GridValue::Kind::BStar;
  return result;
}

GridValue q_from_b(const GridValue& bstar, const SystemSpec& system,
                   const ConstraintSpec& constraints, const GridSpec& action_axes,
                   double beta) {
  GridValue q;
  q.kind = GridValue::Kind::QBStar;
  const int nx = bstar.grid.dims();
  const int nu = action_axes.dims();
  q.grid.lo.resize(nx + nu);
  q.grid.hi.resize(nx + nu);
  q.grid.lo << bstar.grid.lo, action_axes.lo;
  q.grid.hi << bstar.grid.hi, action_axes.hi;
  q.grid.counts = bstar.grid.counts;
  q.grid.counts.insert(q.grid.counts.end(), action_axes.counts.begin(),
                       action_axes.counts.end());
  q.values.resize(q.grid.total());

  const Eigen::Index na = action_axes.total();
  std::vector<int> xi(nx, 0);
  for (Eigen::Index i = 0; i < bstar.grid.total(); ++i) {
    const VectorXd x = bstar.grid.node(xi);
    const double hx = constraints.h_learning(x);
    std::vector<int> ai(nu, 0);
    for (Eigen::Index a = 0; a < na; ++a) {
      const VectorXd u = action_axes.node(ai);
      VectorXd xn = system.step(x, u);
      double bval = bstar.interpolate(xn);
      if (!bstar.grid.contains(xn))
        bval = std::max(bval, constraints.h_learning(xn));
      q.values(i * na + a) = std::max(hx, bval / beta);
      for (int k = nu - 1; k >= 0; --k) {
        if (++ai[k] < action_axes.counts[k]) break;
        ai[k] = 0;
      }
    }
    for (int k = nx - 1; k >= 0; --k) {
      if (++xi[k] < bstar.grid.counts[k]) break;
      xi[k] = 0;
    }
  }
  return q;
}

Eigen::Index SetIterationResult::member_count() const {
  Eigen::Index n = 0;
  for (uint8_t v : member) n += v ? 1 : 0;
  return n;
}

SetIterationResult maximal_invariant_set(const SystemSpec& system,
                                         const ConstraintSpec& constraints,
                                         const GridSpec& grid,
                                         const MatrixXd& action_grid,
                                         int max_iters) {
  const Eigen::Index n = grid.total();
  const Eigen::Index m = action_grid.cols();

  SetIterationResult result;
  result.grid = grid;
  result.member.resize(n);
  for (Eigen::Index i = 0; i < n; ++i)
    result.member[i] = constraints.h_learning(grid.node_flat(i)) <= 0.0 ? 1 : 0;

  // successor node indices, built once; -1 marks out-of-grid
  std::vector<Eigen::Index> succ(static_cast<size_t>(n * m), -1);
  std::vector<int> idx(grid.dims());
  for (Eigen::Index i = 0; i < n; ++i) {
    const VectorXd x = grid.node_flat(i);
    for (Eigen::Index a = 0; a < m; ++a) {
      VectorXd xn = system.step(x, action_grid.col(a));
      if (!grid.contains(xn)) continue;
      for (int k = 0; k < grid.dims(); ++k) {
        const double t = (xn(k) - grid.lo(k)) / grid.spacing(k);
        idx[k] = std::min(std::max(static_cast<int>(std::lround(t)), 0),
                          grid.counts[k] - 1);
      }
      succ[i * m + a] = grid.flatten(idx);
    }
  }

  int it = 0;
  for (; it < max_iters; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!result.member[i]) continue;
      bool keep = false;
      for (Eigen::Index a = 0; a < m && !keep; ++a) {
        const Eigen::Index s = succ[i * m + a];
        keep = s >= 0 && result.member[s];
      }
      if (!keep) {
        result.member[i] = 0;
        changed = true;
      }
    }
    if (!changed) break;
  }
  result.iterations = it;
  return result;
}

std::vector<uint8_t> boundary_band(const std::vector<uint8_t>& member,
                                   const GridSpec& grid, int radius) {
  const Eigen::Index n = grid.total();
  std::vector<uint8_t> band(n, 0);
  std::vector<int> idx(grid.dims()), nidx(grid.dims());
  for (Eigen::Index i = 0; i < n; ++i) {
    idx = grid.unflatten(i);
    bool differs = false;
    // scan the Chebyshev neighborhood
    std::vector<int> offs(grid.dims(), -radius);
    while (true) {
      bool inside = true;
      for (int k = 0; k < grid.dims(); ++k) {
        nidx[k] = idx[k] + offs[k];
        if (nidx[k] < 0 || nidx[k] >= grid.counts[k]) {
          inside = false;
          break;
        }
      }
      if (inside && member[grid.flatten(nidx)] != member[i]) {
        differs = true;
        break;
      }
      int k = grid.dims() - 1;
      for (; k >= 0; --k) {
        if (++offs[k] <= radius) break;
        offs[k] = -radius;
      }
      if (k < 0) break;
    }
    band[i] = differs ? 1 : 0;
  }
  return band;
}

}  // namespace sacbf
