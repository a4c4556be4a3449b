// Geodesic distance fields d(., z): a first-order fast-marching solver for
// ||grad d||_{g*} = 1 with simplex updates on the 8-neighborhood, and an
// exact 16-neighbor Dijkstra used as the independent oracle.
#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "distdiff/core.hpp"
#include "distdiff/grid.hpp"
#include "distdiff/manifold.hpp"

namespace distdiff {

enum class SolverTag { FastMarching, Dijkstra };

constexpr double kInfDistance = std::numeric_limits<double>::infinity();

struct DistanceField {
  Vec2 source;
  Grid2D<double> values;   // per-vertex distance; +inf where unreachable
  SolverTag solver = SolverTag::FastMarching;
  const ManifoldModel* model = nullptr;  // non-owning; model must outlive
  bool restricted_to_F = false;
  bool multi_source = false;
};

struct SolveOptions {
  bool restrict_to_F = false;  // treat M-vertices as blocked (F-side field)
};

namespace detail {

// Indexed binary min-heap with decrease-key.
class MinHeap {
 public:
  explicit MinHeap(std::size_t n) : pos_(n, kAbsent) {}

  bool empty() const { return heap_.empty(); }

  void push_or_decrease(std::size_t k, double val) {
    if (pos_[k] == kAbsent) {
      pos_[k] = heap_.size();
      heap_.push_back({val, k});
      sift_up(heap_.size() - 1);
    } else if (val < heap_[pos_[k]].first) {
      heap_[pos_[k]].first = val;
      sift_up(pos_[k]);
    }
  }

  std::pair<double, std::size_t> pop() {
    auto top = heap_.front();
    pos_[top.second] = kAbsent;
    if (heap_.size() > 1) {
      heap_.front() = heap_.back();
      pos_[heap_.front().second] = 0;
    }
    heap_.pop_back();
    if (!heap_.empty()) sift_down(0);
    return top;
  }

 private:
  static constexpr std::size_t kAbsent = std::size_t(-1);
  void sift_up(std::size_t i) {
    while (i > 0) {
      std::size_t p = (i - 1) / 2;
      if (heap_[p].first <= heap_[i].first) break;
      swap_at(i, p);
      i = p;
    }
  }
  void sift_down(std::size_t i) {
    for (;;) {
      std::size_t l = 2 * i + 1, r = 2 * i + 2, m = i;
      if (l < heap_.size() && heap_[l].first < heap_[m].first) m = l;
      if (r < heap_.size() && heap_[r].first < heap_[m].first) m = r;
      if (m == i) break;
      swap_at(i, m);
      i = m;
    }
  }
  void swap_at(std::size_t a, std::size_t b) {
    std::swap(heap_[a], heap_[b]);
    pos_[heap_[a].second] = a;
    pos_[heap_[b].second] = b;
  }
  std::vector<std::pair<double, std::size_t>> heap_;
  std::vector<std::size_t> pos_;
};

// Ring of the 8 neighbors in angular order; consecutive pairs span the
// simplexes of the update stencil.
inline const std::array<std::pair<int, int>, 8>& eight_offsets() {
  static const std::array<std::pair<int, int>, 8> k = {{{1, 0},
                                                        {1, 1},
                                                        {0, 1},
                                                        {-1, 1},
                                                        {-1, 0},
                                                        {-1, -1},
                                                        {0, -1},
                                                        {1, -1}}};
  return k;
}

inline int ring_index(int dx, int dy) {
  static const int lut[3][3] = {{5, 4, 3}, {6, -1, 2}, {7, 0, 1}};
  return lut[dx + 1][dy + 1];
}

inline const std::array<std::pair<int, int>, 16>& sixteen_offsets() {
  static const std::array<std::pair<int, int>, 16> k = {
      {{1, 0},   {0, 1},   {-1, 0},  {0, -1}, {1, 1},  {-1, 1},
       {-1, -1}, {1, -1},  {2, 1},   {1, 2},  {-1, 2}, {-2, 1},
       {-2, -1}, {-1, -2}, {1, -2},  {2, -1}}};
  return k;
}

/// Straight-segment metric length between two points, metric at the midpoint
/// (wrap-aware via the shortest displacement).
inline double segment_length(const ManifoldModel& model, const Vec2& a,
                             const Vec2& b) {
  const auto& geo = model.geometry();
  Vec2 d = geo.displacement(a, b);
  Vec2 mid = geo.canonical(a + d * 0.5);
  return norm_in(metric_at(model, mid), d);
}

// Minimize (1-l)*T1 + l*T2 + || (1-l) p1 + l p2 ||_g over l in [0,1].
// Solved in closed form with g at the accepting vertex; the length leg is
// recomputed with a midpoint metric once the minimizer is fixed.
inline double simplex_update(const ManifoldModel& model, const Vec2& at,
                             const Mat2& g_at, double t1, double t2,
                             const Vec2& p1, const Vec2& p2) {
  Vec2 u = p1, w = p2 - p1;
  double A = g_at.quad(w);
  double B = 2.0 * (g_at.a11 * u.x * w.x + g_at.a12 * (u.x * w.y + u.y * w.x) +
                    g_at.a22 * u.y * w.y);
  double C = g_at.quad(u);
  double dT = t2 - t1;

  auto value = [&](double l) {
    double len = std::sqrt(std::max(0.0, A * l * l + B * l + C));
    return (1 - l) * t1 + l * t2 + len;
  };

  double best_l = value(0.0) <= value(1.0) ? 0.0 : 1.0;
  double a = 4 * A * (A - dT * dT);
  double b = 4 * B * (A - dT * dT);
  double c = B * B - 4 * dT * dT * C;
  if (std::abs(a) > 1e-300) {
    double disc = b * b - 4 * a * c;
    if (disc >= 0) {
      double sq = std::sqrt(disc);
      for (double root : {(-b - sq) / (2 * a), (-b + sq) / (2 * a)}) {
        if (root > 0 && root < 1 && value(root) < value(best_l)) best_l = root;
      }
    }
  }
  const auto& geo = model.geometry();
  Vec2 q = u + w * best_l;
  Vec2 mid = geo.canonical(at + q * 0.5);
  double len = norm_in(metric_at(model, mid), q);
  return (1 - best_l) * t1 + best_l * t2 + len;
}

enum : std::uint8_t { kFar = 0, kTrial = 1, kFrozen = 2 };

template <typename Blocked>
void fmm_march(const ManifoldModel& model, const Blocked& blocked,
               Grid2D<double>& T, Grid2D<std::uint8_t>& state, MinHeap& heap) {
  const auto& geo = model.geometry();
  const auto& nbr = eight_offsets();
  while (!heap.empty()) {
    auto [val, k] = heap.pop();
    if (state[k] == kFrozen) continue;
    state[k] = kFrozen;
    int ci = T.ix(k), cj = T.iy(k);
    for (const auto& [di, dj] : nbr) {
      int ii = ci + di, jj = cj + dj;
      if (!geo.in_x_range(ii) || !geo.in_y_range(jj)) continue;
      int i = geo.wrap_x(ii), j = geo.wrap_y(jj);
      if (blocked(i, j)) continue;
      std::size_t t = T.idx(i, j);
      if (state[t] == kFrozen) continue;
      Vec2 vp = geo.vertex(i, j);
      Mat2 g_here = model.metric().at_vertex(i, j);

      // Only simplexes containing the newly frozen vertex can improve.
      int m_u = ring_index(-di, -dj);  // offset of k as seen from the target
      auto probe = [&](int idx, double& tval, Vec2& off) {
        idx = (idx + 8) % 8;
        int ai = i + nbr[idx].first, aj = j + nbr[idx].second;
        if (!geo.in_x_range(ai) || !geo.in_y_range(aj)) return false;
        int wi = geo.wrap_x(ai), wj = geo.wrap_y(aj);
        if (blocked(wi, wj)) return false;
        std::size_t kk = T.idx(wi, wj);
        if (state[kk] != kFrozen) return false;
        tval = T[kk];
        off = Vec2(nbr[idx].first * geo.h, nbr[idx].second * geo.h);
        return true;
      };

      double tu = T[k];
      Vec2 pu{-di * geo.h, -dj * geo.h};
      double best = T[t];
      double cand = tu + segment_length(model, vp, geo.canonical(vp + pu));
      if (cand < best) best = cand;
      for (int side : {-1, 1}) {
        double t2;
        Vec2 p2;
        if (probe(m_u + side, t2, p2)) {
          cand = simplex_update(model, vp, g_here, tu, t2, pu, p2);
          if (cand < best) best = cand;
        }
      }
      if (best < T[t]) {
        T[t] = best;
        state[t] = kTrial;
        heap.push_or_decrease(t, best);
      }
    }
  }
}

template <typename Blocked>
void dijkstra_march(const ManifoldModel& model, const Blocked& blocked,
                    Grid2D<double>& T, MinHeap& heap) {
  const auto& geo = model.geometry();
  const auto& nbr = sixteen_offsets();
  Grid2D<std::uint8_t> done(geo.nx, geo.ny, 0);
  while (!heap.empty()) {
    auto [val, k] = heap.pop();
    if (done[k]) continue;
    done[k] = 1;
    int ci = T.ix(k), cj = T.iy(k);
    Vec2 cp = geo.vertex(ci, cj);
    for (const auto& [di, dj] : nbr) {
      int ii = ci + di, jj = cj + dj;
      if (!geo.in_x_range(ii) || !geo.in_y_range(jj)) continue;
      int i = geo.wrap_x(ii), j = geo.wrap_y(jj);
      if (blocked(i, j)) continue;
      std::size_t t = T.idx(i, j);
      if (done[t]) continue;
      double w = segment_length(
          model, cp, geo.canonical(cp + Vec2(di * geo.h, dj * geo.h)));
      if (T[k] + w < T[t]) {
        T[t] = T[k] + w;
        heap.push_or_decrease(t, T[t]);
      }
    }
  }
}

}  // namespace detail

/// First-order fast marching from a (continuous) source point.
inline DistanceField solve_distance_field(const ManifoldModel& model,
                                          const Vec2& z,
                                          SolveOptions opts = {}) {
  const auto& geo = model.geometry();
  require(geo.contains(z), ErrorCode::InvalidRequest,
          "solve_distance_field: source outside domain");
  DistanceField field;
  field.source = geo.canonical(z);
  field.solver = SolverTag::FastMarching;
  field.model = &model;
  field.restricted_to_F = opts.restrict_to_F;
  field.values = Grid2D<double>(geo.nx, geo.ny, kInfDistance);
  auto& T = field.values;
  auto blocked = [&](int i, int j) {
    return opts.restrict_to_F && model.in_M(i, j);
  };

  Grid2D<std::uint8_t> state(geo.nx, geo.ny, detail::kFar);
  detail::MinHeap heap(T.size());
  auto [si, sj] = geo.nearest_vertex(field.source);
  for (int dj = -2; dj <= 2; ++dj)
    for (int di = -2; di <= 2; ++di) {
      int ii = si + di, jj = sj + dj;
      if (!geo.in_x_range(ii) || !geo.in_y_range(jj)) continue;
      int i = geo.wrap_x(ii), j = geo.wrap_y(jj);
      if (blocked(i, j)) continue;
      double d = detail::segment_length(model, field.source, geo.vertex(i, j));
      std::size_t k = T.idx(i, j);
      T[k] = d;
      state[k] = detail::kTrial;
      heap.push_or_decrease(k, d);
    }
  require(!heap.empty(), ErrorCode::InvalidRequest,
          "solve_distance_field: source surrounded by blocked vertices");
  detail::fmm_march(model, blocked, T, state, heap);
  return field;
}

/// Exact shortest paths on the 16-neighbor graph; edge weights are straight
/// metric segment lengths (midpoint rule). The brute-force oracle, with a
/// known directional metrication bias (worst case sec(13.3 deg) - 1).
inline DistanceField dijkstra_distance(const ManifoldModel& model,
                                       const Vec2& z, SolveOptions opts = {}) {
  const auto& geo = model.geometry();
  require(geo.contains(z), ErrorCode::InvalidRequest,
          "dijkstra_distance: source outside domain");
  DistanceField field;
  field.source = geo.canonical(z);
  field.solver = SolverTag::Dijkstra;
  field.model = &model;
  field.restricted_to_F = opts.restrict_to_F;
  field.values = Grid2D<double>(geo.nx, geo.ny, kInfDistance);
  auto& T = field.values;
  auto blocked = [&](int i, int j) {
    return opts.restrict_to_F && model.in_M(i, j);
  };

  detail::MinHeap heap(T.size());
  auto [si, sj] = geo.nearest_vertex(field.source);
  for (int dj = -2; dj <= 2; ++dj)
    for (int di = -2; di <= 2; ++di) {
      int ii = si + di, jj = sj + dj;
      if (!geo.in_x_range(ii) || !geo.in_y_range(jj)) continue;
      int i = geo.wrap_x(ii), j = geo.wrap_y(jj);
      if (blocked(i, j)) continue;
      double d = detail::segment_length(model, field.source, geo.vertex(i, j));
      std::size_t k = T.idx(i, j);
      if (d < T[k]) {
        T[k] = d;
        heap.push_or_decrease(k, d);
      }
    }
  require(!heap.empty(), ErrorCode::InvalidRequest,
          "dijkstra_distance: source surrounded by blocked vertices");
  detail::dijkstra_march(model, blocked, T, heap);
  return field;
}

/// Multi-source variant: distance to the nearest of the given vertices
/// (e.g. d(., dM) seeded from all boundary vertices).
inline DistanceField solve_distance_to_set(
    const ManifoldModel& model, const std::vector<std::size_t>& seeds,
    SolverTag solver, SolveOptions opts = {}) {
  require(!seeds.empty(), ErrorCode::InsufficientData,
          "solve_distance_to_set: empty seed set");
  const auto& geo = model.geometry();
  DistanceField field;
  field.source = model.vertex(seeds.front());
  field.solver = solver;
  field.model = &model;
  field.restricted_to_F = opts.restrict_to_F;
  field.multi_source = true;
  field.values = Grid2D<double>(geo.nx, geo.ny, kInfDistance);
  auto& T = field.values;
  auto blocked = [&](int i, int j) {
    return opts.restrict_to_F && model.in_M(i, j);
  };

  detail::MinHeap heap(T.size());
  Grid2D<std::uint8_t> state(geo.nx, geo.ny, detail::kFar);
  for (std::size_t k : seeds) {
    T[k] = 0.0;
    state[k] = detail::kTrial;
    heap.push_or_decrease(k, 0.0);
  }
  if (solver == SolverTag::Dijkstra)
    detail::dijkstra_march(model, blocked, T, heap);
  else
    detail::fmm_march(model, blocked, T, state, heap);
  return field;
}

/// Bilinear interpolation of a field; exact at vertices. Cells touching
/// blocked (infinite) corners renormalize over the finite ones.
inline double distance(const DistanceField& field, const Vec2& p) {
  const auto& geo = field.model->geometry();
  auto c = geo.locate(p);
  int i0 = geo.wrap_x(c.i0), i1 = geo.wrap_x(c.i0 + 1);
  int j0 = geo.wrap_y(c.j0), j1 = geo.wrap_y(c.j0 + 1);
  double v[4] = {field.values.at(i0, j0), field.values.at(i1, j0),
                 field.values.at(i0, j1), field.values.at(i1, j1)};
  double w[4] = {(1 - c.fx) * (1 - c.fy), c.fx * (1 - c.fy),
                 (1 - c.fx) * c.fy, c.fx * c.fy};
  double acc = 0, wsum = 0;
  for (int m = 0; m < 4; ++m) {
    if (std::isfinite(v[m])) {
      acc += w[m] * v[m];
      wsum += w[m];
    }
  }
  require(wsum > 0, ErrorCode::InvalidRequest,
          "distance: query inside blocked region");
  return acc / wsum;
}

struct GradientResult {
  Vec2 xi;                // g-unit Riemannian gradient direction
  Vec2 raw;               // coordinate covector before normalization
  double raw_norm_gstar;  // ||raw||_{g*}; near 1 away from source/cut locus
  bool near_cut_warning = false;
};

/// Central-difference gradient of the field, raised with g^{-1} and
/// normalized. The raw g*-norm lands outside [0.8, 1.2] only near the
/// source or the cut locus, which is flagged rather than fatal.
inline GradientResult gradient_at(const DistanceField& field, const Vec2& p) {
  const ManifoldModel& model = *field.model;
  double h = model.h();
  Vec2 ex{h, 0}, ey{0, h};
  double gx = (distance(field, p + ex) - distance(field, p - ex)) / (2 * h);
  double gy = (distance(field, p + ey) - distance(field, p - ey)) / (2 * h);
  GradientResult r;
  r.raw = {gx, gy};
  Mat2 g = metric_at(model, p);
  Mat2 ginv = g.inverse();
  r.raw_norm_gstar = std::sqrt(std::max(0.0, ginv.quad(r.raw)));
  r.near_cut_warning = r.raw_norm_gstar < 0.8 || r.raw_norm_gstar > 1.2;
  Vec2 grad_vec = ginv.mul(r.raw);
  double n = norm_in(g, grad_vec);
  require(n > 0, ErrorCode::InvalidRequest, "gradient_at: zero gradient");
  r.xi = grad_vec / n;
  return r;
}

/// Optional field dump: raw row-major 64-bit floats plus a JSON sidecar
/// describing the source, grid, solver, and the recorded solver error.
inline void save_distance_field(const DistanceField& field,
                                const std::string& path,
                                double eps_solver = -1.0) {
  std::ofstream bin(path, std::ios::binary);
  require(bin.good(), ErrorCode::InvalidRequest,
          "save_distance_field: cannot open " + path);
  bin.write(reinterpret_cast<const char*>(field.values.data().data()),
            std::streamsize(field.values.size() * sizeof(double)));
  require(bin.good(), ErrorCode::InvalidRequest,
          "save_distance_field: write failed " + path);
  nlohmann::json side;
  side["source"] = {field.source.x, field.source.y};
  side["resolution"] = {field.values.nx(), field.values.ny()};
  side["h"] = field.model->h();
  side["solver"] =
      field.solver == SolverTag::FastMarching ? "fast-marching" : "dijkstra";
  if (eps_solver >= 0) side["eps_solver"] = eps_solver;
  std::ofstream meta(path + ".json");
  require(meta.good(), ErrorCode::InvalidRequest,
          "save_distance_field: cannot open sidecar for " + path);
  meta << side.dump();
}

/// Empirical solver error: max |FMM - Dijkstra| over a deterministic vertex
/// subsample (default 5%). Recorded in dataset provenance headers.
inline double measure_solver_error(const ManifoldModel& model, const Vec2& z,
                                   double sample_fraction = 0.05,
                                   std::uint64_t seed = 12345) {
  DistanceField fmm = solve_distance_field(model, z);
  DistanceField dij = dijkstra_distance(model, z);
  Rng rng(seed);
  std::size_t n = fmm.values.size();
  std::size_t want =
      std::max<std::size_t>(1, std::size_t(sample_fraction * double(n)));
  double worst = 0.0;
  for (std::size_t s = 0; s < want; ++s) {
    std::size_t k = rng.below(n);
    if (!std::isfinite(fmm.values[k]) || !std::isfinite(dij.values[k]))
      continue;
    worst = std::max(worst, std::abs(fmm.values[k] - dij.values[k]));
  }
  return worst;
}

}  // namespace distdiff
