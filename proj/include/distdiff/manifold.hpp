// Discretized closed 2-manifolds: a metric field sampled on a periodic
// torus grid (or a bounded analytic patch), a region partition of N into M and F,
// and the geodesic primitives built on top of it.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "distdiff/core.hpp"
#include "distdiff/grid.hpp"

namespace distdiff {

enum class Region : std::uint8_t { F = 0, M = 1, Boundary = 2 };
// Boundary vertices are the F-vertices adjacent to an M-vertex; they belong
// to F for every purpose except interiority.

struct MetricTensorField {
  Grid2D<double> g11, g12, g22;

  Mat2 at_vertex(int i, int j) const {
    return {g11.at(i, j), g12.at(i, j), g22.at(i, j)};
  }
};

/// Per-vertex Christoffel symbols; index pairs (11, 12, 22), upper index k.
struct ChristoffelField {
  // c[k][m]: m = 0 -> (1,1), 1 -> (1,2)=(2,1), 2 -> (2,2)
  std::array<Grid2D<double>, 3> c1;
  std::array<Grid2D<double>, 3> c2;
};

/// One Christoffel sample; symmetric in the lower indices.
struct ChristoffelSample {
  double c1_11 = 0, c1_12 = 0, c1_22 = 0;
  double c2_11 = 0, c2_12 = 0, c2_22 = 0;

  double gamma(int k, int i, int j) const {
    int m = (i == 0 && j == 0) ? 0 : ((i == 1 && j == 1) ? 2 : 1);
    const double* row = (k == 0) ? &c1_11 : &c2_11;
    return row[m];
  }
  /// Acceleration of the affine geodesic equation: -Gamma(v, v).
  Vec2 geodesic_acceleration(const Vec2& v) const {
    double q11 = v.x * v.x, q12 = v.x * v.y, q22 = v.y * v.y;
    return {-(c1_11 * q11 + 2 * c1_12 * q12 + c1_22 * q22),
            -(c2_11 * q11 + 2 * c2_12 * q12 + c2_22 * q22)};
  }
};

class ManifoldModel {
 public:
  enum class Kind { PeriodicTorus, AnalyticPatch };

  ManifoldModel(Kind kind, GridGeometry geo, MetricTensorField metric)
      : kind_(kind), geo_(std::move(geo)), metric_(std::move(metric)) {
    geo_.periodic = (kind_ == Kind::PeriodicTorus);
    region_ = Grid2D<std::uint8_t>(geo_.nx, geo_.ny,
                                   std::uint8_t(Region::F));
    validate_metric();
    build_christoffel();
  }

  Kind kind() const { return kind_; }
  const GridGeometry& geometry() const { return geo_; }
  double h() const { return geo_.h; }
  int nx() const { return geo_.nx; }
  int ny() const { return geo_.ny; }
  const MetricTensorField& metric() const { return metric_; }
  const ChristoffelField& christoffel() const { return gamma_; }

  // -- region ---------------------------------------------------------------

  Region region_at(int i, int j) const { return Region(region_.at(i, j)); }
  bool in_M(int i, int j) const { return region_at(i, j) == Region::M; }
  bool in_F(int i, int j) const { return region_at(i, j) != Region::M; }
  bool on_boundary(int i, int j) const {
    return region_at(i, j) == Region::Boundary;
  }
  const Grid2D<std::uint8_t>& region_mask() const { return region_; }

  /// Region of the nearest vertex; used for membership of continuous points.
  Region region_at_point(const Vec2& p) const {
    auto [i, j] = geo_.nearest_vertex(p);
    return region_at(i, j);
  }

  void set_region_all_F() {
    region_ = Grid2D<std::uint8_t>(geo_.nx, geo_.ny, std::uint8_t(Region::F));
    refresh_region_lists();
  }

  /// Mark M as a coordinate disc (wrap-aware distance to the center).
  void set_region_disc(const Vec2& center, double radius) {
    disc_center_ = center;
    disc_radius_ = radius;
    has_disc_region_ = true;
    for (int j = 0; j < geo_.ny; ++j)
      for (int i = 0; i < geo_.nx; ++i) {
        Vec2 d = geo_.displacement(center, geo_.vertex(i, j));
        region_.at(i, j) = std::uint8_t(d.norm() < radius ? Region::M
                                                          : Region::F);
      }
    mark_boundary();
    refresh_region_lists();
  }

  void set_region_labels(const std::vector<std::uint8_t>& labels) {
    require(labels.size() == region_.size(), ErrorCode::CorruptModel,
            "region mask size mismatch");
    for (std::size_t k = 0; k < labels.size(); ++k)
      region_[k] = labels[k] ? std::uint8_t(Region::M) : std::uint8_t(Region::F);
    mark_boundary();
    refresh_region_lists();
  }

  const std::vector<std::size_t>& boundary_vertices() const {
    return boundary_vertices_;
  }
  const std::vector<std::size_t>& interior_F_vertices() const {
    return f_int_vertices_;
  }
  const std::vector<std::size_t>& M_vertices() const { return m_vertices_; }

  bool has_disc_region() const { return has_disc_region_; }
  Vec2 disc_center() const { return disc_center_; }
  double disc_radius() const { return disc_radius_; }

  Vec2 vertex(std::size_t k) const {
    return geo_.vertex(region_.ix(k), region_.iy(k));
  }

  std::uint64_t hash() const {
    std::uint64_t h0 = fnv1a(&geo_.nx, sizeof(geo_.nx));
    h0 = fnv1a(&geo_.ny, sizeof(geo_.ny), h0);
    h0 = fnv1a(&geo_.h, sizeof(geo_.h), h0);
    h0 = fnv1a(metric_.g11.data().data(),
               metric_.g11.size() * sizeof(double), h0);
    h0 = fnv1a(metric_.g12.data().data(),
               metric_.g12.size() * sizeof(double), h0);
    h0 = fnv1a(metric_.g22.data().data(),
               metric_.g22.size() * sizeof(double), h0);
    h0 = fnv1a(region_.data().data(), region_.size(), h0);
    return h0;
  }

  /// Max absolute second difference of metric components (smoothness proxy).
  double max_second_difference() const {
    double worst = 0.0;
    const Grid2D<double>* comps[3] = {&metric_.g11, &metric_.g12,
                                      &metric_.g22};
    for (const auto* g : comps)
      for (int j = 0; j < geo_.ny; ++j)
        for (int i = 0; i < geo_.nx; ++i) {
          if (!geo_.periodic && (i == 0 || i == geo_.nx - 1 || j == 0 ||
                                 j == geo_.ny - 1))
            continue;
          double cxx = g->at(geo_.wrap_x(i + 1), j) - 2 * g->at(i, j) +
                       g->at(geo_.wrap_x(i - 1), j);
          double cyy = g->at(i, geo_.wrap_y(j + 1)) - 2 * g->at(i, j) +
                       g->at(i, geo_.wrap_y(j - 1));
          worst = std::max({worst, std::abs(cxx), std::abs(cyy)});
        }
    return worst;
  }

 private:
  void validate_metric() const {
    for (int j = 0; j < geo_.ny; ++j)
      for (int i = 0; i < geo_.nx; ++i) {
        Mat2 g = metric_.at_vertex(i, j);
        require(std::isfinite(g.a11) && std::isfinite(g.a12) &&
                    std::isfinite(g.a22),
                ErrorCode::CorruptModel, "non-finite metric entry");
        require(g.spd(), ErrorCode::DegenerateMetric,
                "metric not positive definite at a vertex");
      }
  }

  // Central differences of g (one-sided 2nd order at patch edges), then the
  // Levi-Civita formula at every vertex.
  void build_christoffel() {
    int nx = geo_.nx, ny = geo_.ny;
    for (int m = 0; m < 3; ++m) {
      gamma_.c1[m] = Grid2D<double>(nx, ny);
      gamma_.c2[m] = Grid2D<double>(nx, ny);
    }
    auto deriv = [&](const Grid2D<double>& f, int i, int j, int axis) {
      int n = axis == 0 ? nx : ny;
      int c = axis == 0 ? i : j;
      auto get = [&](int t) {
        return axis == 0 ? f.at(geo_.wrap_x(t), j) : f.at(i, geo_.wrap_y(t));
      };
      if (geo_.periodic || (c > 0 && c < n - 1))
        return (get(c + 1) - get(c - 1)) / (2 * geo_.h);
      if (c == 0)
        return (-3 * get(0) + 4 * get(1) - get(2)) / (2 * geo_.h);
      return (3 * get(n - 1) - 4 * get(n - 2) + get(n - 3)) / (2 * geo_.h);
    };
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        // dg[a][m]: derivative of component m along axis a
        double dg[2][3];
        const Grid2D<double>* comps[3] = {&metric_.g11, &metric_.g12,
                                          &metric_.g22};
        for (int a = 0; a < 2; ++a)
          for (int m = 0; m < 3; ++m) dg[a][m] = deriv(*comps[m], i, j, a);
        Mat2 ginv = metric_.at_vertex(i, j).inverse();
        auto dcomp = [&](int a, int b, int c) {  // d_c g_ab
          int m = (a == 0 && b == 0) ? 0 : ((a == 1 && b == 1) ? 2 : 1);
          return dg[c][m];
        };
        auto ginv_at = [&](int a, int b) {
          return (a == 0 && b == 0) ? ginv.a11
                                    : ((a == 1 && b == 1) ? ginv.a22
                                                          : ginv.a12);
        };
        for (int k = 0; k < 2; ++k) {
          double out[3];
          int pairs[3][2] = {{0, 0}, {0, 1}, {1, 1}};
          for (int m = 0; m < 3; ++m) {
            int a = pairs[m][0], b = pairs[m][1];
            double sum = 0.0;
            for (int l = 0; l < 2; ++l)
              sum += ginv_at(k, l) *
                     (dcomp(b, l, a) + dcomp(a, l, b) - dcomp(a, b, l));
            out[m] = 0.5 * sum;
          }
          auto& dst = (k == 0) ? gamma_.c1 : gamma_.c2;
          dst[0].at(i, j) = out[0];
          dst[1].at(i, j) = out[1];
          dst[2].at(i, j) = out[2];
        }
      }
  }

  void mark_boundary() {
    for (int j = 0; j < geo_.ny; ++j)
      for (int i = 0; i < geo_.nx; ++i) {
        if (Region(region_.at(i, j)) == Region::M) continue;
        bool adj_m = false;
        for (int dj = -1; dj <= 1 && !adj_m; ++dj)
          for (int di = -1; di <= 1 && !adj_m; ++di) {
            if (di == 0 && dj == 0) continue;
            int ii = i + di, jj = j + dj;
            if (!geo_.in_x_range(ii) || !geo_.in_y_range(jj)) continue;
            if (Region(region_.at(geo_.wrap_x(ii), geo_.wrap_y(jj))) ==
                Region::M)
              adj_m = true;
          }
        region_.at(i, j) =
            std::uint8_t(adj_m ? Region::Boundary : Region::F);
      }
  }

  void refresh_region_lists() {
    boundary_vertices_.clear();
    f_int_vertices_.clear();
    m_vertices_.clear();
    for (int j = 0; j < geo_.ny; ++j)
      for (int i = 0; i < geo_.nx; ++i) {
        Region r = region_at(i, j);
        std::size_t k = region_.idx(i, j);
        if (r == Region::M) {
          m_vertices_.push_back(k);
          continue;
        }
        if (r == Region::Boundary) boundary_vertices_.push_back(k);
        bool interior = true;
        for (int dj = -1; dj <= 1 && interior; ++dj)
          for (int di = -1; di <= 1 && interior; ++di) {
            int ii = i + di, jj = j + dj;
            if (!geo_.in_x_range(ii) || !geo_.in_y_range(jj)) continue;
            if (Region(region_.at(geo_.wrap_x(ii), geo_.wrap_y(jj))) ==
                Region::M)
              interior = false;
          }
        if (interior) f_int_vertices_.push_back(k);
      }
    if (!m_vertices_.empty())
      require(!f_int_vertices_.empty(), ErrorCode::CorruptModel,
              "F has empty interior");
  }

  Kind kind_;
  GridGeometry geo_;
  MetricTensorField metric_;
  ChristoffelField gamma_;
  Grid2D<std::uint8_t> region_;
  std::vector<std::size_t> boundary_vertices_;
  std::vector<std::size_t> f_int_vertices_;
  std::vector<std::size_t> m_vertices_;
  bool has_disc_region_ = false;
  Vec2 disc_center_{};
  double disc_radius_ = 0.0;
};

// ---------------------------------------------------------------------------
// Pointwise samplers
// ---------------------------------------------------------------------------

/// Bilinear metric at a continuous point; exact at vertices, SPD everywhere
/// (convex combination of SPD matrices).
inline Mat2 metric_at(const ManifoldModel& model, const Vec2& p) {
  require(model.geometry().contains(p), ErrorCode::InvalidRequest,
          "point outside model domain");
  const auto& mf = model.metric();
  Mat2 g{bilinear(model.geometry(), mf.g11, p),
         bilinear(model.geometry(), mf.g12, p),
         bilinear(model.geometry(), mf.g22, p)};
  require(std::isfinite(g.a11) && std::isfinite(g.a12) && std::isfinite(g.a22),
          ErrorCode::CorruptModel, "non-finite metric sample");
  return g;
}

/// Bilinear sample of an arbitrary per-vertex Christoffel field (also used
/// for gauge-transformed connections).
inline ChristoffelSample sample_christoffel_field(const GridGeometry& geo,
                                                  const ChristoffelField& gm,
                                                  const Vec2& p) {
  ChristoffelSample s;
  s.c1_11 = bilinear(geo, gm.c1[0], p);
  s.c1_12 = bilinear(geo, gm.c1[1], p);
  s.c1_22 = bilinear(geo, gm.c1[2], p);
  s.c2_11 = bilinear(geo, gm.c2[0], p);
  s.c2_12 = bilinear(geo, gm.c2[1], p);
  s.c2_22 = bilinear(geo, gm.c2[2], p);
  return s;
}

/// Bilinear interpolation of the model's per-vertex Christoffel symbols.
inline ChristoffelSample christoffel_at(const ManifoldModel& model,
                                        const Vec2& p) {
  return sample_christoffel_field(model.geometry(), model.christoffel(), p);
}

// ---------------------------------------------------------------------------
// Geodesics
// ---------------------------------------------------------------------------

struct GeodesicCurve {
  std::vector<double> t;       // parameter samples
  std::vector<Vec2> points;    // canonical coordinates
  std::vector<Vec2> velocity;

  std::size_t size() const { return t.size(); }
};

using ConnectionSampler =
    std::function<ChristoffelSample(const ManifoldModel&, const Vec2&)>;

/// RK4 trace of x'' = -Gamma(x)(x', x') under an arbitrary connection.
/// Positions stored canonically; the integrator state is kept unwrapped so
/// step arithmetic never sees a seam.
inline GeodesicCurve trace_curve(const ManifoldModel& model, Vec2 x, Vec2 v,
                                 double t_max, double step,
                                 const ConnectionSampler& conn) {
  require(step > 0 && t_max > 0, ErrorCode::InvalidRequest,
          "trace_curve: bad step or t_max");
  const auto& geo = model.geometry();
  auto accel = [&](const Vec2& p, const Vec2& vel) {
    return conn(model, geo.canonical(p)).geodesic_acceleration(vel);
  };
  GeodesicCurve out;
  std::size_t n = std::size_t(std::ceil(t_max / step));
  out.t.reserve(n + 1);
  out.points.reserve(n + 1);
  out.velocity.reserve(n + 1);
  double t = 0.0;
  out.t.push_back(t);
  out.points.push_back(geo.canonical(x));
  out.velocity.push_back(v);
  for (std::size_t i = 0; i < n; ++i) {
    double dt = std::min(step, t_max - t);
    Vec2 k1x = v, k1v = accel(x, v);
    Vec2 k2x = v + k1v * (dt / 2), k2v = accel(x + k1x * (dt / 2), v + k1v * (dt / 2));
    Vec2 k3x = v + k2v * (dt / 2), k3v = accel(x + k2x * (dt / 2), v + k2v * (dt / 2));
    Vec2 k4x = v + k3v * dt, k4v = accel(x + k3x * dt, v + k3v * dt);
    x += (k1x + 2 * k2x + 2 * k3x + k4x) * (dt / 6);
    v += (k1v + 2 * k2v + 2 * k3v + k4v) * (dt / 6);
    t += dt;
    out.t.push_back(t);
    out.points.push_back(geo.canonical(x));
    out.velocity.push_back(v);
  }
  return out;
}

/// Affine geodesic from (x, xi); xi must be g-unit. Speed drift beyond 1e-3
/// signals an unstable step.
inline GeodesicCurve trace_geodesic(const ManifoldModel& model, const Vec2& x,
                                    const Vec2& xi, double t_max,
                                    double step) {
  double speed0 = norm_in(metric_at(model, x), xi);
  require(std::abs(speed0 - 1.0) <= 1e-9, ErrorCode::InvalidRequest,
          "trace_geodesic: initial velocity not g-unit");
  require(step <= model.h() / 2 + 1e-15, ErrorCode::InvalidRequest,
          "trace_geodesic: step must be at most h/2");
  GeodesicCurve c = trace_curve(model, x, xi, t_max, step, &christoffel_at);
  for (std::size_t i = 0; i < c.size(); ++i) {
    double s = norm_in(metric_at(model, c.points[i]), c.velocity[i]);
    if (std::abs(s - 1.0) > 1e-3)
      fail(ErrorCode::Instability,
           "trace_geodesic: speed drift exceeds 1e-3; reduce the step");
  }
  return c;
}

/// Change of parameter t(s) with dt/ds = exp(integral of kappa), applied to a
/// curve sampled in s. If the input satisfies the forced geodesic equation
/// with this kappa, the output satisfies the affine one.
inline GeodesicCurve reparametrize_pregeodesic(
    const GeodesicCurve& curve, const std::function<double(double)>& kappa) {
  require(curve.size() >= 2, ErrorCode::InvalidRequest,
          "reparametrize: need at least two samples");
  std::size_t n = curve.size();
  // Sample points are kept as they are; only the parameter values move:
  // t_i = integral of exp(integral of kappa), velocities scaled by ds/dt.
  // Per-interval Simpson keeps both integrals at 4th order.
  std::vector<double> ik(n, 0.0), tt(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    double s0 = curve.t[i - 1], s1 = curve.t[i];
    double ds = s1 - s0, mid = 0.5 * (s0 + s1);
    ik[i] = ik[i - 1] + ds / 6.0 * (kappa(s0) + 4.0 * kappa(mid) + kappa(s1));
    double ik_mid = ik[i - 1] + (ds / 2.0) / 6.0 *
                                    (kappa(s0) + 4.0 * kappa(s0 + ds / 4) +
                                     kappa(mid));
    tt[i] = tt[i - 1] + ds / 6.0 * (std::exp(ik[i - 1]) +
                                    4.0 * std::exp(ik_mid) + std::exp(ik[i]));
    require(tt[i] > tt[i - 1], ErrorCode::Internal,
            "reparametrize: non-monotone parameter change");
  }
  GeodesicCurve out;
  out.t = std::move(tt);
  out.points = curve.points;
  out.velocity.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.velocity.push_back(curve.velocity[i] / std::exp(ik[i]));
  return out;
}

// ---------------------------------------------------------------------------
// Cut times
// ---------------------------------------------------------------------------

using DistanceEvaluator = std::function<double(const Vec2&)>;
using DistanceFieldFactory = std::function<DistanceEvaluator(const Vec2&)>;

struct CutTimeOptions {
  double t_max = 0.0;    // required
  double step = 0.0;     // defaults to h/2
  double tol_cut = 0.0;  // defaults to 3h
};

/// Largest sampled t with |d(gamma_{x,xi}(t), x) - t| <= tol_cut, where the
/// predicate holds at every smaller sample as well. Throws Inconclusive when
/// the trace ends before the predicate ever fails.
inline double cut_time(const ManifoldModel& model,
                       const DistanceFieldFactory& field_factory,
                       const Vec2& x, const Vec2& xi, CutTimeOptions opt) {
  require(opt.t_max > 0, ErrorCode::InvalidRequest, "cut_time: t_max required");
  double step = opt.step > 0 ? opt.step : model.h() / 2;
  double tol = opt.tol_cut > 0 ? opt.tol_cut : 3 * model.h();
  DistanceEvaluator dist = field_factory(x);
  GeodesicCurve c = trace_geodesic(model, x, xi, opt.t_max, step);
  double tau = 0.0;
  bool failed = false;
  for (std::size_t i = 1; i < c.size(); ++i) {
    if (std::abs(dist(c.points[i]) - c.t[i]) <= tol) {
      tau = c.t[i];
    } else {
      failed = true;
      break;
    }
  }
  if (!failed)
    fail(ErrorCode::Inconclusive,
         "cut_time: no failure before t_max; raise t_max");
  require(tau > 0, ErrorCode::Inconclusive, "cut_time: immediate failure");
  return tau;
}

/// Inward normal at a boundary vertex, estimated from the region mask by
/// averaging directions to adjacent M-vertices; g-normalized.
inline Vec2 inward_normal(const ManifoldModel& model, const Vec2& z) {
  const auto& geo = model.geometry();
  auto [i, j] = geo.nearest_vertex(z);
  require(model.on_boundary(i, j), ErrorCode::InvalidRequest,
          "inward_normal: point is not a boundary vertex");
  Vec2 acc{0, 0};
  for (int dj = -1; dj <= 1; ++dj)
    for (int di = -1; di <= 1; ++di) {
      if (di == 0 && dj == 0) continue;
      int ii = i + di, jj = j + dj;
      if (!geo.in_x_range(ii) || !geo.in_y_range(jj)) continue;
      if (model.in_M(geo.wrap_x(ii), geo.wrap_y(jj))) {
        Vec2 d{double(di), double(dj)};
        acc += d / d.norm();
      }
    }
  require(acc.norm() > 0, ErrorCode::InvalidRequest,
          "inward_normal: no adjacent M vertex");
  return normalized_in(metric_at(model, z), acc);
}

/// Largest sampled t with |d(gamma_{z,nu}(t), dM) - t| <= tol_cut.
/// dist_to_boundary must evaluate d(., dM).
inline double boundary_cut_time(const ManifoldModel& model,
                                const DistanceEvaluator& dist_to_boundary,
                                const Vec2& z, CutTimeOptions opt) {
  require(opt.t_max > 0, ErrorCode::InvalidRequest,
          "boundary_cut_time: t_max required");
  double step = opt.step > 0 ? opt.step : model.h() / 2;
  double tol = opt.tol_cut > 0 ? opt.tol_cut : 3 * model.h();
  Vec2 nu = inward_normal(model, z);
  GeodesicCurve c = trace_geodesic(model, z, nu, opt.t_max, step);
  double tau = 0.0;
  bool failed = false;
  for (std::size_t i = 1; i < c.size(); ++i) {
    if (std::abs(dist_to_boundary(c.points[i]) - c.t[i]) <= tol) {
      tau = c.t[i];
    } else {
      failed = true;
      break;
    }
  }
  if (!failed)
    fail(ErrorCode::Inconclusive,
         "boundary_cut_time: no failure before t_max; raise t_max");
  require(tau > 0, ErrorCode::Inconclusive, "boundary_cut_time: immediate failure");
  return tau;
}

// ---------------------------------------------------------------------------
// Factories and model files
// ---------------------------------------------------------------------------

inline ManifoldModel make_flat_torus(int n, double extent = 1.0) {
  GridGeometry geo{n, n, extent / n, {0, 0}, true};
  MetricTensorField m;
  m.g11 = Grid2D<double>(n, n, 1.0);
  m.g12 = Grid2D<double>(n, n, 0.0);
  m.g22 = Grid2D<double>(n, n, 1.0);
  return ManifoldModel(ManifoldModel::Kind::PeriodicTorus, geo, std::move(m));
}

/// Torus with conformal metric exp(2 u(x)) I sampled from a callable.
inline ManifoldModel make_conformal_torus(
    int n, const std::function<double(const Vec2&)>& u, double extent = 1.0) {
  GridGeometry geo{n, n, extent / n, {0, 0}, true};
  MetricTensorField m;
  m.g11 = Grid2D<double>(n, n);
  m.g12 = Grid2D<double>(n, n, 0.0);
  m.g22 = Grid2D<double>(n, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      double f = std::exp(2.0 * u(geo.vertex(i, j)));
      m.g11.at(i, j) = f;
      m.g22.at(i, j) = f;
    }
  return ManifoldModel(ManifoldModel::Kind::PeriodicTorus, geo, std::move(m));
}

inline ManifoldModel make_patch(
    const Vec2& origin, int nx, int ny, double h,
    const std::function<Mat2(const Vec2&)>& metric) {
  GridGeometry geo{nx, ny, h, origin, false};
  MetricTensorField m;
  m.g11 = Grid2D<double>(nx, ny);
  m.g12 = Grid2D<double>(nx, ny);
  m.g22 = Grid2D<double>(nx, ny);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      Mat2 g = metric(geo.vertex(i, j));
      m.g11.at(i, j) = g.a11;
      m.g12.at(i, j) = g.a12;
      m.g22.at(i, j) = g.a22;
    }
  return ManifoldModel(ManifoldModel::Kind::AnalyticPatch, geo, std::move(m));
}

inline ManifoldModel model_from_json(const nlohmann::json& doc) {
  std::string kind = doc.at("kind").get<std::string>();
  require(kind == "periodic-grid-torus" || kind == "analytic-patch",
          ErrorCode::CorruptModel, "unknown model kind: " + kind);
  bool periodic = kind == "periodic-grid-torus";
  auto res = doc.at("resolution");
  int cx = res.at(0).get<int>(), cy = res.at(1).get<int>();
  int nx = periodic ? cx : cx + 1;  // resolution counts cells
  int ny = periodic ? cy : cy + 1;
  double h = doc.at("h").get<double>();
  Vec2 origin{0, 0};
  if (doc.contains("origin")) {
    origin.x = doc["origin"].at(0).get<double>();
    origin.y = doc["origin"].at(1).get<double>();
  }
  GridGeometry geo{nx, ny, h, origin, periodic};
  std::size_t nv = std::size_t(nx) * std::size_t(ny);

  MetricTensorField m;
  m.g11 = Grid2D<double>(nx, ny, 1.0);
  m.g12 = Grid2D<double>(nx, ny, 0.0);
  m.g22 = Grid2D<double>(nx, ny, 1.0);
  const auto& metric = doc.at("metric");
  if (metric.is_string()) {
    require(metric.get<std::string>() == "identity", ErrorCode::CorruptModel,
            "unknown metric tag");
  } else if (metric.contains("u")) {
    const auto& u = metric.at("u");
    require(u.size() == nv, ErrorCode::CorruptModel, "conformal array size");
    for (std::size_t k = 0; k < nv; ++k) {
      double f = std::exp(2.0 * u.at(k).get<double>());
      m.g11[k] = f;
      m.g22[k] = f;
    }
  } else {
    const auto& a11 = metric.at("g11");
    const auto& a12 = metric.at("g12");
    const auto& a22 = metric.at("g22");
    require(a11.size() == nv && a12.size() == nv && a22.size() == nv,
            ErrorCode::CorruptModel, "metric array size");
    for (std::size_t k = 0; k < nv; ++k) {
      m.g11[k] = a11.at(k).get<double>();
      m.g12[k] = a12.at(k).get<double>();
      m.g22[k] = a22.at(k).get<double>();
    }
  }

  ManifoldModel model(periodic ? ManifoldModel::Kind::PeriodicTorus
                               : ManifoldModel::Kind::AnalyticPatch,
                      geo, std::move(m));
  if (doc.contains("region")) {
    const auto& region = doc["region"];
    std::string type = region.at("type").get<std::string>();
    if (type == "disc") {
      Vec2 c{region.at("center").at(0).get<double>(),
             region.at("center").at(1).get<double>()};
      model.set_region_disc(c, region.at("radius").get<double>());
    } else if (type == "mask") {
      std::vector<std::uint8_t> labels;
      for (const auto& v : region.at("labels"))
        labels.push_back(std::uint8_t(v.get<int>() != 0));
      model.set_region_labels(labels);
    } else {
      fail(ErrorCode::CorruptModel, "unknown region type: " + type);
    }
  } else {
    model.set_region_all_F();
  }
  return model;
}

inline nlohmann::json model_to_json(const ManifoldModel& model) {
  nlohmann::json doc;
  bool periodic = model.kind() == ManifoldModel::Kind::PeriodicTorus;
  doc["kind"] = periodic ? "periodic-grid-torus" : "analytic-patch";
  doc["resolution"] = {periodic ? model.nx() : model.nx() - 1,
                       periodic ? model.ny() : model.ny() - 1};
  doc["h"] = model.h();
  if (!periodic)
    doc["origin"] = {model.geometry().origin.x, model.geometry().origin.y};
  doc["metric"] = {{"g11", model.metric().g11.data()},
                   {"g12", model.metric().g12.data()},
                   {"g22", model.metric().g22.data()}};
  if (model.has_disc_region()) {
    doc["region"] = {{"type", "disc"},
                     {"center", {model.disc_center().x, model.disc_center().y}},
                     {"radius", model.disc_radius()}};
  } else if (!model.M_vertices().empty()) {
    std::vector<int> labels(model.region_mask().size(), 0);
    for (std::size_t k : model.M_vertices()) labels[k] = 1;
    doc["region"] = {{"type", "mask"}, {"labels", labels}};
  }
  return doc;
}

inline ManifoldModel load_model(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::InvalidRequest, "cannot open model: " + path);
  nlohmann::json doc;
  in >> doc;
  return model_from_json(doc);
}

inline void save_model(const ManifoldModel& model, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::InvalidRequest, "cannot write model: " + path);
  out << model_to_json(model).dump();
}

}  // namespace distdiff
