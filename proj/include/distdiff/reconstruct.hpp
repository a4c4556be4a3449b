// The inverse direction: checks of the embedding x -> D_x, nearest-neighbor
// dataset matching, distance-difference coordinate charts, extraction of
// unparameterized geodesics from gradients of the data, the projective gauge
// machinery with its invariant, and local metric recovery in chart
// coordinates.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "distdiff/core.hpp"
#include "distdiff/ddf.hpp"
#include "distdiff/eikonal.hpp"
#include "distdiff/linalg.hpp"
#include "distdiff/manifold.hpp"

namespace distdiff {

// ---------------------------------------------------------------------------
// Embedding checks (instrumented datasets only)
// ---------------------------------------------------------------------------

struct EmbeddingReport {
  double max_lipschitz_ratio = 0.0;  // over separated pairs
  double min_separation_ratio = kInfDistance;
  std::size_t pairs_checked = 0;
  std::size_t bound_violations = 0;  // pairs with sup > 2 d + 4 eps
};

/// Max and min of ||D_x - D_y||_inf / d(x, y) over sample pairs with
/// d(x, y) >= min_sep; pairwise distances come from per-sample solver runs.
inline EmbeddingReport verify_embedding(const ManifoldModel& model,
                                        const DDFDataset& ds,
                                        double min_sep, int jobs = 0) {
  require(!ds.blind, ErrorCode::RequiresInstrumented,
          "verify_embedding: instrumented dataset required");
  for (const auto& s : ds.samples)
    require(s.has_ground_truth, ErrorCode::RequiresInstrumented,
            "verify_embedding: sample lacks ground truth");
  std::size_t n = ds.samples.size();
  std::vector<DistanceField> fields(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    fields[i] = solve_distance_field(model, ds.samples[i].ground_truth);
  });
  EmbeddingReport rep;
  double eps = std::max(ds.eps_solver, 1e-6);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double d = distance(fields[i], ds.samples[j].ground_truth);
      if (d < 1e-12) continue;  // duplicated points have no ratio
      double s = sup_norm_distance(ds.samples[i], ds.samples[j]);
      if (s > 2 * d + 4 * eps) ++rep.bound_violations;
      if (d < min_sep) continue;
      double ratio = s / d;
      rep.max_lipschitz_ratio = std::max(rep.max_lipschitz_ratio, ratio);
      rep.min_separation_ratio = std::min(rep.min_separation_ratio, ratio);
      ++rep.pairs_checked;
    }
  return rep;
}

// ---------------------------------------------------------------------------
// Dataset matching (the numerical Psi)
// ---------------------------------------------------------------------------

struct Correspondence {
  // pairing[i] = index into ds1 matched to ds2 sample i, or npos
  static constexpr std::size_t npos = std::size_t(-1);
  std::vector<std::size_t> pairing;
  std::vector<double> residuals;  // sup-norm residual per ds2 sample
  double max_matched_residual = 0.0;
  std::size_t matched = 0;
};

/// Injective nearest-neighbor pairing of ds2 samples onto ds1 samples under
/// the sup norm. Conflicts go to the smaller residual; anything above the
/// threshold stays unmatched.
inline Correspondence match_datasets(const DDFDataset& ds1,
                                     const DDFDataset& ds2, double threshold) {
  require(ds1.K() == ds2.K(), ErrorCode::IncompatibleDataset,
          "match_datasets: K mismatch");
  std::size_t n2 = ds2.samples.size(), n1 = ds1.samples.size();
  Correspondence out;
  out.pairing.assign(n2, Correspondence::npos);
  out.residuals.assign(n2, kInfDistance);
  struct Cand {
    double r;
    std::size_t i2, i1;
  };
  std::vector<Cand> best(n2);
  for (std::size_t i = 0; i < n2; ++i) {
    double br = kInfDistance;
    std::size_t bj = 0;
    for (std::size_t j = 0; j < n1; ++j) {
      double r = sup_norm_distance(ds2.samples[i], ds1.samples[j]);
      if (r < br) {
        br = r;
        bj = j;
      }
    }
    best[i] = {br, i, bj};
    out.residuals[i] = br;
  }
  std::sort(best.begin(), best.end(),
            [](const Cand& a, const Cand& b) { return a.r < b.r; });
  std::vector<bool> taken(n1, false);
  for (const auto& c : best) {
    if (c.r > threshold) continue;
    if (taken[c.i1]) continue;  // collision: the better residual won already
    taken[c.i1] = true;
    out.pairing[c.i2] = c.i1;
    out.max_matched_residual = std::max(out.max_matched_residual, c.r);
    ++out.matched;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Charts H(y) = (D_y(z_i, z))_i
// ---------------------------------------------------------------------------

struct Chart {
  std::size_t center = 0;                 // sample index
  std::size_t z_ref = 0;                  // index of z in the F sample set
  std::array<std::size_t, 2> tuple{};     // (i1, i2)
  std::vector<std::array<double, 2>> coords;  // per dataset sample
  std::vector<std::size_t> neighbors;     // 12 nearest samples, sup norm
  double conditioning = 0.0;  // sigma_min/sigma_max of the whitened Jacobian
};

struct ChartOptions {
  double sigma_min = 0.05;
  std::size_t neighborhood = 12;
  double min_center_distance = 0.0;  // lower bound on d(center, z_ref)
};

/// Data-side lower bound on d(x, z_0) for the sample (the absolute offset
/// the differences cannot reveal): max of -min_a rho_a and
/// max_a (d(z_0, z_a) - rho_a)/2.
inline double center_offset_lower_bound(const DDFDataset& ds,
                                        const DDFSample& s) {
  double lb = 0.0;
  for (std::size_t a = 0; a < ds.K(); ++a) {
    lb = std::max(lb, -s.rho[a]);
    lb = std::max(lb, (ds.fsamples.f_distance(0, a) - s.rho[a]) / 2);
  }
  return lb;
}

inline std::vector<std::size_t> nearest_samples(const DDFDataset& ds,
                                                std::size_t center,
                                                std::size_t count) {
  std::vector<std::pair<double, std::size_t>> order;
  order.reserve(ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    if (i == center) continue;
    order.push_back(
        {sup_norm_distance(ds.samples[center], ds.samples[i]), i});
  }
  std::size_t keep = std::min(count, order.size());
  std::partial_sort(order.begin(), order.begin() + keep, order.end());
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < keep; ++k) out.push_back(order[k].second);
  return out;
}

/// Chart coordinates for every sample plus a scale-free conditioning score
/// of the local Jacobian, estimated against a PCA-whitened frame of the
/// neighborhood's rho vectors. Rejects tuples below sigma_min.
inline Chart build_chart(const DDFDataset& ds, std::size_t center,
                         std::size_t z_ref, std::array<std::size_t, 2> tuple,
                         ChartOptions opt = {}) {
  require(center < ds.samples.size(), ErrorCode::InvalidRequest,
          "build_chart: center out of range");
  require(z_ref < ds.K() && tuple[0] < ds.K() && tuple[1] < ds.K(),
          ErrorCode::InvalidRequest, "build_chart: index out of range");
  require(tuple[0] != tuple[1] && tuple[0] != z_ref && tuple[1] != z_ref,
          ErrorCode::InvalidRequest, "build_chart: tuple indices must differ");
  if (opt.min_center_distance > 0) {
    const auto& s = ds.samples[center];
    double d_lb = center_offset_lower_bound(ds, s) + s.rho[z_ref];
    require(d_lb > opt.min_center_distance, ErrorCode::InvalidRequest,
            "build_chart: center too close to the reference point");
  }

  Chart chart;
  chart.center = center;
  chart.z_ref = z_ref;
  chart.tuple = tuple;
  chart.coords.resize(ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    chart.coords[i] = {ddf_value(ds.samples[i], tuple[0], z_ref),
                       ddf_value(ds.samples[i], tuple[1], z_ref)};
  chart.neighbors = nearest_samples(ds, center, opt.neighborhood);
  require(chart.neighbors.size() >= 4, ErrorCode::InsufficientData,
          "build_chart: not enough samples near the center");

  // Local frame from classical scaling of the neighborhood's sup-norm
  // distances (center + neighbors): the data-side stand-in for positions.
  std::size_t n = chart.neighbors.size() + 1;
  std::vector<std::size_t> pts{center};
  pts.insert(pts.end(), chart.neighbors.begin(), chart.neighbors.end());
  std::vector<double> d2(n * n, 0.0);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) {
      double d = sup_norm_distance(ds.samples[pts[a]], ds.samples[pts[b]]);
      d2[a * n + b] = d2[b * n + a] = d * d;
    }
  std::vector<double> rowm(n, 0.0);
  double totm = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) rowm[a] += d2[a * n + b];
    rowm[a] /= double(n);
    totm += rowm[a];
  }
  totm /= double(n);
  std::vector<double> gram(n * n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      gram[a * n + b] = -0.5 * (d2[a * n + b] - rowm[a] - rowm[b] + totm);
  auto eig = eigen_symmetric(n, gram);
  double l1 = eig.values[n - 1], l2 = eig.values[n - 2];
  if (!(l2 > 1e-12 * std::max(l1, 1e-12))) {
    chart.conditioning = 0.0;
  } else {
    std::vector<Vec2> frame(n);
    for (std::size_t a = 0; a < n; ++a)
      frame[a] = {eig.vectors[a * n + (n - 1)] * std::sqrt(l1),
                  eig.vectors[a * n + (n - 2)] * std::sqrt(l2)};
    double ata[3] = {0, 0, 0};
    double atb1[2] = {0, 0}, atb2[2] = {0, 0};
    for (std::size_t a = 1; a < n; ++a) {
      Vec2 dp = frame[a] - frame[0];
      double dh1 = chart.coords[pts[a]][0] - chart.coords[center][0];
      double dh2 = chart.coords[pts[a]][1] - chart.coords[center][1];
      ata[0] += dp.x * dp.x;
      ata[1] += dp.x * dp.y;
      ata[2] += dp.y * dp.y;
      atb1[0] += dp.x * dh1;
      atb1[1] += dp.y * dh1;
      atb2[0] += dp.x * dh2;
      atb2[1] += dp.y * dh2;
    }
    Mat2 ainv = Mat2{ata[0], ata[1], ata[2]}.inverse();
    Vec2 r1 = ainv.mul({atb1[0], atb1[1]});
    Vec2 r2 = ainv.mul({atb2[0], atb2[1]});
    auto [smin, smax] = singular_values_2x2(r1.x, r1.y, r2.x, r2.y);
    chart.conditioning = smax > 0 ? smin / smax : 0.0;
  }

  require(chart.conditioning >= opt.sigma_min, ErrorCode::DegenerateChart,
          "build_chart: degenerate reference tuple (conditioning below "
          "sigma_min); resample the tuple");
  return chart;
}

/// Least-squares Jacobian of the chart map against true sample positions;
/// verification-side helper (needs ground truth). Gaussian distance weights
/// shrink the effective fitting radius.
inline std::array<Vec2, 2> chart_jacobian_vs_positions(
    const ManifoldModel& model, const DDFDataset& ds, const Chart& chart) {
  require(!ds.blind, ErrorCode::RequiresInstrumented,
          "chart_jacobian_vs_positions: instrumented dataset required");
  const auto& geo = model.geometry();
  const auto& c = ds.samples[chart.center];
  double scale = 0.0;
  for (std::size_t m : chart.neighbors)
    scale = std::max(scale, geo.displacement(c.ground_truth,
                                             ds.samples[m].ground_truth)
                                .norm());
  scale = std::max(scale, 1e-12);
  double ata[3] = {0, 0, 0};
  double atb1[2] = {0, 0}, atb2[2] = {0, 0};
  for (std::size_t m : chart.neighbors) {
    Vec2 dp = geo.displacement(c.ground_truth, ds.samples[m].ground_truth);
    double w = std::exp(-2.0 * dp.dot(dp) / (scale * scale));
    double dh1 = chart.coords[m][0] - chart.coords[chart.center][0];
    double dh2 = chart.coords[m][1] - chart.coords[chart.center][1];
    ata[0] += w * dp.x * dp.x;
    ata[1] += w * dp.x * dp.y;
    ata[2] += w * dp.y * dp.y;
    atb1[0] += w * dp.x * dh1;
    atb1[1] += w * dp.y * dh1;
    atb2[0] += w * dp.x * dh2;
    atb2[1] += w * dp.y * dh2;
  }
  Mat2 inv = Mat2{ata[0], ata[1], ata[2]}.inverse();
  Vec2 row1 = inv.mul({atb1[0], atb1[1]});
  Vec2 row2 = inv.mul({atb2[0], atb2[1]});
  return {row1, row2};
}

// ---------------------------------------------------------------------------
// Sigma sets: hidden samples whose data gradient at an anchor matches xi
// ---------------------------------------------------------------------------

struct SigmaSet {
  std::size_t anchor = 0;  // index into fsamples.anchors
  Vec2 xi{};
  std::vector<std::size_t> members;  // sorted along the geodesic
  std::vector<double> params;       // monotone parameter D_x(z, z_0)
  bool sparse_warning = false;
};

struct SigmaOptions {
  double tol_grad = 0.12;  // angular tolerance, radians
  double c1_window = 0.0;  // deviation allowed in the raw gradient norm;
                           // defaults to 5 * (stencil spacing / 2)
};

/// Gradient of y -> D_x(y, z_anchor) at the anchor from the cross stencil;
/// returns the raw covector (F-side coordinates).
inline Vec2 sigma_raw_gradient(const FSampleSet::Anchor& anchor,
                               double stencil_spacing, const DDFSample& s) {
  double gx = (s.rho[anchor.stencil[0]] - s.rho[anchor.stencil[1]]) /
              (2 * stencil_spacing);
  double gy = (s.rho[anchor.stencil[2]] - s.rho[anchor.stencil[3]]) /
              (2 * stencil_spacing);
  return {gx, gy};
}

/// All samples whose data gradient at the anchor g-normalizes to within
/// tol_grad of xi and pass the eikonal-norm (C1 proxy) window. The model is
/// consulted only for g|_F at the anchor. Members are sorted by
/// D_x(z_anchor, z_0), which grows monotonically along the geodesic.
inline SigmaSet extract_sigma_set(const ManifoldModel& model,
                                  const DDFDataset& ds, std::size_t anchor_idx,
                                  const Vec2& xi, SigmaOptions opt = {}) {
  require(anchor_idx < ds.fsamples.anchors.size(), ErrorCode::InvalidRequest,
          "extract_sigma_set: anchor index out of range");
  const auto& anchor = ds.fsamples.anchors[anchor_idx];
  double spacing = double(ds.fsamples.stencil_cells) * model.h();
  double c1_window = opt.c1_window > 0 ? opt.c1_window : 5 * (spacing / 2);

  Vec2 z = ds.fsamples.points[anchor.center];
  Mat2 g = metric_at(model, z);
  Mat2 ginv = g.inverse();
  Vec2 xi_unit = normalized_in(g, xi);

  SigmaSet out;
  out.anchor = anchor_idx;
  out.xi = xi_unit;
  std::vector<std::pair<double, std::size_t>> picked;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    Vec2 q = sigma_raw_gradient(anchor, spacing, s);
    double norm_gstar = std::sqrt(std::max(0.0, ginv.quad(q)));
    if (std::abs(norm_gstar - 1.0) > c1_window) continue;  // cut-locus proxy
    Vec2 v = ginv.mul(q);
    double nv = norm_in(g, v);
    if (!(nv > 0)) continue;
    v = v / nv;
    // angle between g-unit vectors v and xi
    double cosang = std::clamp(g.a11 * v.x * xi_unit.x +
                                   g.a12 * (v.x * xi_unit.y + v.y * xi_unit.x) +
                                   g.a22 * v.y * xi_unit.y,
                               -1.0, 1.0);
    if (std::acos(cosang) > opt.tol_grad) continue;
    picked.push_back({s.rho[anchor.center], i});
  }
  std::sort(picked.begin(), picked.end());
  for (const auto& [p, i] : picked) {
    out.params.push_back(p);
    out.members.push_back(i);
  }
  out.sparse_warning = out.members.size() < 2;
  return out;
}

// ---------------------------------------------------------------------------
// Projective gauge machinery
// ---------------------------------------------------------------------------

/// A 1-form sampled per vertex.
struct OneFormField {
  Grid2D<double> px, py;
};

/// Gamma~^k_ij = Gamma^k_ij + delta^k_i phi_j + delta^k_j phi_i.
inline ChristoffelField gauge_transform(const ChristoffelField& gamma,
                                        const OneFormField& phi) {
  ChristoffelField out = gamma;
  int nx = phi.px.nx(), ny = phi.px.ny();
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      double fx = phi.px.at(i, j), fy = phi.py.at(i, j);
      out.c1[0].at(i, j) += 2 * fx;  // (1,1): 2 phi_1
      out.c1[1].at(i, j) += fy;      // (1,2): phi_2
      // (2,2) upper 1: zero
      out.c2[2].at(i, j) += 2 * fy;  // (2,2): 2 phi_2
      out.c2[1].at(i, j) += fx;      // (1,2): phi_1
      // (1,1) upper 2: zero
    }
  return out;
}

struct ProjectiveFit {
  OneFormField phi;
  double max_residual = 0.0;  // gauge relation residual after substitution
};

/// Difference-tensor contraction f_bar(v) = (Gbar^k_ij v^i v^j) g_kl v^l
/// / g(v,v), fitted per vertex to 2 phi(v) by least squares over the given
/// cone directions. Throws when the residual exceeds tol_gauge.
inline ProjectiveFit fit_projective_1form(
    const ManifoldModel& model, const ChristoffelField& gamma,
    const ChristoffelField& gamma_tilde, const std::vector<Vec2>& cone,
    double tol_gauge) {
  require(cone.size() >= 2, ErrorCode::InvalidRequest,
          "fit_projective_1form: need at least two cone directions");
  int nx = model.nx(), ny = model.ny();
  ProjectiveFit fit;
  fit.phi.px = Grid2D<double>(nx, ny);
  fit.phi.py = Grid2D<double>(nx, ny);

  auto gamma_at = [](const ChristoffelField& f, int i, int j, int k, int m) {
    return k == 0 ? f.c1[m].at(i, j) : f.c2[m].at(i, j);
  };

  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      Mat2 g = model.metric().at_vertex(i, j);
      double ata[3] = {0, 0, 0};
      double atb[2] = {0, 0};
      for (const Vec2& v : cone) {
        // Gbar(v, v), upper index -> vector
        double q11 = v.x * v.x, q12 = v.x * v.y, q22 = v.y * v.y;
        double w1 = (gamma_at(gamma_tilde, i, j, 0, 0) -
                     gamma_at(gamma, i, j, 0, 0)) * q11 +
                    2 * (gamma_at(gamma_tilde, i, j, 0, 1) -
                         gamma_at(gamma, i, j, 0, 1)) * q12 +
                    (gamma_at(gamma_tilde, i, j, 0, 2) -
                     gamma_at(gamma, i, j, 0, 2)) * q22;
        double w2 = (gamma_at(gamma_tilde, i, j, 1, 0) -
                     gamma_at(gamma, i, j, 1, 0)) * q11 +
                    2 * (gamma_at(gamma_tilde, i, j, 1, 1) -
                         gamma_at(gamma, i, j, 1, 1)) * q12 +
                    (gamma_at(gamma_tilde, i, j, 1, 2) -
                     gamma_at(gamma, i, j, 1, 2)) * q22;
        double fbar = (g.a11 * w1 * v.x + g.a12 * (w1 * v.y + w2 * v.x) +
                       g.a22 * w2 * v.y) /
                      g.quad(v);
        // 2 phi . v = fbar
        ata[0] += v.x * v.x;
        ata[1] += v.x * v.y;
        ata[2] += v.y * v.y;
        atb[0] += v.x * fbar / 2;
        atb[1] += v.y * fbar / 2;
      }
      Mat2 inv = Mat2{ata[0], ata[1], ata[2]}.inverse();
      Vec2 phi = inv.mul({atb[0], atb[1]});
      fit.phi.px.at(i, j) = phi.x;
      fit.phi.py.at(i, j) = phi.y;
    }

  ChristoffelField back = gauge_transform(gamma, fit.phi);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i)
      for (int k = 0; k < 2; ++k)
        for (int m = 0; m < 3; ++m)
          fit.max_residual =
              std::max(fit.max_residual,
                       std::abs(gamma_at(gamma_tilde, i, j, k, m) -
                                gamma_at(back, i, j, k, m)));
  require(fit.max_residual <= tol_gauge, ErrorCode::NotProjectivelyRelated,
          "fit_projective_1form: gauge relation residual above tol_gauge");
  return fit;
}

// ---------------------------------------------------------------------------
// Matveev invariant and geodesic-equivalence checks
// ---------------------------------------------------------------------------

/// I_0 = (det g / det g~)^(2/(n+1)) g~(v, v) with n = 2.
inline double matveev_invariant(const Mat2& g, const Mat2& g_tilde,
                                const Vec2& v) {
  require(v.norm() > 0, ErrorCode::InvalidRequest,
          "matveev_invariant: zero vector");
  require(g.spd() && g_tilde.spd(), ErrorCode::DegenerateMetric,
          "matveev_invariant: metrics must be positive definite");
  double ratio = g.det() / g_tilde.det();
  return std::pow(ratio, 2.0 / 3.0) * g_tilde.quad(v);
}

inline double matveev_invariant(const ManifoldModel& model_g,
                                const ManifoldModel& model_gt, const Vec2& x,
                                const Vec2& v) {
  return matveev_invariant(metric_at(model_g, x), metric_at(model_gt, x), v);
}

struct GeodesicEquivalenceReport {
  double max_relative_drift = 0.0;   // of I_0 along traced g-geodesics
  double max_conformal_deviation = 0.0;  // |f(x) - 1| when g = g~ on F
  bool f_equality_on_F = true;
  double f_mismatch = 0.0;  // max metric component gap on F
  std::size_t geodesics = 0;
};

/// Traces g-geodesics from the given anchors and reports the drift of I_0
/// along them. When g and g~ agree on F (checked first), also reports the
/// implied conformal factor's deviation from one.
inline GeodesicEquivalenceReport check_geodesic_equivalence(
    const ManifoldModel& model_g, const ManifoldModel& model_gt,
    const std::vector<std::pair<Vec2, Vec2>>& anchors, double t_max,
    double step = 0.0) {
  GeodesicEquivalenceReport rep;
  if (step <= 0) step = model_g.h() / 2;

  // F-equality gate
  for (std::size_t k : model_g.interior_F_vertices()) {
    int i = model_g.region_mask().ix(k), j = model_g.region_mask().iy(k);
    Mat2 a = model_g.metric().at_vertex(i, j);
    Mat2 b = model_gt.metric().at_vertex(i, j);
    rep.f_mismatch = std::max({rep.f_mismatch, std::abs(a.a11 - b.a11),
                               std::abs(a.a12 - b.a12),
                               std::abs(a.a22 - b.a22)});
  }
  rep.f_equality_on_F = rep.f_mismatch < 1e-9;

  for (const auto& [x, dir] : anchors) {
    Vec2 xi = normalized_in(metric_at(model_g, x), dir);
    GeodesicCurve c = trace_geodesic(model_g, x, xi, t_max, step);
    double lo = kInfDistance, hi = -kInfDistance;
    for (std::size_t m = 0; m < c.size(); ++m) {
      double i0 = matveev_invariant(model_g, model_gt, c.points[m],
                                    c.velocity[m]);
      lo = std::min(lo, i0);
      hi = std::max(hi, i0);
      if (rep.f_equality_on_F) {
        double gvv = metric_at(model_g, c.points[m]).quad(c.velocity[m]);
        double f = std::pow(i0 / gvv, -3.0);
        rep.max_conformal_deviation =
            std::max(rep.max_conformal_deviation, std::abs(f - 1.0));
      }
    }
    double mean = (lo + hi) / 2;
    if (mean > 0)
      rep.max_relative_drift =
          std::max(rep.max_relative_drift, (hi - lo) / mean);
    ++rep.geodesics;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Local metric recovery in chart coordinates
// ---------------------------------------------------------------------------

struct MetricRecovery {
  Mat2 metric_in_chart;   // estimate of the metric at the chart center
  Mat2 inverse_metric;    // G*, the fitted inverse metric
  Vec2 p_z;               // unit covector of d(., z_ref) in chart coords
  double fit_residual = 0.0;
  std::vector<Vec2> q;    // regressed covectors, one per reference index
};

struct CovectorFit {
  Vec2 q;
  double relative_residual = 0.0;  // rms misfit over the rms response
};

/// Covector of y -> D_y(z_w, z_ref) in chart coordinates at the center,
/// regressed (affine, Gaussian distance weights) over the chart
/// neighborhood. A large relative residual marks a reference point whose
/// distance function kinks across the neighborhood (cut contamination).
inline CovectorFit regress_reference_covector_checked(const DDFDataset& ds,
                                                      const Chart& chart,
                                                      std::size_t w) {
  double scale = 0.0;
  for (std::size_t m : chart.neighbors) {
    double dh1 = chart.coords[m][0] - chart.coords[chart.center][0];
    double dh2 = chart.coords[m][1] - chart.coords[chart.center][1];
    scale = std::max(scale, dh1 * dh1 + dh2 * dh2);
  }
  scale = std::max(scale, 1e-24);
  // weighted affine fit du ~ c0 + q . dH (the constant soaks up noise at
  // the center sample itself)
  double A[9] = {0, 0, 0, 0, 0, 0, 0, 0, 0};
  double b[3] = {0, 0, 0};
  for (std::size_t m : chart.neighbors) {
    double dh1 = chart.coords[m][0] - chart.coords[chart.center][0];
    double dh2 = chart.coords[m][1] - chart.coords[chart.center][1];
    double wt = std::exp(-2.0 * (dh1 * dh1 + dh2 * dh2) / scale);
    double du = ddf_value(ds.samples[m], w, chart.z_ref) -
                ddf_value(ds.samples[chart.center], w, chart.z_ref);
    double row[3] = {1.0, dh1, dh2};
    for (int r = 0; r < 3; ++r) {
      b[r] += wt * row[r] * du;
      for (int c = 0; c < 3; ++c) A[r * 3 + c] += wt * row[r] * row[c];
    }
  }
  auto sol = solve_linear(3, std::vector<double>(A, A + 9),
                          std::vector<double>(b, b + 3));
  CovectorFit fit;
  fit.q = {sol[1], sol[2]};
  double sse = 0.0, ssu = 0.0, wsum = 0.0;
  for (std::size_t m : chart.neighbors) {
    double dh1 = chart.coords[m][0] - chart.coords[chart.center][0];
    double dh2 = chart.coords[m][1] - chart.coords[chart.center][1];
    double wt = std::exp(-2.0 * (dh1 * dh1 + dh2 * dh2) / scale);
    double du = ddf_value(ds.samples[m], w, chart.z_ref) -
                ddf_value(ds.samples[chart.center], w, chart.z_ref);
    double pred = sol[0] + sol[1] * dh1 + sol[2] * dh2;
    sse += wt * (du - pred) * (du - pred);
    ssu += wt * du * du;
    wsum += wt;
  }
  (void)wsum;
  fit.relative_residual = ssu > 0 ? std::sqrt(sse / ssu) : 0.0;
  return fit;
}

inline Vec2 regress_reference_covector(const DDFDataset& ds,
                                       const Chart& chart, std::size_t w) {
  return regress_reference_covector_checked(ds, chart, w).q;
}

/// Picks reference indices for metric recovery: drops candidates whose
/// covector regression misfits badly, then greedily spreads the remaining
/// covector directions.
inline std::vector<std::size_t> select_reference_indices(
    const DDFDataset& ds, const Chart& chart,
    const std::vector<std::size_t>& candidates, std::size_t want = 12) {
  struct Entry {
    std::size_t w;
    Vec2 q;
    double res;
    double angle;
  };
  std::vector<Entry> entries;
  for (std::size_t w : candidates) {
    if (w == chart.z_ref || w == chart.tuple[0] || w == chart.tuple[1])
      continue;
    auto fit = regress_reference_covector_checked(ds, chart, w);
    entries.push_back(
        {w, fit.q, fit.relative_residual, std::atan2(fit.q.y, fit.q.x)});
  }
  if (entries.empty()) return {};
  std::vector<double> res;
  for (const auto& e : entries) res.push_back(e.res);
  std::nth_element(res.begin(), res.begin() + res.size() / 2, res.end());
  double cutoff = std::max(3.0 * res[res.size() / 2], 0.05);
  std::vector<Entry> clean;
  for (const auto& e : entries)
    if (e.res <= cutoff) clean.push_back(e);
  if (clean.size() < 5) clean = entries;

  // greedy angular spread
  std::vector<std::size_t> picked;
  std::vector<bool> used(clean.size(), false);
  for (std::size_t round = 0; round < std::min(want, clean.size()); ++round) {
    std::size_t best = 0;
    double best_score = -1;
    for (std::size_t i = 0; i < clean.size(); ++i) {
      if (used[i]) continue;
      double score = kInfDistance;
      for (std::size_t j = 0; j < clean.size(); ++j) {
        if (!used[j]) continue;
        double d = std::abs(clean[i].angle - clean[j].angle);
        d = std::min(d, 2 * 3.14159265358979323846 - d);
        score = std::min(score, d);
      }
      if (picked.empty()) score = -clean[i].res;  // start from the cleanest
      if (score > best_score) {
        best_score = score;
        best = i;
      }
    }
    used[best] = true;
    picked.push_back(clean[best].w);
  }
  return picked;
}

struct InverseMetricFit {
  Mat2 g_star;  // fitted inverse metric
  Vec2 p_z;     // unit covector
  double residual = 0.0;
};

/// Fits the inverse metric G* and the unit covector p_z from the constraint
/// family ||p_z||_{G*} = ||p_z + q_w||_{G*} = 1: the covectors {q_w} and the
/// origin lie on a common ellipse centered at -p_z, which is a linear fit,
/// followed by a Gauss-Newton polish of the unit-sphere residuals.
inline InverseMetricFit fit_inverse_metric_from_covectors(
    const std::vector<Vec2>& qs) {
  require(qs.size() >= 5, ErrorCode::InvalidRequest,
          "fit_inverse_metric_from_covectors: under-determined (5 unknowns: "
          "3 for the form, 2 for the covector)");
  // Linear stage: q^T G q - 2 q . b = 0, theta = (G11, G12, G22, b1, b2),
  // smallest-eigenvector solution of the normal matrix.
  std::vector<double> ata(25, 0.0);
  for (const Vec2& q : qs) {
    double row[5] = {q.x * q.x, 2 * q.x * q.y, q.y * q.y, -2 * q.x, -2 * q.y};
    for (int a = 0; a < 5; ++a)
      for (int b = 0; b < 5; ++b) ata[a * 5 + b] += row[a] * row[b];
  }
  auto eig = eigen_symmetric(5, ata);
  double th[5];
  for (int a = 0; a < 5; ++a) th[a] = eig.vectors[a * 5 + 0];
  Mat2 G{th[0], th[1], th[2]};
  if (G.a11 + G.a22 < 0) {
    for (int a = 0; a < 5; ++a) th[a] = -th[a];
    G = Mat2{th[0], th[1], th[2]};
  }
  require(G.spd(1e-14), ErrorCode::RecoveryFailed,
          "fit_inverse_metric_from_covectors: fitted quadratic form not "
          "positive definite");
  Vec2 b{th[3], th[4]};
  Vec2 c = G.inverse().mul(b);
  double scale = G.quad(c);
  require(scale > 0, ErrorCode::RecoveryFailed,
          "fit_inverse_metric_from_covectors: degenerate center scale");
  Mat2 Gstar = G * (1.0 / scale);
  Vec2 p_z = -c;

  // Gauss-Newton polish on r = ||p_z||^2_{G*} - 1 and ||p_z + q||^2_{G*} - 1
  for (int iter = 0; iter < 20; ++iter) {
    std::vector<double> JtJ(25, 0.0), Jtr(5, 0.0);
    double sse = 0.0;
    auto add_residual = [&](const Vec2& u) {
      double r = Gstar.quad(u) - 1.0;
      sse += r * r;
      Vec2 gu = Gstar.mul(u);
      double row[5] = {u.x * u.x, 2 * u.x * u.y, u.y * u.y, 2 * gu.x,
                       2 * gu.y};
      for (int a = 0; a < 5; ++a) {
        Jtr[a] += row[a] * r;
        for (int b2 = 0; b2 < 5; ++b2) JtJ[a * 5 + b2] += row[a] * row[b2];
      }
    };
    add_residual(p_z);
    for (const Vec2& q : qs) add_residual(p_z + q);
    for (int a = 0; a < 5; ++a) JtJ[a * 5 + a] += 1e-12;
    std::vector<double> stepv;
    try {
      stepv = solve_linear(5, JtJ, Jtr);
    } catch (const Error&) {
      break;
    }
    Mat2 Gnew{Gstar.a11 - stepv[0], Gstar.a12 - stepv[1],
              Gstar.a22 - stepv[2]};
    Vec2 pnew{p_z.x - stepv[3], p_z.y - stepv[4]};
    if (!Gnew.spd(0.0)) break;
    Gstar = Gnew;
    p_z = pnew;
    if (sse < 1e-24) break;
  }

  require(Gstar.spd(0.0), ErrorCode::RecoveryFailed,
          "fit_inverse_metric_from_covectors: inverse metric not positive "
          "definite");
  InverseMetricFit out;
  out.g_star = Gstar;
  out.p_z = p_z;
  out.residual = std::abs(Gstar.quad(p_z) - 1.0);
  for (const Vec2& q : qs)
    out.residual = std::max(out.residual, std::abs(Gstar.quad(p_z + q) - 1.0));
  return out;
}

inline MetricRecovery recover_metric_in_chart(
    const DDFDataset& ds, const Chart& chart,
    const std::vector<std::size_t>& reference_indices) {
  require(reference_indices.size() >= 5, ErrorCode::InvalidRequest,
          "recover_metric_in_chart: under-determined (need at least 5 "
          "reference points for 5 unknowns)");
  MetricRecovery out;
  for (std::size_t w : reference_indices) {
    require(w < ds.K() && w != chart.z_ref, ErrorCode::InvalidRequest,
            "recover_metric_in_chart: bad reference index");
    out.q.push_back(regress_reference_covector(ds, chart, w));
  }
  // Trimmed fit: covectors from kinked reference distances show up as
  // unit-sphere outliers; drop them while enough constraints remain.
  std::vector<Vec2> active = out.q;
  InverseMetricFit fit = fit_inverse_metric_from_covectors(active);
  for (int round = 0; round < 3 && active.size() > 6; ++round) {
    std::vector<double> res;
    for (const Vec2& q : active)
      res.push_back(std::abs(fit.g_star.quad(fit.p_z + q) - 1.0));
    std::vector<double> sorted = res;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2,
                     sorted.end());
    double med = sorted[sorted.size() / 2];
    double cutoff = std::max(5.0 * med, 0.02);
    std::vector<Vec2> kept;
    for (std::size_t i = 0; i < active.size(); ++i)
      if (res[i] <= cutoff) kept.push_back(active[i]);
    if (kept.size() == active.size() || kept.size() < 5) break;
    active = std::move(kept);
    fit = fit_inverse_metric_from_covectors(active);
  }
  out.inverse_metric = fit.g_star;
  out.metric_in_chart = fit.g_star.inverse();
  out.p_z = fit.p_z;
  out.fit_residual = fit.residual;
  return out;
}

// ---------------------------------------------------------------------------
// Geodesic families (direction cones per hidden sample)
// ---------------------------------------------------------------------------

struct GeodesicFamily {
  // per dataset sample: unit chord directions in chart coordinates, one per
  // sigma-set membership, canonicalized under v ~ -v
  std::vector<std::vector<Vec2>> cone;
  std::vector<std::size_t> uncovered;  // samples in no sigma set
};

inline GeodesicFamily build_geodesic_family(
    const DDFDataset& ds, const std::vector<SigmaSet>& sigma_sets,
    const Chart& chart) {
  GeodesicFamily fam;
  fam.cone.resize(ds.samples.size());
  for (const auto& ss : sigma_sets) {
    for (std::size_t m = 0; m < ss.members.size(); ++m) {
      // chord toward a neighbor member in chart coordinates
      std::size_t a = ss.members[m];
      std::size_t b = ss.members[m + 1 < ss.members.size() ? m + 1
                                                           : (m > 0 ? m - 1 : m)];
      if (a == b) continue;
      Vec2 chord{chart.coords[b][0] - chart.coords[a][0],
                 chart.coords[b][1] - chart.coords[a][1]};
      double n = chord.norm();
      if (!(n > 0)) continue;
      chord = chord / n;
      if (chord.y < 0 || (chord.y == 0 && chord.x < 0)) chord = -chord;
      fam.cone[a].push_back(chord);
    }
  }
  for (std::size_t i = 0; i < fam.cone.size(); ++i)
    if (fam.cone[i].empty()) fam.uncovered.push_back(i);
  return fam;
}

}  // namespace distdiff
