// Distance difference data: sampled F-points Z, per-hidden-source centered
// difference vectors rho (rho_a = d(x, z_a) - d(x, z_0)), dataset files,
// the boundary-distance recovery sup, and the boundary-restriction
// extension formula.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "distdiff/core.hpp"
#include "distdiff/eikonal.hpp"
#include "distdiff/manifold.hpp"

namespace distdiff {

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

struct FSampleSet {
  std::vector<Vec2> points;          // z_0 first; all in F
  std::vector<bool> boundary_flags;  // z_a lies on dM
  std::vector<double> pairwise;      // K*K distances d(z_a, z_b), row-major

  // Gradient stencils for sigma-set extraction: an anchor is an interior
  // F-point together with the indices of its four cross neighbors at
  // +-stencil_step grid cells.
  struct Anchor {
    std::size_t center;
    std::array<std::size_t, 4> stencil;  // east, west, north, south
  };
  std::vector<Anchor> anchors;
  int stencil_cells = 2;

  std::size_t size() const { return points.size(); }
  double f_distance(std::size_t a, std::size_t b) const {
    return pairwise[a * points.size() + b];
  }
};

struct DDFSample {
  std::vector<double> rho;  // rho[0] == 0 exactly
  bool has_ground_truth = false;
  Vec2 ground_truth{};
};

struct DDFDataset {
  FSampleSet fsamples;
  std::vector<DDFSample> samples;  // order-shuffled at generation
  bool blind = false;

  // provenance
  std::uint64_t model_hash = 0;
  double eps_solver = 0.0;
  std::string generator = kGeneratorVersion;

  std::size_t K() const { return fsamples.size(); }
};

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

enum class FSampleStrategy { BoundaryBiased, Uniform };

namespace detail {

// Hop distance from dM across F-vertices; used to pick deep interior points.
inline std::vector<int> f_depth_map(const ManifoldModel& model) {
  const auto& geo = model.geometry();
  const auto& mask = model.region_mask();
  std::vector<int> depth(mask.size(), -1);
  std::vector<std::size_t> frontier;
  if (model.boundary_vertices().empty()) {
    // no M at all: depth measured from nothing; treat everything as deep
    for (std::size_t k = 0; k < mask.size(); ++k) depth[k] = 1 << 20;
    return depth;
  }
  for (std::size_t k : model.boundary_vertices()) {
    depth[k] = 0;
    frontier.push_back(k);
  }
  int level = 0;
  while (!frontier.empty()) {
    std::vector<std::size_t> next;
    for (std::size_t k : frontier) {
      int i = mask.ix(k), j = mask.iy(k);
      for (int dj = -1; dj <= 1; ++dj)
        for (int di = -1; di <= 1; ++di) {
          if (di == 0 && dj == 0) continue;
          int ii = i + di, jj = j + dj;
          if (!geo.in_x_range(ii) || !geo.in_y_range(jj)) continue;
          std::size_t t = mask.idx(geo.wrap_x(ii), geo.wrap_y(jj));
          if (depth[t] != -1) continue;
          if (model.in_M(mask.ix(t), mask.iy(t))) continue;
          depth[t] = level + 1;
          next.push_back(t);
        }
    }
    frontier = std::move(next);
    ++level;
  }
  return depth;
}

}  // namespace detail

/// Choose K sample points in F. Boundary-biased picks ceil(K/2) boundary
/// vertices (farthest-point spread) and spends the remaining budget on
/// interior anchor stencils plus uniform fill; z_0 is a deepest interior
/// vertex. Deterministic for a fixed seed.
inline FSampleSet sample_F_points(const ManifoldModel& model, std::size_t K,
                                  FSampleStrategy strategy,
                                  std::uint64_t seed) {
  require(K >= 3, ErrorCode::InvalidRequest, "sample_F_points: need K >= 3");
  const auto& geo = model.geometry();
  const auto& mask = model.region_mask();
  std::vector<std::size_t> f_vertices;
  for (std::size_t k = 0; k < mask.size(); ++k)
    if (!model.in_M(mask.ix(k), mask.iy(k))) f_vertices.push_back(k);
  require(f_vertices.size() >= K, ErrorCode::InvalidRequest,
          "sample_F_points: K exceeds F vertex count");
  require(!model.interior_F_vertices().empty(), ErrorCode::InvalidRequest,
          "sample_F_points: F has empty interior");

  Rng rng(seed);
  auto depth = detail::f_depth_map(model);

  // z_0: deepest interior vertex, seeded tie-break
  std::size_t z0 = model.interior_F_vertices().front();
  {
    int best = -1;
    std::vector<std::size_t> ties;
    for (std::size_t k : model.interior_F_vertices()) {
      if (depth[k] > best) {
        best = depth[k];
        ties.clear();
      }
      if (depth[k] == best) ties.push_back(k);
    }
    z0 = ties[rng.below(ties.size())];
  }

  std::vector<std::size_t> chosen{z0};
  std::vector<bool> flags{false};
  FSampleSet out;

  auto already = [&](std::size_t k) {
    return std::find(chosen.begin(), chosen.end(), k) != chosen.end();
  };

  if (strategy == FSampleStrategy::BoundaryBiased &&
      !model.boundary_vertices().empty()) {
    std::size_t want_boundary = (K + 1) / 2;
    const auto& bd = model.boundary_vertices();
    // farthest-point spread over the rim, seeded start
    std::vector<std::size_t> picked;
    picked.push_back(bd[rng.below(bd.size())]);
    while (picked.size() < std::min(want_boundary, bd.size())) {
      std::size_t best_k = bd.front();
      double best_d = -1;
      for (std::size_t cand : bd) {
        double dmin = kInfDistance;
        for (std::size_t p : picked) {
          Vec2 d = geo.displacement(model.vertex(cand), model.vertex(p));
          dmin = std::min(dmin, d.norm());
        }
        if (dmin > best_d) {
          best_d = dmin;
          best_k = cand;
        }
      }
      picked.push_back(best_k);
    }
    for (std::size_t k : picked) {
      chosen.push_back(k);
      flags.push_back(true);
    }

    // interior anchor crosses while at least 5 slots remain
    int sc = out.stencil_cells;
    auto try_anchor = [&]() -> bool {
      for (int attempt = 0; attempt < 200; ++attempt) {
        std::size_t c =
            model.interior_F_vertices()[rng.below(
                model.interior_F_vertices().size())];
        if (depth[c] < 2 * sc + 2) continue;
        int i = mask.ix(c), j = mask.iy(c);
        int offs[4][2] = {{sc, 0}, {-sc, 0}, {0, sc}, {0, -sc}};
        std::array<std::size_t, 4> st;
        bool ok = !already(c);
        for (int m = 0; m < 4 && ok; ++m) {
          int ii = i + offs[m][0], jj = j + offs[m][1];
          if (!geo.in_x_range(ii) || !geo.in_y_range(jj)) {
            ok = false;
            break;
          }
          std::size_t k = mask.idx(geo.wrap_x(ii), geo.wrap_y(jj));
          if (model.in_M(mask.ix(k), mask.iy(k)) || already(k)) ok = false;
          st[m] = k;
        }
        if (!ok) continue;
        // keep anchors apart from each other
        bool clash = false;
        for (const auto& a : out.anchors) {
          Vec2 d = geo.displacement(model.vertex(a.center), model.vertex(c));
          if (d.norm() < 6 * geo.h) clash = true;
        }
        if (clash) continue;
        FSampleSet::Anchor anchor;
        anchor.center = chosen.size();
        chosen.push_back(c);
        flags.push_back(false);
        for (int m = 0; m < 4; ++m) {
          anchor.stencil[m] = chosen.size();
          chosen.push_back(st[m]);
          flags.push_back(false);
        }
        out.anchors.push_back(anchor);
        return true;
      }
      return false;
    };
    while (chosen.size() + 5 <= K) {
      if (!try_anchor()) break;
    }
  }

  // uniform fill to K
  int guard = 0;
  while (chosen.size() < K && guard++ < 100000) {
    std::size_t k = f_vertices[rng.below(f_vertices.size())];
    if (!already(k)) {
      chosen.push_back(k);
      flags.push_back(model.on_boundary(mask.ix(k), mask.iy(k)));
    }
  }
  require(chosen.size() == K, ErrorCode::InvalidRequest,
          "sample_F_points: could not place K distinct points");

  for (std::size_t k : chosen) out.points.push_back(model.vertex(k));
  out.boundary_flags = flags;
  return out;
}

/// Stratified-random hidden sources over M. Separation defaults to 2h but
/// shrinks when the requested count could not otherwise fit.
inline std::vector<Vec2> stratified_hidden_points(const ManifoldModel& model,
                                                  std::size_t count,
                                                  std::uint64_t seed,
                                                  double min_sep = -1.0) {
  require(!model.M_vertices().empty(), ErrorCode::InvalidRequest,
          "stratified_hidden_points: model has no M region");
  const auto& geo = model.geometry();
  double area = double(model.M_vertices().size()) * geo.h * geo.h;
  double cell = std::sqrt(area / (1.8 * double(count)));
  if (min_sep < 0) min_sep = std::min(2 * geo.h, 0.8 * cell);

  // candidate cells covering M's bounding structure: jitter one point per
  // cell per pass, accept under the separation constraint
  Rng rng(seed);
  std::vector<Vec2> accepted;
  double lx = geo.extent_x(), ly = geo.extent_y();
  int cx = std::max(1, int(lx / cell)), cy = std::max(1, int(ly / cell));
  for (int pass = 0; pass < 12 && accepted.size() < count; ++pass) {
    std::vector<std::size_t> order(std::size_t(cx) * std::size_t(cy));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    for (std::size_t cidx : order) {
      if (accepted.size() >= count) break;
      std::size_t ci = cidx % std::size_t(cx), cj = cidx / std::size_t(cx);
      Vec2 p{geo.origin.x + (double(ci) + rng.uniform()) * lx / cx,
             geo.origin.y + (double(cj) + rng.uniform()) * ly / cy};
      p = geo.canonical(p);
      if (model.region_at_point(p) != Region::M) continue;
      bool ok = true;
      for (const Vec2& q : accepted)
        if (geo.displacement(p, q).norm() < min_sep) {
          ok = false;
          break;
        }
      if (ok) accepted.push_back(p);
    }
  }
  require(accepted.size() >= count, ErrorCode::InsufficientData,
          "stratified_hidden_points: could not place requested count");
  accepted.resize(count);
  return accepted;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

struct GenerateOptions {
  bool blind = false;
  std::uint64_t seed = 1;
  int jobs = 0;  // 0: hardware concurrency
};

/// Distance fields from every z_a, shared by generation and verification.
inline std::vector<DistanceField> solve_fields_for(
    const ManifoldModel& model, const FSampleSet& fsamples, int jobs = 0) {
  std::vector<DistanceField> fields(fsamples.size());
  parallel_for(fsamples.size(), jobs, [&](std::size_t a) {
    fields[a] = solve_distance_field(model, fsamples.points[a]);
  });
  return fields;
}

/// One DDFSample per hidden source x: rho_a = d(x, z_a) - d(x, z_0).
/// Samples are stored shuffled; blind mode strips the hidden points.
inline DDFDataset generate_dataset(const ManifoldModel& model,
                                   const std::vector<Vec2>& hidden,
                                   const FSampleSet& fsamples,
                                   GenerateOptions opt = {}) {
  for (const Vec2& x : hidden)
    require(model.region_at_point(x) == Region::M,
            ErrorCode::SourceOutsideRegion,
            "generate_dataset: hidden source outside M");

  DDFDataset ds;
  ds.fsamples = fsamples;
  ds.blind = opt.blind;
  ds.model_hash = model.hash();

  auto fields = solve_fields_for(model, fsamples, opt.jobs);
  std::size_t K = fsamples.size();
  ds.fsamples.pairwise.assign(K * K, 0.0);
  for (std::size_t a = 0; a < K; ++a)
    for (std::size_t b = 0; b < K; ++b)
      ds.fsamples.pairwise[a * K + b] =
          a == b ? 0.0
                 : 0.5 * (distance(fields[a], fsamples.points[b]) +
                          distance(fields[b], fsamples.points[a]));

  ds.eps_solver = measure_solver_error(model, fsamples.points[0]);

  ds.samples.resize(hidden.size());
  parallel_for(hidden.size(), opt.jobs, [&](std::size_t i) {
    DDFSample s;
    s.rho.resize(K);
    double d0 = distance(fields[0], hidden[i]);
    s.rho[0] = 0.0;
    for (std::size_t a = 1; a < K; ++a)
      s.rho[a] = distance(fields[a], hidden[i]) - d0;
    if (!opt.blind) {
      s.has_ground_truth = true;
      s.ground_truth = hidden[i];
    }
    ds.samples[i] = std::move(s);
  });

  Rng rng(opt.seed ^ 0x5eedULL);
  rng.shuffle(ds.samples);
  return ds;
}

// ---------------------------------------------------------------------------
// Elementary operations
// ---------------------------------------------------------------------------

/// D_x(z_a, z_b) = rho_a - rho_b.
inline double ddf_value(const DDFSample& s, std::size_t a, std::size_t b) {
  require(a < s.rho.size() && b < s.rho.size(), ErrorCode::InvalidRequest,
          "ddf_value: index out of range");
  return s.rho[a] - s.rho[b];
}

/// Sup norm over Z x Z of D_x - D_y, reduced to max(delta) - min(delta).
inline double sup_norm_distance(const DDFSample& s1, const DDFSample& s2) {
  require(s1.rho.size() == s2.rho.size(), ErrorCode::IncompatibleDataset,
          "sup_norm_distance: mismatched K");
  double lo = 0.0, hi = 0.0;  // delta_0 = 0 participates
  for (std::size_t a = 1; a < s1.rho.size(); ++a) {
    double d = s1.rho[a] - s2.rho[a];
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  return hi - lo;
}

/// sup_x D_x(z_a, z_b) over the dataset; approaches d(z_a, z_b) for rim
/// points as hidden samples approach z_b.
inline double recover_boundary_distance(const DDFDataset& ds, std::size_t a,
                                        std::size_t b) {
  require(a < ds.K() && b < ds.K(), ErrorCode::InvalidRequest,
          "recover_boundary_distance: index out of range");
  require(ds.fsamples.boundary_flags[a] && ds.fsamples.boundary_flags[b],
          ErrorCode::InvalidRequest,
          "recover_boundary_distance: points not flagged as boundary");
  require(!ds.samples.empty(), ErrorCode::InsufficientData,
          "recover_boundary_distance: empty dataset");
  double best = -kInfDistance;
  for (const auto& s : ds.samples) best = std::max(best, ddf_value(s, a, b));
  return best;
}

// ---------------------------------------------------------------------------
// Boundary-restriction extension
// ---------------------------------------------------------------------------

/// Extends D_x from dF x dF samples to F x F queries using F-side distances
/// only:  D_x(w1, w2) = min_i [ d_F(w1, a_i) + max_j ( D_x(a_i, a_j)
///                              - d_F(w2, a_j) ) ].
/// F-side fields from the boundary samples are solved once and reused.
class BoundaryExtension {
 public:
  BoundaryExtension(const ManifoldModel& model,
                    std::vector<Vec2> boundary_points, int jobs = 0)
      : model_(&model), boundary_(std::move(boundary_points)) {
    require(!boundary_.empty(), ErrorCode::InsufficientData,
            "BoundaryExtension: empty boundary sample set");
    fields_.resize(boundary_.size());
    parallel_for(boundary_.size(), jobs, [&](std::size_t i) {
      fields_[i] =
          solve_distance_field(model, boundary_[i], {.restrict_to_F = true});
    });
  }

  std::size_t size() const { return boundary_.size(); }
  const std::vector<Vec2>& boundary_points() const { return boundary_; }

  double d_F(std::size_t i, const Vec2& w) const {
    return distance(fields_[i], w);
  }

  /// b_centered[i] = D_x(alpha_i, alpha_0) on the boundary samples.
  double value(const std::vector<double>& b_centered, const Vec2& w1,
               const Vec2& w2) const {
    require(b_centered.size() == boundary_.size(),
            ErrorCode::IncompatibleDataset,
            "BoundaryExtension: boundary vector size mismatch");
    double inner = -kInfDistance;
    for (std::size_t j = 0; j < boundary_.size(); ++j)
      inner = std::max(inner, -b_centered[j] - d_F(j, w2));
    double outer = kInfDistance;
    for (std::size_t i = 0; i < boundary_.size(); ++i)
      outer = std::min(outer, d_F(i, w1) + b_centered[i] + inner);
    return outer;
  }

 private:
  const ManifoldModel* model_;
  std::vector<Vec2> boundary_;
  std::vector<DistanceField> fields_;
};

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------
// Layout: "DDF1" | u32 header_len | header JSON | sample_count * K float64
// (little-endian) | u32 crc32 of all preceding bytes.

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  buf.append(b, 4);
}

}  // namespace detail

inline void save_dataset(const DDFDataset& ds, const std::string& path) {
  nlohmann::json header;
  header["version"] = 1;
  header["K"] = ds.K();
  nlohmann::json zpts = nlohmann::json::array();
  for (const auto& p : ds.fsamples.points) zpts.push_back({p.x, p.y});
  header["Z"] = zpts;
  header["boundary_flags"] = ds.fsamples.boundary_flags;
  header["pairwise_F_distances"] = ds.fsamples.pairwise;
  nlohmann::json anchors = nlohmann::json::array();
  for (const auto& a : ds.fsamples.anchors)
    anchors.push_back({{"center", a.center},
                       {"stencil", {a.stencil[0], a.stencil[1], a.stencil[2],
                                    a.stencil[3]}}});
  header["anchors"] = anchors;
  header["stencil_cells"] = ds.fsamples.stencil_cells;
  header["eps_solver"] = ds.eps_solver;
  header["blind"] = ds.blind;
  header["sample_count"] = ds.samples.size();
  char hash_hex[19];
  std::snprintf(hash_hex, sizeof hash_hex, "%016llx",
                static_cast<unsigned long long>(ds.model_hash));
  header["model_hash"] = hash_hex;
  header["generator"] = ds.generator;
  if (!ds.blind) {
    nlohmann::json gt = nlohmann::json::array();
    for (const auto& s : ds.samples) {
      require(s.has_ground_truth, ErrorCode::InvalidRequest,
              "save_dataset: instrumented dataset missing ground truth");
      gt.push_back({s.ground_truth.x, s.ground_truth.y});
    }
    header["ground_truth"] = gt;
  }

  std::string buf = "DDF1";
  std::string hj = header.dump();
  detail::put_u32(buf, std::uint32_t(hj.size()));
  buf += hj;
  for (const auto& s : ds.samples) {
    require(s.rho.size() == ds.K(), ErrorCode::Internal,
            "save_dataset: ragged sample");
    const char* raw = reinterpret_cast<const char*>(s.rho.data());
    buf.append(raw, s.rho.size() * sizeof(double));
  }
  detail::put_u32(buf, crc32(buf.data(), buf.size()));

  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::InvalidRequest,
          "save_dataset: cannot open " + path);
  out.write(buf.data(), std::streamsize(buf.size()));
  require(out.good(), ErrorCode::InvalidRequest,
          "save_dataset: write failed for " + path);
}

inline DDFDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::InvalidRequest,
          "load_dataset: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  require(buf.size() >= 12, ErrorCode::ChecksumMismatch,
          "load_dataset: file too short");
  require(buf.compare(0, 4, "DDF1") == 0, ErrorCode::VersionMismatch,
          "load_dataset: bad magic");
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  require(crc32(buf.data(), buf.size() - 4) == stored_crc,
          ErrorCode::ChecksumMismatch, "load_dataset: checksum failure");

  std::uint32_t hlen;
  std::memcpy(&hlen, buf.data() + 4, 4);
  require(8 + std::size_t(hlen) + 4 <= buf.size(),
          ErrorCode::ChecksumMismatch, "load_dataset: truncated header");
  nlohmann::json header = nlohmann::json::parse(buf.substr(8, hlen));
  require(header.at("version").get<int>() == 1, ErrorCode::VersionMismatch,
          "load_dataset: unsupported version");

  DDFDataset ds;
  std::size_t K = header.at("K").get<std::size_t>();
  for (const auto& p : header.at("Z"))
    ds.fsamples.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  ds.fsamples.boundary_flags =
      header.at("boundary_flags").get<std::vector<bool>>();
  ds.fsamples.pairwise =
      header.at("pairwise_F_distances").get<std::vector<double>>();
  for (const auto& a : header.at("anchors")) {
    FSampleSet::Anchor anchor;
    anchor.center = a.at("center").get<std::size_t>();
    for (int m = 0; m < 4; ++m)
      anchor.stencil[m] = a.at("stencil").at(m).get<std::size_t>();
    ds.fsamples.anchors.push_back(anchor);
  }
  ds.fsamples.stencil_cells = header.value("stencil_cells", 2);
  ds.eps_solver = header.at("eps_solver").get<double>();
  ds.blind = header.at("blind").get<bool>();
  ds.model_hash =
      std::stoull(header.at("model_hash").get<std::string>(), nullptr, 16);
  ds.generator = header.at("generator").get<std::string>();
  require(ds.fsamples.points.size() == K &&
              ds.fsamples.boundary_flags.size() == K &&
              ds.fsamples.pairwise.size() == K * K,
          ErrorCode::ChecksumMismatch, "load_dataset: inconsistent header");

  std::size_t count = header.at("sample_count").get<std::size_t>();
  std::size_t payload = count * K * sizeof(double);
  require(8 + hlen + payload + 4 == buf.size(), ErrorCode::ChecksumMismatch,
          "load_dataset: payload size mismatch");
  const char* base = buf.data() + 8 + hlen;
  ds.samples.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    ds.samples[i].rho.resize(K);
    std::memcpy(ds.samples[i].rho.data(), base + i * K * sizeof(double),
                K * sizeof(double));
  }
  if (!ds.blind) {
    const auto& gt = header.at("ground_truth");
    require(gt.size() == count, ErrorCode::ChecksumMismatch,
            "load_dataset: ground truth count mismatch");
    for (std::size_t i = 0; i < count; ++i) {
      ds.samples[i].has_ground_truth = true;
      ds.samples[i].ground_truth = {gt.at(i).at(0).get<double>(),
                                    gt.at(i).at(1).get<double>()};
    }
  }
  return ds;
}

/// Strip ground truth: the reconstruction-facing view of a dataset.
inline DDFDataset as_blind(const DDFDataset& ds) {
  DDFDataset out = ds;
  out.blind = true;
  for (auto& s : out.samples) {
    s.has_ground_truth = false;
    s.ground_truth = {};
  }
  return out;
}

}  // namespace distdiff
