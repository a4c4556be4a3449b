// distdiff: command-line front end. Subcommands cover model and dataset
// generation, the reconstruction pipeline, the invariant suite, wave
// experiments with first-arrival picking, and the graph counterexample.
//
// Exit codes: 0 success, 1 invariant failure, 2 insufficient data,
// 3 configuration error.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "distdiff/counterexample.hpp"
#include "distdiff/ddf.hpp"
#include "distdiff/eikonal.hpp"
#include "distdiff/manifold.hpp"
#include "distdiff/reconstruct.hpp"
#include "distdiff/reports.hpp"
#include "distdiff/wave.hpp"

namespace {

using namespace distdiff;
namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitInvariantFailure = 1;
constexpr int kExitInsufficientData = 2;
constexpr int kExitConfigError = 3;

int log_level() {
  static int level = [] {
    const char* env = std::getenv("DISTDIFF_LOG");
    if (!env) return 0;
    std::string v = env;
    if (v == "debug") return 2;
    if (v == "info") return 1;
    return 0;
  }();
  return level;
}

void log_info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << "[distdiff] " << msg << "\n";
}

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::InsufficientData:
    case ErrorCode::NoArrival:
    case ErrorCode::IncompleteRecord:
    case ErrorCode::Inconclusive:
      return kExitInsufficientData;
    default:
      return kExitConfigError;
  }
}

/// Tolerance overrides from repeated --tol name=value flags. Overrides only
/// tune reporting thresholds; hard invariants keep their built-in defaults.
class ToleranceSet {
 public:
  void parse(const std::vector<std::string>& entries) {
    for (const auto& e : entries) {
      auto pos = e.find('=');
      require(pos != std::string::npos, ErrorCode::InvalidRequest,
              "--tol expects name=value, got: " + e);
      values_[e.substr(0, pos)] = std::stod(e.substr(pos + 1));
    }
  }
  double get(const std::string& name, double fallback) const {
    auto it = values_.find(name);
    return it == values_.end() ? fallback : it->second;
  }
  json to_json() const {
    json j = json::object();
    for (const auto& [k, v] : values_) j[k] = v;
    return j;
  }

 private:
  std::map<std::string, double> values_;
};

ManifoldModel default_model(int resolution, const std::string& metric,
                            const Vec2& disc_center, double disc_radius) {
  ManifoldModel model =
      metric == "bump"
          ? make_conformal_torus(resolution,
                                 [](const Vec2& p) {
                                   constexpr double kTau = 6.283185307179586;
                                   return 0.18 * std::sin(kTau * p.x) *
                                          std::cos(kTau * p.y);
                                 })
          : make_flat_torus(resolution);
  model.set_region_disc(disc_center, disc_radius);
  return model;
}

std::vector<std::size_t> spread_reference_indices(const DDFDataset& ds,
                                                  const Chart& chart,
                                                  std::size_t want) {
  // restrict to the closer two thirds of the reference points (rho orders
  // them blind), then let the selector spread directions and drop misfits
  std::vector<std::size_t> order(ds.K());
  for (std::size_t a = 0; a < ds.K(); ++a) order[a] = a;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return ds.samples[chart.center].rho[a] < ds.samples[chart.center].rho[b];
  });
  order.resize(std::max<std::size_t>(8, 2 * ds.K() / 3));
  return select_reference_indices(ds, chart, order, want);
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string model_path;
  std::string out_dir;
  std::size_t k = 16;
  std::size_t samples = 500;
  std::uint64_t seed = 1;
  bool blind_only = false;
  int jobs = 0;
  std::string strategy = "boundary-biased";
  int resolution = 128;
  std::string metric = "flat";
};

int cmd_generate(const GenerateArgs& args) {
  fs::create_directories(args.out_dir);
  ManifoldModel model =
      args.model_path.empty()
          ? default_model(args.resolution, args.metric, {0.5, 0.5}, 0.3)
          : load_model(args.model_path);
  save_model(model, args.out_dir + "/model.json");

  FSampleStrategy strategy = args.strategy == "uniform"
                                 ? FSampleStrategy::Uniform
                                 : FSampleStrategy::BoundaryBiased;
  auto fsamples = sample_F_points(model, args.k, strategy, args.seed);
  auto hidden =
      stratified_hidden_points(model, args.samples, args.seed ^ 0x1dd5ULL);
  auto ds = generate_dataset(
      model, hidden, fsamples,
      {.blind = false, .seed = args.seed, .jobs = args.jobs});
  if (!args.blind_only) save_dataset(ds, args.out_dir + "/dataset.ddf");
  save_dataset(as_blind(ds), args.out_dir + "/dataset_blind.ddf");

  json prov;
  char hash_hex[19];
  std::snprintf(hash_hex, sizeof hash_hex, "%016llx",
                static_cast<unsigned long long>(ds.model_hash));
  prov["model_hash"] = hash_hex;
  prov["eps_solver"] = ds.eps_solver;
  prov["K"] = ds.K();
  prov["sample_count"] = ds.samples.size();
  prov["seed"] = args.seed;
  prov["generator"] = ds.generator;
  write_text_file(args.out_dir + "/provenance.json", prov.dump(2));
  log_info("generate: wrote " + args.out_dir);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// reconstruct
// ---------------------------------------------------------------------------

struct ReconstructArgs {
  std::string dataset_path;
  std::string model_path;
  std::string out_dir;
  std::uint64_t seed = 1;
  int jobs = 0;
  std::size_t chart_count = 24;
  std::size_t directions = 16;
  std::vector<std::string> tol_entries;
};

int cmd_reconstruct(const ReconstructArgs& args) {
  ToleranceSet tol;
  tol.parse(args.tol_entries);
  fs::create_directories(args.out_dir);
  ManifoldModel model = load_model(args.model_path);
  DDFDataset ds = load_dataset(args.dataset_path);
  if (ds.samples.size() < 14) {
    std::cerr << "reconstruct: insufficient samples (" << ds.samples.size()
              << ")\n";
    return kExitInsufficientData;
  }
  DDFDataset blind = as_blind(ds);
  bool instrumented = !ds.blind;
  double h = model.h();
  json report;
  report["tolerances"] = tol.to_json();
  report["instrumented_extras"] = instrumented;

  // --- boundary distances over flagged pairs --------------------------------
  {
    CsvWriter csv("a,b,recovered,known,abs_error");
    double worst = 0.0;
    int pairs = 0;
    for (std::size_t a = 0; a < ds.K(); ++a)
      for (std::size_t b = a + 1; b < ds.K(); ++b) {
        if (!ds.fsamples.boundary_flags[a] || !ds.fsamples.boundary_flags[b])
          continue;
        double rec = recover_boundary_distance(blind, a, b);
        double truth = ds.fsamples.f_distance(a, b);
        csv.row(a, b, rec, truth, std::abs(rec - truth));
        worst = std::max(worst, std::abs(rec - truth));
        ++pairs;
      }
    write_text_file(args.out_dir + "/boundary_distances.csv", csv.str());
    report["boundary"] = {{"pairs", pairs}, {"max_abs_error", worst}};
  }

  // --- charts over a spread of centers ---------------------------------------
  std::vector<Chart> accepted;
  {
    Rng rng(args.seed ^ 0xc4a7ULL);
    double sigma_min = tol.get("sigma_min", 0.05);
    std::vector<std::size_t> centers{rng.below(blind.samples.size())};
    while (centers.size() <
           std::min(args.chart_count, blind.samples.size())) {
      std::size_t best = 0;
      double best_d = -1;
      for (std::size_t i = 0; i < blind.samples.size(); ++i) {
        double dmin = kInfDistance;
        for (std::size_t c : centers)
          dmin = std::min(
              dmin, sup_norm_distance(blind.samples[i], blind.samples[c]));
        if (dmin > best_d) {
          best_d = dmin;
          best = i;
        }
      }
      centers.push_back(best);
    }
    int attempts = 0, accepted_count = 0;
    for (std::size_t c : centers) {
      // rho orders the reference points by distance from the center up to a
      // common constant; the closer two thirds stay clear of cut loci
      std::vector<std::size_t> order(blind.K());
      for (std::size_t a = 0; a < blind.K(); ++a) order[a] = a;
      std::sort(order.begin(), order.end(),
                [&](std::size_t a, std::size_t b) {
                  return blind.samples[c].rho[a] < blind.samples[c].rho[b];
                });
      std::size_t pool = std::max<std::size_t>(4, 2 * blind.K() / 3);
      for (int tries = 0; tries < 20; ++tries) {
        ++attempts;
        std::size_t zref = order[rng.below(pool)];
        std::size_t i1 = order[rng.below(pool)];
        std::size_t i2 = order[rng.below(pool)];
        if (i1 == i2 || i1 == zref || i2 == zref) continue;
        try {
          Chart chart = build_chart(
              blind, c, zref, {i1, i2},
              {.sigma_min = sigma_min, .min_center_distance = 4 * h});
          accepted.push_back(std::move(chart));
          ++accepted_count;
          break;
        } catch (const Error&) {
        }
      }
    }
    report["charts"] = {{"requested", centers.size()},
                        {"accepted", accepted_count},
                        {"attempts", attempts},
                        {"sigma_min", sigma_min}};
    CsvWriter csv("center,z_ref,i1,i2,conditioning");
    for (const auto& ch : accepted)
      csv.row(ch.center, ch.z_ref, ch.tuple[0], ch.tuple[1],
              ch.conditioning);
    write_text_file(args.out_dir + "/charts.csv", csv.str());
    if (!accepted.empty()) {
      SvgPlot plot;
      std::vector<Vec2> pts;
      for (const auto& xy : accepted.front().coords)
        pts.push_back({xy[0], xy[1]});
      plot.add_points(pts, "steelblue", 1.5);
      write_text_file(args.out_dir + "/chart_scatter.svg", plot.str());
    }
  }

  // --- sigma sets from every anchor ------------------------------------------
  std::vector<SigmaSet> sigma_sets;
  {
    double tol_grad = tol.get("tol_grad", 0.12);
    CsvWriter csv("anchor,direction_index,members,sparse");
    for (std::size_t a = 0; a < blind.fsamples.anchors.size(); ++a) {
      Vec2 z = blind.fsamples.points[blind.fsamples.anchors[a].center];
      Mat2 g = metric_at(model, z);  // F-side metric only
      for (std::size_t m = 0; m < args.directions; ++m) {
        double ang = 2 * 3.14159265358979323846 * double(m) /
                     double(args.directions);
        Vec2 xi = normalized_in(g, {std::cos(ang), std::sin(ang)});
        auto ss =
            extract_sigma_set(model, blind, a, xi, {.tol_grad = tol_grad});
        csv.row(a, m, ss.members.size(), ss.sparse_warning ? 1 : 0);
        sigma_sets.push_back(std::move(ss));
      }
    }
    write_text_file(args.out_dir + "/sigma_sets.csv", csv.str());
    std::size_t nonempty = 0;
    for (const auto& s : sigma_sets) nonempty += !s.members.empty();
    report["sigma"] = {{"anchors", blind.fsamples.anchors.size()},
                       {"directions", args.directions},
                       {"nonempty_sets", nonempty}};
    if (!accepted.empty() && !sigma_sets.empty()) {
      SvgPlot plot;
      std::vector<Vec2> all;
      for (const auto& xy : accepted.front().coords)
        all.push_back({xy[0], xy[1]});
      plot.add_points(all, "lightgray", 1.2);
      const char* colors[] = {"crimson", "seagreen", "darkorange",
                              "royalblue"};
      int ci = 0;
      for (const auto& s : sigma_sets) {
        if (s.members.size() < 3) continue;
        std::vector<Vec2> pts;
        for (std::size_t i : s.members)
          pts.push_back({accepted.front().coords[i][0],
                         accepted.front().coords[i][1]});
        plot.add_points(pts, colors[ci % 4], 2.5);
        ++ci;
      }
      write_text_file(args.out_dir + "/sigma_overlay.svg", plot.str());
    }
  }

  // --- local metric recovery at accepted chart centers -----------------------
  {
    CsvWriter csv(
        "center,g11,g12,g22,fit_residual,rel_frobenius_error_vs_truth");
    int recovered = 0, compared = 0, within = 0;
    for (const auto& chart : accepted) {
      auto refs = spread_reference_indices(blind, chart, 12);
      if (refs.size() < 5) continue;
      try {
        auto rec = recover_metric_in_chart(blind, chart, refs);
        ++recovered;
        double rel = -1.0;
        if (instrumented) {
          auto rows = chart_jacobian_vs_positions(model, ds, chart);
          Vec2 y = ds.samples[chart.center].ground_truth;
          Mat2 ginv = metric_at(model, y).inverse();
          Mat2 target{
              ginv.quad(rows[0]),
              rows[0].x * (ginv.a11 * rows[1].x + ginv.a12 * rows[1].y) +
                  rows[0].y * (ginv.a12 * rows[1].x + ginv.a22 * rows[1].y),
              ginv.quad(rows[1])};
          rel = (rec.inverse_metric - target).frobenius() /
                target.frobenius();
          ++compared;
          if (rel <= tol.get("metric_rel_error", 0.05)) ++within;
        }
        csv.row(chart.center, rec.metric_in_chart.a11,
                rec.metric_in_chart.a12, rec.metric_in_chart.a22,
                rec.fit_residual, rel);
      } catch (const Error&) {
      }
    }
    write_text_file(args.out_dir + "/metric_recovery.csv", csv.str());
    report["metric_recovery"] = {{"recovered", recovered},
                                 {"compared", compared},
                                 {"within_tolerance", within}};
  }

  if (instrumented) {
    auto rep = verify_embedding(model, ds, 5 * h, args.jobs);
    report["embedding"] = {
        {"max_lipschitz_ratio", rep.max_lipschitz_ratio},
        {"min_separation_ratio", rep.min_separation_ratio},
        {"pairs", rep.pairs_checked},
        {"violations", rep.bound_violations}};
  }

  write_text_file(args.out_dir + "/report.json", report.dump(2));
  log_info("reconstruct: wrote " + args.out_dir);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

struct VerifyArgs {
  std::string dataset_path;
  std::string model_path;
  std::string out_dir;
  int jobs = 0;
  std::vector<std::string> tol_entries;
};

int cmd_verify(const VerifyArgs& args) {
  ToleranceSet tol;
  tol.parse(args.tol_entries);
  ManifoldModel model = load_model(args.model_path);
  DDFDataset ds = load_dataset(args.dataset_path);
  require(!ds.blind, ErrorCode::RequiresInstrumented,
          "verify: instrumented dataset required");
  double eps = std::max(ds.eps_solver, 1e-4);
  double h = model.h();

  struct Check {
    std::string name;
    bool hard;
    bool pass;
    double value;
    double threshold;
  };
  std::vector<Check> checks;
  auto add = [&](const std::string& name, bool hard, double value,
                 double threshold) {
    checks.push_back({name, hard, value <= threshold, value, threshold});
  };

  // centered representation holds exactly
  double worst_rho0 = 0.0;
  for (const auto& s : ds.samples)
    worst_rho0 = std::max(worst_rho0, std::abs(s.rho[0]));
  add("rho0_zero", true, worst_rho0, 0.0);

  // triangle inequality against the known F distances
  double worst_triangle = 0.0;
  for (const auto& s : ds.samples)
    for (std::size_t a = 0; a < ds.K(); ++a)
      for (std::size_t b = 0; b < ds.K(); ++b)
        worst_triangle =
            std::max(worst_triangle, std::abs(ddf_value(s, a, b)) -
                                         ds.fsamples.f_distance(a, b));
  add("triangle_inequality", true, worst_triangle,
      2 * eps + tol.get("triangle_slack", 2 * h));

  // 2-Lipschitz embedding bound on a bounded subset
  {
    DDFDataset subset = ds;
    if (subset.samples.size() > 120) subset.samples.resize(120);
    auto rep = verify_embedding(model, subset, 5 * h, args.jobs);
    add("lipschitz_violations", true, double(rep.bound_violations), 0.0);
    add("lipschitz_max_ratio", false, rep.max_lipschitz_ratio,
        tol.get("lipschitz_ratio", 2.0 + 4 * eps / (5 * h)));
  }

  // boundary recovery is monotone in the sample count
  {
    double worst_gap = -kInfDistance;
    bool found = false;
    for (std::size_t a = 0; a < ds.K() && !found; ++a)
      for (std::size_t b = a + 1; b < ds.K() && !found; ++b) {
        if (!ds.fsamples.boundary_flags[a] ||
            !ds.fsamples.boundary_flags[b])
          continue;
        found = true;
        DDFDataset half = ds;
        half.samples.resize(
            std::max<std::size_t>(1, ds.samples.size() / 2));
        double full_err = std::abs(recover_boundary_distance(ds, a, b) -
                                   ds.fsamples.f_distance(a, b));
        double half_err = std::abs(recover_boundary_distance(half, a, b) -
                                   ds.fsamples.f_distance(a, b));
        worst_gap = full_err - half_err;
      }
    if (found) add("boundary_recovery_monotone", true, worst_gap, eps);
  }

  // solver error consistent with the recorded provenance
  {
    double remeasured = measure_solver_error(model, ds.fsamples.points[0]);
    add("eps_solver_consistent", false, remeasured,
        3 * ds.eps_solver + 1e-3);
  }

  add("metric_second_differences", false, model.max_second_difference(),
      tol.get("smoothness_bound", 1.0));

  json out;
  out["checks"] = json::array();
  bool hard_fail = false;
  for (const auto& c : checks) {
    out["checks"].push_back({{"name", c.name},
                             {"kind", c.hard ? "invariant" : "threshold"},
                             {"pass", c.pass},
                             {"value", c.value},
                             {"threshold", c.threshold}});
    if (c.hard && !c.pass) hard_fail = true;
  }
  out["pass"] = !hard_fail;
  std::string text = out.dump(2);
  if (!args.out_dir.empty()) {
    fs::create_directories(args.out_dir);
    write_text_file(args.out_dir + "/verify.json", text);
  }
  std::cout << text << "\n";
  return hard_fail ? kExitInvariantFailure : kExitOk;
}

// ---------------------------------------------------------------------------
// wave
// ---------------------------------------------------------------------------

struct WaveArgs {
  std::string model_path;
  std::string events_path;
  std::string out_dir;
  std::size_t k = 16;
  std::uint64_t seed = 1;
  int jobs = 0;
  double threshold = 0.3;
};

int cmd_wave(const WaveArgs& args) {
  fs::create_directories(args.out_dir);
  ManifoldModel model = load_model(args.model_path);
  std::ifstream in(args.events_path);
  require(in.good(), ErrorCode::InvalidRequest,
          "wave: cannot open events file " + args.events_path);
  json evdoc;
  in >> evdoc;
  std::vector<SourceEvent> events;
  for (const auto& e : evdoc)
    events.push_back(
        {{e.at("y").at(0).get<double>(), e.at("y").at(1).get<double>()},
         e.at("s").get<double>(),
         e.at("kappa").get<double>()});
  require(!events.empty(), ErrorCode::InsufficientData,
          "wave: event list is empty");

  auto fsamples = sample_F_points(model, args.k,
                                  FSampleStrategy::BoundaryBiased, args.seed);
  double dt = cfl_limit(model);
  std::vector<ArrivalRecord> records;
  auto wave_ds = wave_dataset(
      model, events, fsamples,
      {.dt = dt, .threshold = args.threshold, .jobs = args.jobs}, &records);
  save_dataset(wave_ds, args.out_dir + "/wave_dataset.ddf");
  save_dataset(as_blind(wave_ds), args.out_dir + "/wave_dataset_blind.ddf");

  CsvWriter csv("event,receiver,time,confidence");
  for (std::size_t e = 0; e < events.size(); ++e)
    for (std::size_t a = 0; a < fsamples.size(); ++a)
      csv.row(e, a, records[e].times[a], records[e].confidence[a]);
  write_text_file(args.out_dir + "/arrivals.csv", csv.str());

  // cross-pipeline match against the eikonal-generated dataset
  std::vector<Vec2> hidden;
  for (const auto& ev : events) hidden.push_back(ev.y);
  auto eik_ds = generate_dataset(model, hidden, fsamples,
                                 {.seed = args.seed, .jobs = args.jobs});
  double budget = 4 * model.h() + 4 * dt;
  auto corr = match_datasets(as_blind(eik_ds), as_blind(wave_ds), budget);

  std::size_t eligible = 0, correct = 0;
  for (std::size_t i = 0; i < wave_ds.samples.size(); ++i) {
    Vec2 y = wave_ds.samples[i].ground_truth;
    double sep = kInfDistance;
    for (std::size_t j = 0; j < wave_ds.samples.size(); ++j)
      if (j != i)
        sep = std::min(
            sep, model.geometry()
                     .displacement(y, wave_ds.samples[j].ground_truth)
                     .norm());
    if (sep <= 5 * model.h()) continue;
    ++eligible;
    if (corr.pairing[i] != Correspondence::npos &&
        model.geometry()
                .displacement(eik_ds.samples[corr.pairing[i]].ground_truth,
                              y)
                .norm() < 1e-9)
      ++correct;
  }
  json report;
  report["events"] = events.size();
  report["matched"] = corr.matched;
  report["max_matched_residual"] = corr.max_matched_residual;
  report["budget"] = budget;
  report["eligible_separated"] = eligible;
  report["correct_pairings"] = correct;
  bool pass = eligible == correct && corr.matched == events.size();
  report["pass"] = pass;
  write_text_file(args.out_dir + "/wave_report.json", report.dump(2));
  log_info("wave: wrote " + args.out_dir);
  return pass ? kExitOk : kExitInvariantFailure;
}

// ---------------------------------------------------------------------------
// counterexample
// ---------------------------------------------------------------------------

struct CounterexampleArgs {
  std::string out_dir;
  std::int64_t arm_length = 20;
  bool identical_gadgets = false;
  bool allow_short_arms = false;
};

int cmd_counterexample(const CounterexampleArgs& args) {
  fs::create_directories(args.out_dir);
  auto [g1, g2] = build_example_graphs(
      args.arm_length, {.identical_gadgets = args.identical_gadgets,
                        .enforce_separation = !args.allow_short_arms});
  write_text_file(args.out_dir + "/graph1.csv", graph_to_csv(g1));
  write_text_file(args.out_dir + "/graph2.csv", graph_to_csv(g2));
  auto rep = check_counterexample(g1, g2);
  json out;
  out["datasets_equal"] = rep.datasets_equal;
  out["isomorphic"] = rep.isomorphic;
  out["pass"] = rep.pass();
  out["arm_length"] = args.arm_length;
  write_text_file(args.out_dir + "/counterexample.json", out.dump(2));
  std::cout << out.dump(2) << "\n";
  return rep.pass() ? kExitOk : kExitInvariantFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"distance-difference data toolkit"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* sgen =
      app.add_subcommand("generate", "simulate a dataset from hidden sources");
  sgen->add_option("--model", gen.model_path, "model JSON (default built-in)");
  sgen->add_option("--out", gen.out_dir, "output directory")->required();
  sgen->add_option("--k", gen.k, "number of F sample points");
  sgen->add_option("--samples", gen.samples, "hidden source count");
  sgen->add_option("--seed", gen.seed, "RNG seed");
  sgen->add_flag("--blind", gen.blind_only,
                 "write only the blind dataset file");
  sgen->add_option("--jobs", gen.jobs, "worker count (0 = hardware)");
  sgen->add_option("--strategy", gen.strategy, "boundary-biased or uniform");
  sgen->add_option("--resolution", gen.resolution,
                   "built-in model grid resolution");
  sgen->add_option("--metric", gen.metric, "built-in metric: flat or bump");

  ReconstructArgs rec;
  auto* srec =
      app.add_subcommand("reconstruct", "run the reconstruction pipeline");
  srec->add_option("--dataset", rec.dataset_path, "dataset file")->required();
  srec->add_option("--model", rec.model_path, "model JSON (the known F side)")
      ->required();
  srec->add_option("--out", rec.out_dir, "output directory")->required();
  srec->add_option("--seed", rec.seed, "RNG seed");
  srec->add_option("--jobs", rec.jobs, "worker count");
  srec->add_option("--charts", rec.chart_count, "chart centers to attempt");
  srec->add_option("--directions", rec.directions,
                   "sigma directions per anchor");
  srec->add_option("--tol", rec.tol_entries, "tolerance override name=value");

  VerifyArgs ver;
  auto* sver = app.add_subcommand("verify", "run the invariant suite");
  sver->add_option("--dataset", ver.dataset_path, "instrumented dataset")
      ->required();
  sver->add_option("--model", ver.model_path, "model JSON")->required();
  sver->add_option("--out", ver.out_dir, "output directory (optional)");
  sver->add_option("--jobs", ver.jobs, "worker count");
  sver->add_option("--tol", ver.tol_entries, "tolerance override name=value");

  WaveArgs wav;
  auto* swav = app.add_subcommand("wave", "wave-equation pipeline");
  swav->add_option("--model", wav.model_path, "model JSON")->required();
  swav->add_option("--events", wav.events_path, "event list JSON")->required();
  swav->add_option("--out", wav.out_dir, "output directory")->required();
  swav->add_option("--k", wav.k, "number of F sample points");
  swav->add_option("--seed", wav.seed, "RNG seed");
  swav->add_option("--jobs", wav.jobs, "worker count");
  swav->add_option("--threshold", wav.threshold,
                   "arrival pick threshold fraction");

  CounterexampleArgs cex;
  auto* scex = app.add_subcommand("counterexample",
                                  "build and check the glued-graph pair");
  scex->add_option("--out", cex.out_dir, "output directory")->required();
  scex->add_option("--arm-length", cex.arm_length, "arm length L");
  scex->add_flag("--identical-gadgets", cex.identical_gadgets,
                 "degenerate control: all four gadgets equal");
  scex->add_flag("--allow-short-arms", cex.allow_short_arms,
                 "skip the separation precondition (demonstration)");

  // accept --tol.<name>=<value> as sugar for --tol <name>=<value>
  std::vector<std::string> arg_list;
  for (int i = 1; i < argc; ++i) {
    std::string a = argv[i];
    if (a.rfind("--tol.", 0) == 0) {
      arg_list.push_back("--tol");
      arg_list.push_back(a.substr(6));
    } else {
      arg_list.push_back(std::move(a));
    }
  }

  try {
    std::reverse(arg_list.begin(), arg_list.end());  // CLI11 parses reversed
    app.parse(arg_list);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfigError;
  }

  try {
    if (sgen->parsed()) return cmd_generate(gen);
    if (srec->parsed()) return cmd_reconstruct(rec);
    if (sver->parsed()) return cmd_verify(ver);
    if (swav->parsed()) return cmd_wave(wav);
    if (scex->parsed()) return cmd_counterexample(cex);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfigError;
  }
  return kExitConfigError;
}
