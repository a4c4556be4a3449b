#include <catch_amalgamated.hpp>

#include <cmath>

#include "distdiff/reconstruct.hpp"
#include "distdiff/wave.hpp"

using namespace distdiff;

namespace {

double torus_distance(const Vec2& a, const Vec2& b) {
  double dx = std::abs(a.x - b.x);
  double dy = std::abs(a.y - b.y);
  dx = std::min(dx, 1.0 - dx);
  dy = std::min(dy, 1.0 - dy);
  return std::sqrt(dx * dx + dy * dy);
}

ManifoldModel disc_model(int n = 128, double r = 0.2) {
  auto model = make_flat_torus(n);
  model.set_region_disc({0.5, 0.5}, r);
  return model;
}

}  // namespace

TEST_CASE("simulate_wave: precondition checks") {
  auto model = disc_model();
  SourceEvent ev{{0.5, 0.5}, 0.0, 1.0};
  SECTION("CFL violation is rejected before stepping") {
    CHECK_THROWS_AS(simulate_wave(model, ev, 0.5, model.h()), Error);
  }
  SECTION("zero magnitude is rejected") {
    SourceEvent bad = ev;
    bad.kappa = 0.0;
    CHECK_THROWS_AS(simulate_wave(model, bad, 0.5, cfl_limit(model)), Error);
  }
  SECTION("source outside M is rejected") {
    SourceEvent bad = ev;
    bad.y = {0.05, 0.05};
    CHECK_THROWS_AS(simulate_wave(model, bad, 0.5, cfl_limit(model)), Error);
  }
}

TEST_CASE("simulate_wave: causality is exact") {
  auto model = disc_model();
  double dt = cfl_limit(model);
  SourceEvent ev{{0.5, 0.5}, 0.15, 2.0};
  auto field = simulate_wave(model, ev, 0.5, dt);
  for (std::size_t n = 0; n < field.frames.size(); ++n) {
    if (field.times[n] > ev.s) break;
    for (std::size_t k = 0; k < field.frames[n].size(); ++k)
      CHECK(field.frames[n][k] == 0.0);
  }
  // and something is non-zero afterwards
  double total = 0.0;
  for (std::size_t k = 0; k < field.frames.back().size(); ++k)
    total += std::abs(field.frames.back()[k]);
  CHECK(total > 0.0);
}

TEST_CASE("simulate_wave: linear in the source magnitude") {
  auto model = disc_model(64);
  double dt = cfl_limit(model);
  SourceEvent e1{{0.5, 0.5}, 0.0, 1.0};
  SourceEvent e2 = e1;
  e2.kappa = 2.0;
  auto f1 = simulate_wave(model, e1, 0.4, dt);
  auto f2 = simulate_wave(model, e2, 0.4, dt);
  for (std::size_t n = 0; n < f1.frames.size(); n += 7)
    for (std::size_t k = 0; k < f1.frames[n].size(); k += 13)
      CHECK(f2.frames[n][k] ==
            Catch::Approx(2.0 * f1.frames[n][k]).margin(1e-14));
}

TEST_CASE("simulate_wave: wavefront radius tracks elapsed time") {
  auto model = disc_model(128);
  double dt = cfl_limit(model);
  SourceEvent ev{{0.5, 0.5}, 0.0, 1.0};
  auto field = simulate_wave(model, ev, 0.42, dt);
  double h = model.h();
  // contour at the front's half-rise; tiny fractions sit on the numerical
  // precursor foot and overshoot the radius
  for (double t : {0.2, 0.3, 0.4}) {
    std::size_t n = std::size_t(std::llround(t / dt));
    double peak = 0.0;
    for (std::size_t k = 0; k < field.frames[n].size(); ++k)
      peak = std::max(peak, std::abs(field.frames[n][k]));
    double radius = 0.0;
    for (std::size_t k = 0; k < field.frames[n].size(); ++k) {
      if (std::abs(field.frames[n][k]) >= 0.3 * peak) {
        Vec2 p = model.vertex(k);
        radius = std::max(radius, torus_distance(p, ev.y));
      }
    }
    CHECK(std::abs(radius - t) <= 2 * h + 2 * dt);
  }
}

TEST_CASE("wave energy is bounded after injection") {
  auto model = disc_model(64);
  double dt = cfl_limit(model);
  SourceEvent ev{{0.5, 0.5}, 0.05, 1.0};
  auto field = simulate_wave(model, ev, 0.6, dt);
  std::size_t inject = std::size_t(std::llround(ev.s / dt)) + 2;
  double e0 = wave_energy(field, inject);
  REQUIRE(e0 > 0.0);
  for (std::size_t n = inject; n + 1 < field.frames.size(); n += 9) {
    double e = wave_energy(field, n);
    CHECK(e <= e0 * 1.01);
    CHECK(e >= e0 * 0.99);
  }
}

TEST_CASE("pick_arrival_times: immediate, symmetric, and oracle-checked picks") {
  auto model = disc_model(128);
  double dt = cfl_limit(model);
  double h = model.h();
  SourceEvent ev{{0.5, 0.5}, 0.1, 1.0};
  auto field = simulate_wave(model, ev, 1.2, dt);

  SECTION("receiver at the source vertex picks the emission time") {
    auto rec = pick_arrival_times(field, {ev.y});
    CHECK(std::abs(rec.times[0] - ev.s) <= 2 * dt);
    CHECK(rec.confidence[0] > 0.0);
  }
  SECTION("equidistant receivers pick equal times") {
    auto rec =
        pick_arrival_times(field, {{0.2, 0.5}, {0.8, 0.5}, {0.5, 0.2}});
    CHECK(std::abs(rec.times[0] - rec.times[1]) <= dt);
    CHECK(std::abs(rec.times[0] - rec.times[2]) <= dt);
  }
  SECTION("distance oracle over 16 receivers") {
    std::vector<Vec2> receivers;
    for (int m = 0; m < 16; ++m) {
      double ang = 2 * 3.14159265358979 * m / 16.0;
      double r = 0.28 + 0.12 * (m % 3);
      receivers.push_back(model.geometry().canonical(
          {0.5 + r * std::cos(ang), 0.5 + r * std::sin(ang)}));
    }
    auto rec = pick_arrival_times(field, receivers);
    for (std::size_t a = 0; a < receivers.size(); ++a) {
      double d = torus_distance(ev.y, receivers[a]);
      CHECK(std::abs((rec.times[a] - ev.s) - d) <= 2 * h + 2 * dt);
    }
  }
  SECTION("no-arrival error when the window is too short") {
    auto tiny = simulate_wave(model, ev, 0.15, dt);
    CHECK_THROWS_AS(pick_arrival_times(tiny, {{0.95, 0.5}}), Error);
  }
}

TEST_CASE("ddf_from_arrivals: emission-time invariance is exact") {
  FSampleSet f;
  f.points = {{0, 0}, {0.3, 0}, {0, 0.4}};
  f.boundary_flags.assign(3, false);
  ArrivalRecord rec;
  rec.times = {1.4, 1.9, 1.6};
  rec.confidence = {1, 1, 1};
  auto s1 = ddf_from_arrivals(rec, f);
  CHECK(s1.rho[0] == 0.0);
  ArrivalRecord shifted = rec;
  for (auto& t : shifted.times) t += 7.3;
  auto s2 = ddf_from_arrivals(shifted, f);
  for (std::size_t a = 0; a < 3; ++a)
    CHECK(s1.rho[a] == Catch::Approx(s2.rho[a]).margin(1e-12));

  SECTION("shifting the emission time shifts every pick by whole steps") {
    auto model = disc_model(64);
    double dt = cfl_limit(model);  // a power of two on the flat torus
    std::vector<Vec2> receivers{{0.1, 0.5}, {0.5, 0.1}, {0.85, 0.55}};
    SourceEvent e1{{0.5, 0.5}, 16 * dt, 1.0};
    SourceEvent e2{{0.5, 0.5}, 48 * dt, 1.0};
    auto r1 = pick_arrival_times(simulate_wave(model, e1, 1.1, dt), receivers);
    auto r2 = pick_arrival_times(
        simulate_wave(model, e2, 1.1 + 32 * dt, dt), receivers);
    FSampleSet fs;
    fs.points = receivers;
    fs.boundary_flags.assign(3, false);
    auto d1 = ddf_from_arrivals(r1, fs);
    auto d2 = ddf_from_arrivals(r2, fs);
    for (std::size_t a = 0; a < 3; ++a) CHECK(d1.rho[a] == d2.rho[a]);
  }
  SECTION("incomplete records are rejected") {
    ArrivalRecord bad = rec;
    bad.times.pop_back();
    CHECK_THROWS_AS(ddf_from_arrivals(bad, f), Error);
    ArrivalRecord nan = rec;
    nan.times[1] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(ddf_from_arrivals(nan, f), Error);
  }
}

TEST_CASE("cross-pipeline: wave-derived samples match eikonal-derived ones") {
  auto model = disc_model(128, 0.2);
  double dt = cfl_limit(model);
  double h = model.h();
  auto f = sample_F_points(model, 10, FSampleStrategy::BoundaryBiased, 91);

  std::vector<SourceEvent> events;
  Rng rng(92);
  auto candidates = stratified_hidden_points(model, 30, 93);
  for (const auto& y : candidates) {
    if (events.size() >= 6) break;
    bool deep = true;  // the dispersion guard wants sources >= 10h from Z
    for (const auto& z : f.points)
      if (torus_distance(y, z) < 10.5 * h) deep = false;
    if (deep) events.push_back({y, rng.uniform(0.0, 0.4), 1.0 + rng.uniform()});
  }
  REQUIRE(events.size() == 6);

  auto wave_ds = wave_dataset(model, events, f, {.dt = dt});
  std::vector<Vec2> pts;
  for (const auto& ev : events) pts.push_back(ev.y);
  auto eik_ds = generate_dataset(model, pts, f, {});

  double budget = 4 * h + 4 * dt;
  for (const auto& ws : wave_ds.samples) {
    double best = kInfDistance;
    const DDFSample* match = nullptr;
    for (const auto& es : eik_ds.samples) {
      double d = torus_distance(es.ground_truth, ws.ground_truth);
      if (d < best) {
        best = d;
        match = &es;
      }
    }
    REQUIRE(best < 1e-9);
    CHECK(sup_norm_distance(ws, *match) <= budget);
  }

  SECTION("matching pairs the two datasets") {
    auto corr = match_datasets(as_blind(eik_ds), as_blind(wave_ds), budget);
    CHECK(corr.matched == wave_ds.samples.size());
    for (std::size_t i = 0; i < wave_ds.samples.size(); ++i) {
      REQUIRE(corr.pairing[i] != Correspondence::npos);
      CHECK(torus_distance(eik_ds.samples[corr.pairing[i]].ground_truth,
                           wave_ds.samples[i].ground_truth) < 1e-9);
    }
  }
}
