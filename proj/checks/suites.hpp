#pragma once
// Acceptance checks shared by `visifilter check` and the acceptance binary.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "oracles.hpp"
#include "visifilter/io.hpp"
#include "visifilter/sim.hpp"

namespace visifilter::checks {

struct CheckResult {
  std::string id;
  std::string title;
  bool pass = false;
  std::string detail;
};

inline std::string fmt(double x, int prec = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, x);
  return buf;
}

inline void print(std::ostream& os, const CheckResult& r) {
  os << r.id << "  " << (r.pass ? "PASS" : "FAIL") << "  " << r.title;
  if (!r.detail.empty()) os << "  [" << r.detail << "]";
  os << '\n';
}

/// Frozen landmark seed of the bundled running example.
inline constexpr std::uint64_t kExample3Seed = 1;

// ---------------------------------------------------------------------------
// Per-run audit: the quantities the invariance, passthrough and event checks
// need, gathered while stepping a Simulator.

struct RunAudit {
  Metrics metrics;
  Trace trace;                 // only when requested
  double runtime_s = 0.0;
  double min_row = std::numeric_limits<double>::infinity();  // over all rows and ticks
  double sandwich_violation = 0.0;                           // max excess outside [W, w]
  int events = 0;
  double min_event_row = std::numeric_limits<double>::infinity();
  double max_event_h1_error = 0.0;  // |h1(x+) - (capped w - W)|
  int cap_violations = 0;           // active set not a capped subset of the visible set
  int passthrough_ticks = 0;
  double max_passthrough_error = 0.0;
  int emergency_stops = 0;
};

inline RunAudit audit_run(const Scenario& sc, bool keep_trace = false) {
  const auto start = std::chrono::steady_clock::now();
  Simulator sim(sc);
  RunAudit a;
  const bool filtered = sc.mode == RunMode::kFiltered;
  const double W = sc.filter.params.W;
  a.trace.config_dim = sim.model().config_dim();
  a.trace.input_dim = sim.model().input_dim();
  std::vector<double> t, w, wh, dev;
  std::vector<std::array<double, kNumFamilies>> h;
  std::vector<int> ev, vis, act;
  while (!sim.finished()) {
    TraceRecord r = sim.step();
    t.push_back(r.t);
    w.push_back(r.w);
    wh.push_back(r.w_hat);
    h.push_back(r.h_min);
    dev.push_back(r.deviation);
    ev.push_back(r.event ? 1 : 0);
    vis.push_back(r.visible);
    act.push_back(r.n_active);
    if (filtered) {
      double row_min = std::numeric_limits<double>::infinity();
      for (double v : r.h_min) {
        if (!std::isnan(v)) row_min = std::min(row_min, v);
      }
      a.min_row = std::min(a.min_row, row_min);
      a.sandwich_violation = std::max({a.sandwich_violation, W - r.w_hat, r.w_hat - r.w});
      a.emergency_stops += r.emergency_stop ? 1 : 0;
      if (r.event) {
        ++a.events;
        a.min_event_row = std::min(a.min_event_row, row_min);
        // Independent capped score: the whole visible set when it fits,
        // otherwise the sampled active subset, which must lie inside it.
        const auto ids = visible_set(sim.visibility(), sim.model().sensor_pose(r.q), sim.store());
        double capped = 0.0;
        if (ids.size() <= sc.filter.n_max) {
          capped = total_weight(sim.store(), ids);
          if (r.active_ids.size() != ids.size()) ++a.cap_violations;
        } else {
          capped = total_weight(sim.store(), r.active_ids);
          const bool subset = std::all_of(r.active_ids.begin(), r.active_ids.end(), [&](LandmarkId id) {
            return std::find(ids.begin(), ids.end(), id) != ids.end();
          });
          if (!subset || r.active_ids.size() != sc.filter.n_max) ++a.cap_violations;
        }
        a.max_event_h1_error = std::max(a.max_event_h1_error, std::abs(r.h_min[0] - (capped - W)));
      }
      if (r.active_constraints.empty()) {
        ++a.passthrough_ticks;
        double err = (r.v_star - r.v_ref).cwiseAbs().maxCoeff();
        if (r.v_lambda.size() > 0) err = std::max(err, r.v_lambda.cwiseAbs().maxCoeff());
        if (r.v_mu.size() > 0) err = std::max(err, r.v_mu.cwiseAbs().maxCoeff());
        a.max_passthrough_error = std::max(a.max_passthrough_error, err);
      }
    }
    if (keep_trace) a.trace.records.push_back(std::move(r));
  }
  a.metrics = metrics(t, w, wh, h, dev, ev, vis, act);
  a.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return a;
}

// ---------------------------------------------------------------------------
// Randomized invariance scenarios: planar robot, sector camera, 10 to 60
// landmarks, piecewise-constant references inside V, W in [2.5, 6.5], and a
// start configuration that sees more than W.

inline Scenario random_invariance_scenario(std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(eng); };
  for (int attempt = 0;; ++attempt) {
    Scenario sc = example3_scenario(eng());
    sc.name = "invariance_" + std::to_string(seed);
    sc.landmarks.box.count = std::uniform_int_distribution<int>(10, 60)(eng);
    sc.filter.params.W = uni(2.5, 6.5);
    sc.filter.seed = eng();
    sc.reference.kind = ReferenceKind::kPiecewise;
    sc.reference.period = 1.0;
    const Vec lo = sc.robot.input_lower, hi = sc.robot.input_upper;
    for (int i = 0; i < 20; ++i) {
      Vec v(3);
      for (int c = 0; c < 3; ++c) v(c) = uni(lo(c), hi(c));
      sc.reference.values.push_back(v);
    }
    const auto model = make_model(sc.robot);
    const auto vis = make_visibility(sc.visibility);
    const LandmarkStore store = make_landmarks(sc.landmarks, sc.world);
    for (int k = 0; k < 400; ++k) {
      const double r = uni(0.2, 1.5), phi = uni(-std::numbers::pi, std::numbers::pi);
      const Vec3 q(r * std::cos(phi), r * std::sin(phi), phi + std::numbers::pi + uni(-0.6, 0.6));
      const auto ids = visible_set(*vis, model->sensor_pose(q), store);
      if (total_weight(store, ids) > sc.filter.params.W + 0.25) {
        sc.robot.q0 = q;
        try {
          Simulator probe(sc);  // the filter's own feasibility test
          return sc;
        } catch (const InfeasibleStart&) {
        }
      }
    }
  }
}

/// Runs fn(i) for i in [0, n) on a small thread pool.
template <class Fn>
void parallel_for(int n, Fn&& fn) {
  const int workers = std::max(1, std::min<int>(n, static_cast<int>(std::thread::hardware_concurrency())));
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

inline std::vector<RunAudit> invariance_runs(int count, std::uint64_t base_seed = 1000) {
  std::vector<RunAudit> out(static_cast<std::size_t>(count));
  parallel_for(count, [&](int i) {
    out[static_cast<std::size_t>(i)] = audit_run(random_invariance_scenario(base_seed + static_cast<std::uint64_t>(i)));
  });
  return out;
}

/// Invariance scenarios with references scaled down to 5 % of V, so that
/// many ticks have no binding row and the passthrough branch is exercised.
inline std::vector<RunAudit> gentle_runs(int count, std::uint64_t base_seed = 5000) {
  std::vector<RunAudit> out(static_cast<std::size_t>(count));
  parallel_for(count, [&](int i) {
    Scenario sc = random_invariance_scenario(base_seed + static_cast<std::uint64_t>(i));
    for (Vec& v : sc.reference.values) v *= 0.05;
    out[static_cast<std::size_t>(i)] = audit_run(sc);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Individual checks.

inline CheckResult running_example(const RunAudit& a) {
  CheckResult r{"A1", "running example keeps at least 5 landmarks in view", false, ""};
  const bool ok = a.metrics.min_visible >= 5 && a.sandwich_violation <= 1e-6 && a.runtime_s <= 30.0;
  r.pass = ok;
  r.detail = "min visible " + std::to_string(a.metrics.min_visible) + ", sandwich excess " +
             fmt(a.sandwich_violation) + ", runtime " + fmt(a.runtime_s) + " s";
  return r;
}

inline CheckResult constraint_active(const RunAudit& filtered, const RunAudit& baseline) {
  CheckResult r{"A2", "unfiltered baseline loses the landmarks, filter deviates", false, ""};
  r.pass = baseline.metrics.min_visible < 5 && filtered.metrics.total_deviation > 0.0;
  r.detail = "baseline min visible " + std::to_string(baseline.metrics.min_visible) + ", filtered deviation " +
             fmt(filtered.metrics.total_deviation);
  return r;
}

inline CheckResult forward_invariance(const std::vector<RunAudit>& runs) {
  CheckResult r{"A3", "randomized scenarios stay inside the safe set", false, ""};
  double worst = std::numeric_limits<double>::infinity();
  std::int64_t breaches = 0;
  int estops = 0;
  for (const RunAudit& a : runs) {
    worst = std::min(worst, a.min_row);
    breaches += a.metrics.breaches;
    estops += a.emergency_stops;
  }
  r.pass = worst >= -1e-6 && breaches == 0;
  r.detail = std::to_string(runs.size()) + " runs, min row " + fmt(worst) + ", breaches " + std::to_string(breaches) +
             ", emergency stops " + std::to_string(estops);
  return r;
}

inline CheckResult passthrough(const std::vector<const RunAudit*>& runs) {
  CheckResult r{"A4", "inactive ticks pass the reference through", false, ""};
  int ticks = 0;
  double worst = 0.0;
  for (const RunAudit* a : runs) {
    ticks += a->passthrough_ticks;
    worst = std::max(worst, a->max_passthrough_error);
  }
  r.pass = ticks > 0 && worst <= 1e-9;
  r.detail = std::to_string(ticks) + " ticks, max error " + fmt(worst);
  return r;
}

inline CheckResult qp_oracle(int trials = 200, std::uint64_t seed = 5) {
  CheckResult r{"A5", "QP solver agrees with the projected-gradient oracle", false, ""};
  std::mt19937_64 eng(seed);
  std::uniform_int_distribution<int> kd(1, 8), pd(0, 20);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  double kkt = 0.0, gap = 0.0, scaled = 0.0;
  int failures = 0;
  for (int trial = 0; trial < trials; ++trial) {
    const QpProblem qp = oracle::random_qp(eng, kd(eng), pd(eng));
    const QpSolution s = solve(qp);
    if (!s.ok()) {
      ++failures;
      continue;
    }
    kkt = std::max(kkt, s.kkt_residual);
    const Vec ref = oracle::projected_gradient_qp(qp);
    gap = std::max(gap, std::abs(qp.objective(s.u_star) - qp.objective(ref)));
    QpProblem sq = qp;
    for (Eigen::Index i = 0; i < sq.rows(); ++i) {
      const double c = scale(eng);
      sq.G.row(i) *= c;
      sq.g(i) *= c;
    }
    const QpSolution ss = solve(sq);
    if (!ss.ok()) {
      ++failures;
      continue;
    }
    scaled = std::max(scaled, (ss.u_star - s.u_star).cwiseAbs().maxCoeff());
  }
  r.pass = failures == 0 && kkt <= 1e-9 && gap <= 1e-6 && scaled <= 1e-8;
  r.detail = std::to_string(trials) + " QPs, max KKT " + fmt(kkt) + ", objective gap " + fmt(gap) +
             ", scaling drift " + fmt(scaled) + (failures ? ", solver failures " + std::to_string(failures) : "");
  return r;
}

inline CheckResult disjunction_equivalence(int samples = 10000, std::uint64_t seed = 71) {
  CheckResult r{"A6", "mu-grid existence matches the visibility disjunction", false, ""};
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int checked = 0, mismatches = 0;
  while (checked < samples) {
    const double lam = u(eng);
    Vec rho(3);
    for (int c = 0; c < 3; ++c) rho(c) = u(eng);
    if (std::abs(lam) < 1e-3 || rho.cwiseAbs().minCoeff() < 1e-3) continue;
    ++checked;
    if (check_equivalence_sample(lam, rho, 1001) != (lam <= 0.0 || rho.minCoeff() >= 0.0)) ++mismatches;
  }
  r.pass = mismatches == 0;
  r.detail = std::to_string(checked) + " samples, " + std::to_string(mismatches) + " mismatches";
  return r;
}

/// Sensor-frame landmark positions integrated along the recorded trajectory
/// versus the direct frame transform after `horizon` seconds.
inline CheckResult propagation(const Scenario& sc, const Trace& trace, double horizon = 10.0) {
  CheckResult r{"A7", "propagated landmark positions match the frame transform", false, ""};
  const auto model = make_model(sc.robot);
  const LandmarkStore store = make_landmarks(sc.landmarks, sc.world);
  const double dt = sc.filter.dt;
  const auto steps = static_cast<std::size_t>(std::llround(horizon / dt));
  if (trace.records.size() <= steps) {
    r.detail = "trace shorter than the horizon";
    return r;
  }
  std::vector<Vec> q, v;
  for (std::size_t k = 0; k < steps; ++k) {
    q.push_back(trace.records[k].q);
    v.push_back(trace.records[k].v_star);
  }
  const Pose start = model->sensor_pose(trace.records.front().q);
  const Pose end = model->sensor_pose(trace.records[steps].q);
  double worst = 0.0;
  for (const Landmark& l : store.landmarks()) {
    const Vec3 p = propagate_landmark(*model, q, v, to_sensor(start, l.world_position), 0.0, horizon, dt);
    worst = std::max(worst, (p - to_sensor(end, l.world_position)).norm());
  }
  r.pass = worst <= 1e-4;
  r.detail = std::to_string(store.size()) + " landmarks over " + fmt(horizon) + " s, max error " + fmt(worst);
  return r;
}

inline CheckResult jump_nonnegativity(const std::vector<const RunAudit*>& runs) {
  CheckResult r{"A8", "observation resets keep every constraint nonnegative", false, ""};
  int events = 0, cap = 0;
  double min_row = std::numeric_limits<double>::infinity(), h1_err = 0.0;
  for (const RunAudit* a : runs) {
    events += a->events;
    cap += a->cap_violations;
    min_row = std::min(min_row, a->min_event_row);
    h1_err = std::max(h1_err, a->max_event_h1_error);
  }
  r.pass = events > 0 && min_row >= -1e-9 && h1_err <= 1e-9 && cap == 0;
  r.detail = std::to_string(events) + " events, min row " + fmt(min_row) + ", h1 reset error " + fmt(h1_err) +
             (cap ? ", bad active sets " + std::to_string(cap) : "");
  return r;
}

inline CheckResult wall_inspection(int M = 20) {
  CheckResult r{"A9", "wall inspection keeps enough tracked features", false, ""};
  WallInspectionParams p;
  p.M = M;
  const Scenario filtered = wall_inspection_scenario(p);
  Scenario baseline = filtered;
  baseline.mode = RunMode::kBaseline;
  const RunAudit fa = audit_run(filtered);
  const RunAudit ba = audit_run(baseline, true);
  // Baseline minimum while the robot is beside the sparse middle section.
  const double s0 = p.section_length, s1 = 2.0 * p.section_length;
  int sparse_min = std::numeric_limits<int>::max();
  for (const TraceRecord& rec : ba.trace.records) {
    if (rec.q(0) >= s0 && rec.q(0) <= s1) sparse_min = std::min(sparse_min, rec.n_active);
  }
  r.pass = fa.metrics.min_active >= M && fa.metrics.breaches == 0 && sparse_min < M;
  r.detail = "filtered min tracked " + std::to_string(fa.metrics.min_active) + ", baseline min in sparse section " +
             (sparse_min == std::numeric_limits<int>::max() ? std::string("n/a") : std::to_string(sparse_min));
  return r;
}

inline std::string trace_csv(const Trace& t) {
  std::ostringstream os;
  write_trace_csv(os, t);
  return os.str();
}

inline CheckResult determinism(const Scenario& sc, const std::string& first_csv) {
  CheckResult r{"A10", "repeated runs give byte-identical traces", false, ""};
  const std::string again = trace_csv(run(sc));
  // The resolved document must reproduce the run as well.
  const std::string doc = scenario_to_json(sc).dump(2);
  const std::string resolved = trace_csv(run(scenario_from_json(parse_json_text(doc), doc)));
  r.pass = again == first_csv && resolved == first_csv;
  r.detail = std::to_string(first_csv.size()) + " bytes, rerun " + (again == first_csv ? "identical" : "differs") +
             ", resolved rerun " + (resolved == first_csv ? "identical" : "differs");
  return r;
}

// ---------------------------------------------------------------------------
// Suites for `visifilter check`.

inline std::vector<CheckResult> run_suite(const std::string& name, const Scenario& example3) {
  std::vector<CheckResult> out;
  const bool all = name == "all";
  if (all || name == "invariance") {
    const RunAudit a1 = audit_run(example3);
    const auto runs = invariance_runs(100);
    const auto gentle = gentle_runs(20);
    out.push_back(running_example(a1));
    out.push_back(forward_invariance(runs));
    std::vector<const RunAudit*> refs{&a1};
    for (const RunAudit& a : runs) refs.push_back(&a);
    std::vector<const RunAudit*> with_gentle = refs;
    for (const RunAudit& a : gentle) with_gentle.push_back(&a);
    out.push_back(passthrough(with_gentle));
    out.push_back(jump_nonnegativity(refs));
  }
  if (all || name == "qp-oracle") out.push_back(qp_oracle());
  if (all || name == "equivalence") out.push_back(disjunction_equivalence());
  if (all || name == "propagation") {
    const RunAudit a = audit_run(example3, true);
    out.push_back(propagation(example3, a.trace));
  }
  return out;
}

inline bool known_suite(const std::string& name) {
  return name == "all" || name == "invariance" || name == "qp-oracle" || name == "equivalence" ||
         name == "propagation";
}

}  // namespace visifilter::checks
