// Closed-loop Monte-Carlo executor and metrics engine: runs a controller
// against the nonlinear plant over the scheduled reference, logs per-step
// trajectories and reduces them to the per-phase tracking, observability,
// loss/energy and runtime figures.
#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "agile_mpc/controllers.hpp"
#include "agile_mpc/nmpc.hpp"
#include "agile_mpc/plant.hpp"
#include "agile_mpc/quaternion.hpp"
#include "agile_mpc/scenario.hpp"

namespace agile_mpc {

enum class ControllerKind { ulmpc, clmpc, aclmpc, nmpc };

inline const char* to_string(ControllerKind k) {
    switch (k) {
        case ControllerKind::ulmpc: return "ulmpc";
        case ControllerKind::clmpc: return "clmpc";
        case ControllerKind::aclmpc: return "aclmpc";
        case ControllerKind::nmpc: return "nmpc";
    }
    return "?";
}

inline std::optional<ControllerKind> controller_from_string(const std::string& s) {
    if (s == "ulmpc") return ControllerKind::ulmpc;
    if (s == "clmpc") return ControllerKind::clmpc;
    if (s == "aclmpc") return ControllerKind::aclmpc;
    if (s == "nmpc") return ControllerKind::nmpc;
    return std::nullopt;
}

struct RunConfig {
    ControllerKind controller{ControllerKind::aclmpc};
    int n_runs{10};
    std::uint64_t base_seed{42};
    Scenario scenario;
    double ts{2.0};
    double total_time_s{600.0};
    bool noise_on{true};
    int jobs{0};  // 0 -> hardware concurrency
    bool nmpc_preview{true};
    // Error quaternion applied to the initial attitude (identity = start
    // exactly on target).
    Quaternion initial_error{1.0, 0.0, 0.0, 0.0};
    // Test hook: replaces the scenario-driven reference when set.
    std::function<ReferenceSample(double)> reference_override;

    void validate() const {
        if (n_runs < 1) throw std::invalid_argument("RunConfig: n_runs must be >= 1");
        if (!(ts > 0.0) || !(total_time_s > 0.0)) {
            throw std::invalid_argument("RunConfig: ts and total time must be positive");
        }
    }
};

struct StepRecord {
    double t{0.0};
    Quaternion q;
    Vec3 omega{Vec3::Zero()};
    Vec3 h_rw{Vec3::Zero()};
    Quaternion q_t;
    double error_angle{0.0};  // [deg]
    Vec3 t_c{Vec3::Zero()};
    Vec3 t_applied{Vec3::Zero()};
    QpStatus status{QpStatus::optimal};
    bool fallback{false};
    double solver_time_s{0.0};
};

struct TrajectoryLog {
    std::vector<StepRecord> records;  // uniform grid, total/ts + 1 samples
};

constexpr double kSwathAngleDeg = 0.8022;

inline ReferenceSample sample_reference(const RunConfig& cfg, double t) {
    return cfg.reference_override ? cfg.reference_override(t) : reference_at(cfg.scenario, t);
}

/// Body-frame angular rate of the reference attitude at time t (finite
/// difference), used to start runs without an artificial rate transient.
inline Vec3 reference_body_rate(const RunConfig& cfg, double t) {
    const double dt = 1e-3;
    const Quaternion a = sample_reference(cfg, t).q_t;
    const Quaternion b = sample_reference(cfg, t + dt).q_t;
    const Quaternion rel = canonicalize(quat_mul(a.conjugate(), b));
    return 2.0 / dt * rel.vec();
}

inline TrajectoryLog run_closed_loop(const RunConfig& cfg, int run_index) {
    cfg.validate();
    const InertiaMatrix j = InertiaMatrix::nominal();
    ActuatorLimits limits;
    NoiseConfig noise;
    noise.seed = cfg.base_seed + static_cast<std::uint64_t>(run_index);
    if (!cfg.noise_on) {
        noise.gyro_std_deg_s = 0.0;
        noise.rw_std_rpm = 0.0;
    }
    Plant plant(j, limits, noise);

    const ReferenceSample ref0 = sample_reference(cfg, 0.0);
    PlantState init;
    init.q = quat_mul(cfg.initial_error, ref0.q_t).normalized();
    init.omega = reference_body_rate(cfg, 0.0);
    init.h_rw = Vec3::Zero();
    plant.set_state(init);

    LmpcConfig lcfg;
    lcfg.ts = cfg.ts;
    lcfg.limits = limits;
    NmpcConfig ncfg;
    ncfg.ts = cfg.ts;
    ncfg.limits = limits;

    std::unique_ptr<UlmpcController> ulmpc;
    std::unique_ptr<ClmpcController> clmpc;
    std::unique_ptr<AclmpcController> aclmpc;
    std::unique_ptr<NmpcController> nmpc;
    switch (cfg.controller) {
        case ControllerKind::ulmpc:
            lcfg.weight = 10.0;
            ulmpc = std::make_unique<UlmpcController>(j, lcfg);
            break;
        case ControllerKind::clmpc:
            lcfg.weight = 10.0;
            clmpc = std::make_unique<ClmpcController>(j, lcfg);
            break;
        case ControllerKind::aclmpc:
            lcfg.weight = 40.0;
            aclmpc = std::make_unique<AclmpcController>(j, lcfg);
            break;
        case ControllerKind::nmpc:
            nmpc = std::make_unique<NmpcController>(j, ncfg);
            break;
    }

    const int n_steps = static_cast<int>(std::llround(cfg.total_time_s / cfg.ts));
    TrajectoryLog log;
    log.records.reserve(n_steps + 1);
    std::vector<Quaternion> targets(ncfg.horizon + 1);

    for (int k = 0; k <= n_steps; ++k) {
        const double t = k * cfg.ts;
        const ReferenceSample ref = sample_reference(cfg, t);

        StepRecord rec;
        rec.t = t;
        rec.q = plant.state().q;
        rec.omega = plant.state().omega;
        rec.h_rw = plant.state().h_rw;
        rec.q_t = ref.q_t;
        rec.error_angle = error_angle_deg(quat_error(plant.state().q, ref.q_t));

        if (k < n_steps) {
            const Measurement meas = plant.measure_state();
            ControlResult res;
            Vec3 t_cmd;
            const auto tic = std::chrono::steady_clock::now();
            if (nmpc) {
                for (int i = 0; i <= ncfg.horizon; ++i) {
                    targets[i] = cfg.nmpc_preview && i > 0
                                     ? sample_reference(cfg, t + i * cfg.ts).q_t
                                     : ref.q_t;
                }
                res = nmpc->step(meas, targets);
                t_cmd = res.torque;  // NMPC optimizes the physical torque
            } else {
                LmpcInput input;
                input.q_e = tracking_error(meas.q_meas, ref.q_t);
                input.omega_meas = meas.omega_meas;
                input.h_rw_meas = meas.h_rw_meas;
                if (ulmpc) res = ulmpc->step(input);
                if (clmpc) res = clmpc->step(input);
                if (aclmpc) res = aclmpc->step(input);
                t_cmd = feedforward_torque(res.torque, meas.omega_meas, meas.h_rw_meas, j);
            }
            const auto toc = std::chrono::steady_clock::now();
            rec.solver_time_s = std::chrono::duration<double>(toc - tic).count();
            rec.t_c = res.torque;
            rec.status = res.status;
            rec.fallback = res.fallback;
            rec.t_applied = plant.step(t_cmd, cfg.ts);
        }
        log.records.push_back(rec);
    }
    return log;
}

// --- metrics ---------------------------------------------------------------

struct PhaseMetrics {
    double tt_s{0.0};
    double sse_deg{0.0};
    double mse_deg2{0.0};
    double observability_pct{0.0};
    double full_obs_s_per_area{0.0};
    double loss{0.0};
    double energy{0.0};
    double loss_transient{0.0};
    double loss_steady{0.0};
    double energy_transient{0.0};
    double energy_steady{0.0};
};

struct MetricsReport {
    std::map<std::string, PhaseMetrics> phases;
    double runtime_mean_s{0.0};
    double runtime_max_s{0.0};
    int fallback_count{0};
};

struct MetricWindow {
    double t_start{0.0};
    double t_end{0.0};
};

/// Seconds from window start until the error first drops below the
/// threshold and stays below it for the remaining samples of the window;
/// windows that never settle contribute their full duration.
inline double window_transition_time(const std::vector<double>& t,
                                     const std::vector<double>& err, const MetricWindow& w,
                                     double threshold_deg) {
    int first = -1, last = -1;
    for (int i = 0; i < static_cast<int>(t.size()); ++i) {
        if (t[i] >= w.t_start && t[i] < w.t_end) {
            if (first < 0) first = i;
            last = i;
        }
    }
    if (first < 0) return 0.0;
    int settle = -1;
    for (int i = last; i >= first; --i) {
        if (err[i] <= threshold_deg) settle = i;
        else break;
    }
    if (settle < 0) return w.t_end - w.t_start;
    return t[settle] - w.t_start;
}

namespace detail_metrics {

struct Series {
    std::vector<double> t, err, tsq;  // time, error angle, ||T_applied||^2
};

inline Series series_of(const TrajectoryLog& log) {
    Series s;
    s.t.reserve(log.records.size());
    for (const auto& r : log.records) {
        s.t.push_back(r.t);
        s.err.push_back(r.error_angle);
        s.tsq.push_back(r.t_applied.squaredNorm());
    }
    return s;
}

}  // namespace detail_metrics

/// Per-run metrics over the schedule's command windows, grouped by phase
/// label. Steady-state periods: last 15 s of each 30 s pointing window,
/// otherwise everything after the earlier of settling and 20 s.
inline MetricsReport compute_metrics(const TrajectoryLog& log, const Scenario& scenario,
                                     double ts) {
    const auto s = detail_metrics::series_of(log);
    MetricsReport rep;

    std::map<std::string, std::vector<MetricWindow>> windows;
    for (const auto& ph : scenario.phases) {
        windows[ph.label].push_back({ph.t_start, ph.t_end});
    }

    for (const auto& [label, wins] : windows) {
        PhaseMetrics pm;
        double tt_sum = 0.0;
        double obs_seconds_sum = 0.0;
        int n_obs = 0, n_total = 0;
        double sse_sum = 0.0, mse_sum = 0.0;
        int n_steady = 0;

        for (const auto& w : wins) {
            const double tt = window_transition_time(s.t, s.err, w, kSwathAngleDeg);
            tt_sum += tt;

            const bool pointing_window = (w.t_end - w.t_start) <= 30.0 + 1e-9;
            const double steady_from =
                pointing_window ? w.t_end - 15.0 : w.t_start + std::min(tt, 20.0);

            int win_obs = 0;
            for (int i = 0; i < static_cast<int>(s.t.size()); ++i) {
                if (s.t[i] < w.t_start || s.t[i] >= w.t_end) continue;
                ++n_total;
                const bool observable = s.err[i] <= kSwathAngleDeg;
                if (observable) {
                    ++n_obs;
                    ++win_obs;
                }
                pm.loss += s.err[i] * s.err[i];
                pm.energy += s.tsq[i];
                if (s.t[i] >= steady_from) {
                    sse_sum += s.err[i];
                    mse_sum += s.err[i] * s.err[i];
                    ++n_steady;
                    pm.loss_steady += s.err[i] * s.err[i];
                    pm.energy_steady += s.tsq[i];
                } else {
                    pm.loss_transient += s.err[i] * s.err[i];
                    pm.energy_transient += s.tsq[i];
                }
            }
            obs_seconds_sum += win_obs * ts;
        }

        pm.tt_s = wins.empty() ? 0.0 : tt_sum / wins.size();
        pm.full_obs_s_per_area = wins.empty() ? 0.0 : obs_seconds_sum / wins.size();
        pm.observability_pct = n_total > 0 ? 100.0 * n_obs / n_total : 0.0;
        pm.sse_deg = n_steady > 0 ? sse_sum / n_steady : 0.0;
        pm.mse_deg2 = n_steady > 0 ? mse_sum / n_steady : 0.0;
        rep.phases[label] = pm;
    }

    double time_sum = 0.0;
    int n_solves = 0;
    for (const auto& r : log.records) {
        if (r.t >= log.records.back().t) break;
        time_sum += r.solver_time_s;
        rep.runtime_max_s = std::max(rep.runtime_max_s, r.solver_time_s);
        if (r.fallback) ++rep.fallback_count;
        ++n_solves;
    }
    rep.runtime_mean_s = n_solves > 0 ? time_sum / n_solves : 0.0;
    return rep;
}

/// Arithmetic mean of the per-run reports.
inline MetricsReport aggregate(const std::vector<MetricsReport>& runs) {
    if (runs.empty()) throw std::invalid_argument("aggregate: no runs");
    MetricsReport out = runs.front();
    for (size_t i = 1; i < runs.size(); ++i) {
        const auto& r = runs[i];
        for (auto& [label, pm] : out.phases) {
            const auto it = r.phases.find(label);
            if (it == r.phases.end()) continue;
            const auto& o = it->second;
            pm.tt_s += o.tt_s;
            pm.sse_deg += o.sse_deg;
            pm.mse_deg2 += o.mse_deg2;
            pm.observability_pct += o.observability_pct;
            pm.full_obs_s_per_area += o.full_obs_s_per_area;
            pm.loss += o.loss;
            pm.energy += o.energy;
            pm.loss_transient += o.loss_transient;
            pm.loss_steady += o.loss_steady;
            pm.energy_transient += o.energy_transient;
            pm.energy_steady += o.energy_steady;
        }
        out.runtime_mean_s += r.runtime_mean_s;
        out.runtime_max_s = std::max(out.runtime_max_s, r.runtime_max_s);
        out.fallback_count += r.fallback_count;
    }
    const double n = static_cast<double>(runs.size());
    for (auto& [label, pm] : out.phases) {
        pm.tt_s /= n;
        pm.sse_deg /= n;
        pm.mse_deg2 /= n;
        pm.observability_pct /= n;
        pm.full_obs_s_per_area /= n;
        pm.loss /= n;
        pm.energy /= n;
        pm.loss_transient /= n;
        pm.loss_steady /= n;
        pm.energy_transient /= n;
        pm.energy_steady /= n;
    }
    out.runtime_mean_s /= n;
    return out;
}

/// Run the configured number of Monte-Carlo repetitions, at most
/// cfg.jobs in flight. Results are indexed by run and independent of
/// scheduling order.
inline std::vector<TrajectoryLog> run_many(const RunConfig& cfg) {
    cfg.validate();
    const int jobs = cfg.jobs > 0
                         ? cfg.jobs
                         : std::max(1u, std::thread::hardware_concurrency());
    std::vector<TrajectoryLog> logs(cfg.n_runs);
    if (jobs == 1 || cfg.n_runs == 1) {
        for (int i = 0; i < cfg.n_runs; ++i) logs[i] = run_closed_loop(cfg, i);
        return logs;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    const int workers = std::min(jobs, cfg.n_runs);
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&]() {
            for (int i = next.fetch_add(1); i < cfg.n_runs; i = next.fetch_add(1)) {
                logs[i] = run_closed_loop(cfg, i);
            }
        });
    }
    for (auto& th : pool) th.join();
    return logs;
}

// --- serialization ---------------------------------------------------------

inline const char* status_token(QpStatus s) {
    switch (s) {
        case QpStatus::optimal: return "ok";
        case QpStatus::max_iterations: return "maxiter";
        case QpStatus::infeasible: return "infeasible";
    }
    return "?";
}

/// One row per step, floating point at 9 significant digits.
inline std::string trajectory_csv(const TrajectoryLog& log) {
    std::string out =
        "t,q0,q1,q2,q3,omega_x,omega_y,omega_z,h_rw_x,h_rw_y,h_rw_z,"
        "qt0,qt1,qt2,qt3,error_angle_deg,tc_x,tc_y,tc_z,tap_x,tap_y,tap_z,"
        "solver_status,solver_time_s\n";
    char buf[640];
    for (const auto& r : log.records) {
        std::snprintf(buf, sizeof(buf),
                      "%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,"
                      "%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%s,%.9g\n",
                      r.t, r.q.q0, r.q.q1, r.q.q2, r.q.q3, r.omega.x(), r.omega.y(),
                      r.omega.z(), r.h_rw.x(), r.h_rw.y(), r.h_rw.z(), r.q_t.q0, r.q_t.q1,
                      r.q_t.q2, r.q_t.q3, r.error_angle, r.t_c.x(), r.t_c.y(), r.t_c.z(),
                      r.t_applied.x(), r.t_applied.y(), r.t_applied.z(),
                      r.fallback ? "fallback" : status_token(r.status), r.solver_time_s);
        out += buf;
    }
    return out;
}

/// Deterministic metrics document; wall-clock statistics are reported
/// separately so fixed seeds reproduce this file byte for byte.
inline nlohmann::json metrics_json(const MetricsReport& rep) {
    nlohmann::json j;
    for (const auto& [label, pm] : rep.phases) {
        nlohmann::json p;
        p["tt_s"] = pm.tt_s;
        p["sse_deg"] = pm.sse_deg;
        p["mse_deg2"] = pm.mse_deg2;
        p["observability_pct"] = pm.observability_pct;
        p["full_obs_s_per_area"] = pm.full_obs_s_per_area;
        p["loss"] = pm.loss;
        p["energy"] = pm.energy;
        if (label == "phase3") {
            p["loss_transient"] = pm.loss_transient;
            p["loss_steady"] = pm.loss_steady;
            p["energy_transient"] = pm.energy_transient;
            p["energy_steady"] = pm.energy_steady;
        }
        j[label] = p;
    }
    j["fallback_count"] = rep.fallback_count;
    return j;
}

inline nlohmann::json timing_json(const MetricsReport& rep) {
    nlohmann::json j;
    j["runtime_mean_s"] = rep.runtime_mean_s;
    j["runtime_max_s"] = rep.runtime_max_s;
    return j;
}

/// Plain aligned text table over controllers x phases, one metric row
/// group per phase, diff-friendly.
inline std::string compare_table(const std::vector<std::string>& names,
                                 const std::vector<MetricsReport>& reports) {
    static const char* kPhases[] = {"phase1", "phase2", "phase3"};
    static const char* kMetrics[] = {"tt_s", "sse_deg", "mse_deg2", "observability_pct"};
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-22s", "metric/phase");
    out += buf;
    for (const auto& n : names) {
        std::snprintf(buf, sizeof(buf), "%14s", n.c_str());
        out += buf;
    }
    out += "\n";
    for (const char* metric : kMetrics) {
        for (const char* phase : kPhases) {
            std::snprintf(buf, sizeof(buf), "%-12s %-9s", metric, phase);
            out += buf;
            for (const auto& rep : reports) {
                double v = 0.0;
                const auto it = rep.phases.find(phase);
                if (it != rep.phases.end()) {
                    const auto& pm = it->second;
                    if (std::string(metric) == "tt_s") v = pm.tt_s;
                    else if (std::string(metric) == "sse_deg") v = pm.sse_deg;
                    else if (std::string(metric) == "mse_deg2") v = pm.mse_deg2;
                    else v = pm.observability_pct;
                }
                std::snprintf(buf, sizeof(buf), "%14.4f", v);
                out += buf;
            }
            out += "\n";
        }
    }
    std::snprintf(buf, sizeof(buf), "%-22s", "runtime_mean_s");
    out += buf;
    for (const auto& rep : reports) {
        std::snprintf(buf, sizeof(buf), "%14.6f", rep.runtime_mean_s);
        out += buf;
    }
    out += "\n";
    return out;
}

}  // namespace agile_mpc
