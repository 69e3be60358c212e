// Reference generation: analytic circular orbit, LVLH frame, ground-target
// line-of-sight pointing and the three-phase agility schedule.
//
// The target frame points the boresight (LVLH z, nadir when idle) at a
// ground location displaced from the subsatellite point by latitude and
// longitude offsets on a spherical non-rotating Earth. The target attitude
// composes that minimal rotation with the LVLH attitude.
#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "agile_mpc/quaternion.hpp"

namespace agile_mpc {

struct OrbitConfig {
    double altitude_km{500.0};
    double inclination_deg{45.0};
    double epoch_phase_rad{0.0};
    double earth_radius_km{6378.137};
    double mu_km3_s2{3.986004418e5};
    // Satellite-centric pointing cone; requests steering the boresight
    // further off nadir than this are rejected.
    double max_boresight_angle_deg{89.0};

    double orbit_radius_km() const { return earth_radius_km + altitude_km; }
    double mean_motion_rad_s() const {
        const double r = orbit_radius_km();
        return std::sqrt(mu_km3_s2 / (r * r * r));
    }
};

/// One schedule interval. Static entries hold a fixed (dlat, dlon) offset;
/// drift entries advance dlon linearly from dlon0 at dlon_rate.
struct PhaseEntry {
    std::string label;  // phase1 | phase2 | phase3 | others
    double t_start{0.0};
    double t_end{0.0};
    bool drift{false};
    double dlat_deg{0.0};
    double dlon0_deg{0.0};
    double dlon_rate_deg_s{0.0};
};

struct ReferenceSample {
    double t{0.0};
    Quaternion q_t;
    Quaternion q_lvlh_eci;
};

struct Scenario {
    OrbitConfig orbit;
    std::vector<PhaseEntry> phases;
    double total_time_s{600.0};
};

/// Circular-orbit position and velocity in the inertial frame [km, km/s].
/// The ascending node lies along +X; the orbit plane is inclined about X.
inline void orbit_state(const OrbitConfig& cfg, double t, Vec3& position, Vec3& velocity) {
    const double r = cfg.orbit_radius_km();
    const double n = cfg.mean_motion_rad_s();
    const double u = cfg.epoch_phase_rad + n * t;
    const double ci = std::cos(cfg.inclination_deg * M_PI / 180.0);
    const double si = std::sin(cfg.inclination_deg * M_PI / 180.0);
    position = r * Vec3(std::cos(u), std::sin(u) * ci, std::sin(u) * si);
    velocity = r * n * Vec3(-std::sin(u), std::cos(u) * ci, std::cos(u) * si);
}

/// Attitude of the LVLH frame: z nadir, y negative orbit normal, x closing
/// the right-handed triad (along-track). rotate(q, v_lvlh) gives ECI
/// coordinates.
inline Quaternion lvlh_quaternion(const Vec3& position, const Vec3& velocity) {
    const Vec3 h = position.cross(velocity);
    if (h.norm() < 1e-12) {
        throw std::invalid_argument("lvlh_quaternion: degenerate position/velocity pair");
    }
    const Vec3 z = -position.normalized();
    const Vec3 y = -h.normalized();
    const Vec3 x = y.cross(z);
    Mat3 rot;
    rot.col(0) = x;
    rot.col(1) = y;
    rot.col(2) = z;
    return detail::quat_from_rotation_matrix(rot);
}

/// Ground point displaced from the subsatellite point by (dlat, dlon) on
/// the spherical Earth, with pole fold-over.
inline Vec3 ground_target_point(const Vec3& sat_position, double dlat_deg, double dlon_deg,
                                double earth_radius_km) {
    const Vec3 rhat = sat_position.normalized();
    const double lat = std::asin(std::clamp(rhat.z(), -1.0, 1.0));
    const double lon = std::atan2(rhat.y(), rhat.x());
    double tlat = lat + dlat_deg * M_PI / 180.0;
    double tlon = lon + dlon_deg * M_PI / 180.0;
    if (tlat > M_PI / 2.0) {
        tlat = M_PI - tlat;
        tlon += M_PI;
    } else if (tlat < -M_PI / 2.0) {
        tlat = -M_PI - tlat;
        tlon += M_PI;
    }
    return earth_radius_km *
           Vec3(std::cos(tlat) * std::cos(tlon), std::cos(tlat) * std::sin(tlon),
                std::sin(tlat));
}

/// Eq-25-style composition: the minimal rotation taking the LVLH boresight
/// onto the satellite-to-target line of sight, chained with the LVLH
/// attitude.
inline Quaternion target_quaternion(const Quaternion& q_lvlh_eci, const Vec3& sat_position,
                                    double dlat_deg, double dlon_deg, const OrbitConfig& cfg) {
    if (std::abs(dlat_deg) > 60.0 || std::abs(dlon_deg) > 60.0) {
        throw std::invalid_argument("target_quaternion: offsets limited to +/-60 deg");
    }
    const Vec3 target =
        ground_target_point(sat_position, dlat_deg, dlon_deg, cfg.earth_radius_km);
    const Vec3 los = (target - sat_position).normalized();

    const Vec3 nadir = -sat_position.normalized();
    const double off_nadir =
        std::acos(std::clamp(los.dot(nadir), -1.0, 1.0)) * 180.0 / M_PI;
    if (off_nadir > cfg.max_boresight_angle_deg) {
        throw std::domain_error("target_quaternion: line of sight outside the pointing cone");
    }

    const Vec3 los_lvlh = rotate(q_lvlh_eci.conjugate(), los);
    // shortest arc from the LVLH z axis onto the line of sight
    const Vec3 ez = Vec3::UnitZ();
    const double c = ez.dot(los_lvlh);
    const Vec3 axis = ez.cross(los_lvlh);
    Quaternion q_target_lvlh;
    if (axis.norm() < 1e-14 && c > 0.0) {
        q_target_lvlh = Quaternion::identity();
    } else {
        q_target_lvlh = Quaternion(1.0 + c, axis.x(), axis.y(), axis.z()).normalized();
    }
    return quat_mul(q_lvlh_eci, q_target_lvlh);
}

inline void offsets_at(const Scenario& sc, double t, double& dlat_deg, double& dlon_deg) {
    dlat_deg = 0.0;
    dlon_deg = 0.0;
    for (const auto& ph : sc.phases) {
        if (t >= ph.t_start && t < ph.t_end) {
            dlat_deg = ph.dlat_deg;
            dlon_deg = ph.drift ? ph.dlon0_deg + ph.dlon_rate_deg_s * (t - ph.t_start)
                                : ph.dlon0_deg;
            return;
        }
    }
}

inline ReferenceSample reference_at(const Scenario& sc, double t) {
    Vec3 r, v;
    orbit_state(sc.orbit, t, r, v);
    ReferenceSample s;
    s.t = t;
    s.q_lvlh_eci = lvlh_quaternion(r, v);
    double dlat = 0.0, dlon = 0.0;
    offsets_at(sc, t, dlat, dlon);
    if (dlat == 0.0 && dlon == 0.0) {
        s.q_t = s.q_lvlh_eci;
    } else {
        s.q_t = target_quaternion(s.q_lvlh_eci, r, dlat, dlon, sc.orbit);
    }
    return s;
}

// --- scenario file handling -----------------------------------------------

struct ScenarioIssue {
    bool fatal{false};
    std::string message;
};

inline std::vector<ScenarioIssue> validate_scenario(const Scenario& sc) {
    std::vector<ScenarioIssue> issues;
    auto sorted = sc.phases;
    std::sort(sorted.begin(), sorted.end(),
              [](const PhaseEntry& a, const PhaseEntry& b) { return a.t_start < b.t_start; });
    double covered = 0.0;
    for (size_t i = 0; i < sorted.size(); ++i) {
        const auto& ph = sorted[i];
        std::ostringstream os;
        if (!(ph.t_end > ph.t_start)) {
            os << "entry '" << ph.label << "': empty interval [" << ph.t_start << ", "
               << ph.t_end << ")";
            issues.push_back({true, os.str()});
            continue;
        }
        if (i > 0 && ph.t_start < sorted[i - 1].t_end) {
            os << "overlap between [" << sorted[i - 1].t_start << ", " << sorted[i - 1].t_end
               << ") and [" << ph.t_start << ", " << ph.t_end << ")";
            issues.push_back({true, os.str()});
        } else if (ph.t_start > covered) {
            os << "gap [" << covered << ", " << ph.t_start
               << ") not scheduled; zero offsets assumed";
            issues.push_back({false, os.str()});
        }
        covered = std::max(covered, ph.t_end);
    }
    if (covered < sc.total_time_s) {
        std::ostringstream os;
        os << "gap [" << covered << ", " << sc.total_time_s
           << ") not scheduled; zero offsets assumed";
        issues.push_back({false, os.str()});
    }
    return issues;
}

inline Scenario scenario_from_json(const nlohmann::json& j) {
    Scenario sc;
    if (j.contains("orbit")) {
        const auto& o = j.at("orbit");
        sc.orbit.altitude_km = o.value("altitude_km", sc.orbit.altitude_km);
        sc.orbit.inclination_deg = o.value("inclination_deg", sc.orbit.inclination_deg);
        sc.orbit.epoch_phase_rad = o.value("epoch_phase_rad", sc.orbit.epoch_phase_rad);
        sc.orbit.max_boresight_angle_deg =
            o.value("max_boresight_angle_deg", sc.orbit.max_boresight_angle_deg);
    }
    sc.total_time_s = j.value("total_time_s", 600.0);
    if (!j.contains("phases") || !j.at("phases").is_array()) {
        throw std::invalid_argument("scenario: missing 'phases' array");
    }
    for (const auto& p : j.at("phases")) {
        PhaseEntry ph;
        ph.label = p.value("label", std::string("others"));
        ph.t_start = p.at("t_start").get<double>();
        ph.t_end = p.at("t_end").get<double>();
        if (p.contains("drift")) {
            const auto& d = p.at("drift");
            ph.drift = true;
            ph.dlat_deg = d.value("dlat_deg", 0.0);
            ph.dlon0_deg = d.at("dlon0_deg").get<double>();
            ph.dlon_rate_deg_s = d.at("dlon_rate_deg_s").get<double>();
        } else if (p.contains("offset")) {
            const auto& o = p.at("offset");
            ph.dlat_deg = o.value("dlat_deg", 0.0);
            ph.dlon0_deg = o.value("dlon_deg", 0.0);
        }
        sc.phases.push_back(ph);
    }
    return sc;
}

inline Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("scenario: cannot open " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error("scenario: " + path + ": " + e.what());
    }
    try {
        return scenario_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("scenario: " + path + ": " + e.what());
    }
}

}  // namespace agile_mpc
