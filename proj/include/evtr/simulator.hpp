#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "evtr/event_frame.hpp"
#include "evtr/geometry.hpp"
#include "evtr/repeat_controller.hpp"
#include "evtr/topometric_map.hpp"

namespace evtr {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Deterministic normal sampler (Box-Muller over mt19937_64), independent of
/// the standard library's unspecified distribution algorithms.
class GaussianSampler {
public:
    explicit GaussianSampler(std::uint64_t seed) : eng_(seed) {}

    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform_in(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint64_t bits() { return eng_(); }

    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * kPi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

struct Landmark {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
    double salience = 1.0;
};

struct WorldBounds {
    double min_x = 0.0, min_y = 0.0, max_x = 0.0, max_y = 0.0;
};

struct World {
    std::vector<Landmark> landmarks;
    std::uint64_t rng_seed = 1;

    WorldBounds bounds() const {
        WorldBounds b;
        if (landmarks.empty()) return b;
        b.min_x = b.max_x = landmarks[0].x;
        b.min_y = b.max_y = landmarks[0].y;
        for (const Landmark& l : landmarks) {
            b.min_x = std::min(b.min_x, l.x);
            b.max_x = std::max(b.max_x, l.x);
            b.min_y = std::min(b.min_y, l.y);
            b.max_y = std::max(b.max_y, l.y);
        }
        return b;
    }
};

/// World file: '#' comments, one `seed=<n>` line, landmarks as `x,y,z,salience`.
inline World read_world(std::istream& in) {
    World w;
    bool seed_seen = false;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        unsigned long long s = 0;
        if (std::sscanf(line.c_str(), "seed=%llu", &s) == 1) {
            w.rng_seed = s;
            seed_seen = true;
            continue;
        }
        Landmark l;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &l.x, &l.y, &l.z, &l.salience) != 4)
            throw std::runtime_error("world file: bad line " + std::to_string(line_no));
        if (l.salience < 0.0 || l.salience > 1.0)
            throw std::runtime_error("world file: salience outside [0,1] at line " +
                                     std::to_string(line_no));
        w.landmarks.push_back(l);
    }
    if (!seed_seen) throw std::runtime_error("world file: missing seed= line");
    if (w.landmarks.empty()) throw std::runtime_error("world file: no landmarks");
    return w;
}

inline void write_world(std::ostream& out, const World& w) {
    out << "seed=" << w.rng_seed << "\n";
    char buf[160];
    for (const Landmark& l : w.landmarks) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g\n", l.x, l.y, l.z, l.salience);
        out << buf;
    }
}

struct Waypoint {
    double x = 0.0;
    double y = 0.0;
};

inline std::vector<Waypoint> read_waypoints(std::istream& in) {
    std::vector<Waypoint> wps;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        Waypoint p;
        if (std::sscanf(line.c_str(), "%lf,%lf", &p.x, &p.y) != 2)
            throw std::runtime_error("trajectory file: bad line " + std::to_string(line_no));
        wps.push_back(p);
    }
    if (wps.size() < 2) throw std::runtime_error("trajectory file: needs at least 2 waypoints");
    return wps;
}

inline void write_waypoints(std::ostream& out, const std::vector<Waypoint>& wps) {
    char buf[80];
    for (const Waypoint& p : wps) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", p.x, p.y);
        out << buf;
    }
}

inline double polyline_length(const std::vector<Waypoint>& wps) {
    double len = 0.0;
    for (std::size_t i = 1; i < wps.size(); ++i)
        len += std::hypot(wps[i].x - wps[i - 1].x, wps[i].y - wps[i - 1].y);
    return len;
}

/// Start pose: at the first waypoint, facing the second.
inline Pose2D initial_pose(const std::vector<Waypoint>& wps) {
    if (wps.size() < 2) throw std::invalid_argument("initial_pose: needs at least 2 waypoints");
    return {wps[0].x, wps[0].y,
            std::atan2(wps[1].y - wps[0].y, wps[1].x - wps[0].x)};
}

/// Scatters salient posts (vertical stacks of landmark points) on both sides
/// of the waypoint polyline. Lateral offsets and salience are randomized per
/// post so the scene has no repeating structure.
inline World make_corridor_world(const std::vector<Waypoint>& wps, double spacing,
                                 double lateral_min, double lateral_max,
                                 std::uint64_t seed) {
    if (wps.size() < 2) throw std::invalid_argument("make_corridor_world: needs at least 2 waypoints");
    if (spacing <= 0.0) throw std::invalid_argument("make_corridor_world: spacing must be positive");
    if (lateral_min <= 0.0 || lateral_max < lateral_min)
        throw std::invalid_argument("make_corridor_world: bad lateral range");
    World w;
    w.rng_seed = seed;
    GaussianSampler rng(splitmix64(seed ^ 0xC0551D09ull));
    const double margin = 4.0;
    for (std::size_t i = 1; i < wps.size(); ++i) {
        const double dx = wps[i].x - wps[i - 1].x, dy = wps[i].y - wps[i - 1].y;
        const double seg = std::hypot(dx, dy);
        if (seg <= 0.0) continue;
        const double tx = dx / seg, ty = dy / seg;
        // extend beyond both segment ends so the camera always has content
        for (double s = -margin; s < seg + margin; s += spacing) {
            for (int side = -1; side <= 1; side += 2) {
                const double along = s + rng.uniform_in(-0.2, 0.2) * spacing;
                const double lat = side * rng.uniform_in(lateral_min, lateral_max);
                const double px = wps[i - 1].x + tx * along - ty * lat;
                const double py = wps[i - 1].y + ty * along + tx * lat;
                const double sal = rng.uniform_in(0.6, 1.0);
                for (double z = 0.2; z <= 2.01; z += 0.2)
                    w.landmarks.push_back({px, py, z, sal});
            }
        }
    }
    return w;
}

/// Forward-mounted pinhole camera. u grows to the right of the image;
/// content left of the optical axis lands at u < width/2.
struct PinholeCamera {
    int width = 320;
    int height = 180;
    double fov_deg = 36.0;
    double mount_height = 0.4;
    double min_depth = 0.2;

    double focal_px() const {
        return (static_cast<double>(width) / 2.0) / std::tan(deg_to_rad(fov_deg) / 2.0);
    }

    struct Projection {
        double u = 0.0;
        double v = 0.0;
        double depth = 0.0;
    };

    /// Projects a landmark from a robot pose; empty when behind the camera,
    /// too close, or outside the image.
    std::optional<Projection> project(const Pose2D& pose, double cos_th, double sin_th,
                                      const Landmark& l) const {
        const double dx = l.x - pose.x, dy = l.y - pose.y;
        const double fwd = dx * cos_th + dy * sin_th;
        if (fwd < min_depth) return std::nullopt;
        const double lat = -dx * sin_th + dy * cos_th;  // positive to the robot's left
        const double f = focal_px();
        const double u = static_cast<double>(width) / 2.0 - f * (lat / fwd);
        if (u < 0.0 || u >= static_cast<double>(width)) return std::nullopt;
        const double v = static_cast<double>(height) / 2.0 - f * ((l.z - mount_height) / fwd);
        if (v < 0.0 || v >= static_cast<double>(height)) return std::nullopt;
        return Projection{u, v, fwd};
    }
};

/// Wheel-level odometry corruption. Scales model miscalibrated wheel radii,
/// the noise terms are random walks in distance, bias_rot is a systematic
/// heading error per meter traveled.
struct DriftModel {
    double wheel_scale_left = 1.0;
    double wheel_scale_right = 1.0;
    double noise_sigma_trans = 0.0;  // m per sqrt(m)
    double noise_sigma_rot = 0.0;    // rad per sqrt(m)
    double bias_rot = 0.0;           // rad per m
};

struct SimState {
    Pose2D truth;
    Pose2D odom;
};

/// Exact unicycle arc for one step of (v, omega) held constant over dt.
inline Pose2D integrate_arc(const Pose2D& p, double v, double omega, double dt) {
    Pose2D out;
    const double th1 = p.theta + omega * dt;
    if (std::abs(omega) > 1e-9) {
        out.x = p.x + v / omega * (std::sin(th1) - std::sin(p.theta));
        out.y = p.y - v / omega * (std::cos(th1) - std::cos(p.theta));
    } else {
        // limit form, second order in omega*dt
        const double mid = p.theta + 0.5 * omega * dt;
        out.x = p.x + v * dt * std::cos(mid);
        out.y = p.y + v * dt * std::sin(mid);
    }
    out.theta = wrap_angle(th1);
    return out;
}

/// Advances truth with the commanded twist and odometry with the corrupted
/// wheel measurement of it. The commanded motion is ground truth; drift lives
/// entirely in what the encoders report.
inline void step_motion(SimState& st, const VelocityCommand& cmd, double dt,
                        const DriftModel& drift, double wheelbase, GaussianSampler& rng) {
    st.truth = integrate_arc(st.truth, cmd.v, cmd.omega, dt);

    // With unit wheel scales the measurement model is the identity, so keep
    // the commanded values untouched: odometry then tracks truth bit for bit.
    double v_m = cmd.v;
    double w_m = cmd.omega;
    if (drift.wheel_scale_left != 1.0 || drift.wheel_scale_right != 1.0) {
        const double hb = wheelbase / 2.0;
        const double v_l = (cmd.v - cmd.omega * hb) * drift.wheel_scale_left;
        const double v_r = (cmd.v + cmd.omega * hb) * drift.wheel_scale_right;
        v_m = (v_l + v_r) / 2.0;
        w_m = (v_r - v_l) / (2.0 * hb);
    }
    const double ds = std::abs(v_m) * dt;
    if (ds > 0.0) {
        const double root = std::sqrt(ds);
        if (drift.noise_sigma_trans != 0.0)
            v_m += drift.noise_sigma_trans * root * rng.gaussian() / dt;
        if (drift.noise_sigma_rot != 0.0)
            w_m += drift.noise_sigma_rot * root * rng.gaussian() / dt;
        if (drift.bias_rot != 0.0) w_m += drift.bias_rot * ds / dt;
    }
    st.odom = integrate_arc(st.odom, v_m, w_m, dt);
}

/// Streams events for one micro-step by detecting integer column crossings of
/// every projected landmark between the step's start and end poses.
class EventRenderer {
public:
    EventRenderer(const World* world, const PinholeCamera* cam, std::uint64_t seed)
        : world_(world), cam_(cam), rng_(splitmix64(seed ^ 0x5EED5A11ull)),
          prev_(world->landmarks.size()) {}

    void reset(const Pose2D& pose) {
        const double c = std::cos(pose.theta), s = std::sin(pose.theta);
        for (std::size_t i = 0; i < world_->landmarks.size(); ++i)
            prev_[i] = cam_->project(pose, c, s, world_->landmarks[i]);
    }

    /// Appends events for motion to `pose` over (t0_us, t0_us + dt_us].
    void step(const Pose2D& pose, std::int64_t t0_us, std::int64_t dt_us,
              std::vector<Event>& out) {
        const double c = std::cos(pose.theta), s = std::sin(pose.theta);
        const std::vector<Landmark>& lms = world_->landmarks;
        for (std::size_t i = 0; i < lms.size(); ++i) {
            const Landmark& lm = lms[i];
            const double ddx = lm.x - pose.x, ddy = lm.y - pose.y;
            std::optional<PinholeCamera::Projection> cur;
            if (ddx * ddx + ddy * ddy < 400.0)  // beyond 20 m nothing projects usefully
                cur = cam_->project(pose, c, s, lm);
            if (prev_[i] && cur) {
                const double u0 = prev_[i]->u, u1 = cur->u;
                const int col0 = static_cast<int>(std::floor(u0));
                const int col1 = static_cast<int>(std::floor(u1));
                if (col0 != col1) {
                    const int dir = col1 > col0 ? 1 : -1;
                    int n = dir > 0 ? col1 - col0 : col0 - col1;
                    if (n > 16) n = 16;  // saturate degenerate close passes
                    for (int kk = 1; kk <= n; ++kk) {
                        const int col = col0 + dir * kk;
                        const double boundary = dir > 0 ? static_cast<double>(col)
                                                        : static_cast<double>(col + 1);
                        const double frac = (boundary - u0) / (u1 - u0);
                        if (rng_.uniform() >= lm.salience) continue;
                        const double vpx = prev_[i]->v + frac * (cur->v - prev_[i]->v);
                        std::int64_t t = t0_us + static_cast<std::int64_t>(
                                                     std::llround(frac * static_cast<double>(dt_us)));
                        if (t < t0_us) t = t0_us;
                        Event e;
                        e.t_us = t;
                        e.u = col;
                        e.v = static_cast<int>(vpx);
                        e.p = dir > 0 ? 1 : -1;
                        if (e.v >= 0 && e.v < cam_->height) out.push_back(e);
                    }
                }
            }
            prev_[i] = cur;
        }
    }

private:
    const World* world_;
    const PinholeCamera* cam_;
    GaussianSampler rng_;
    std::vector<std::optional<PinholeCamera::Projection>> prev_;
};

struct SimParams {
    std::int64_t micro_step_us = 1000;
    double wheelbase = 0.4;
    int spurious_per_frame = 0;
    double failure_radius = 0.5;
    double max_duration_factor = 3.0;
    double waypoint_tol = 0.15;

    void validate(std::int64_t tau_us) const {
        if (micro_step_us <= 0 || micro_step_us > tau_us || tau_us % micro_step_us != 0)
            throw std::invalid_argument("SimParams: micro step must divide the frame window");
        if (wheelbase <= 0.0) throw std::invalid_argument("SimParams: wheelbase must be positive");
        if (spurious_per_frame < 0)
            throw std::invalid_argument("SimParams: spurious rate must be >= 0");
        if (failure_radius <= 0.0 || max_duration_factor <= 0.0 || waypoint_tol <= 0.0)
            throw std::invalid_argument("SimParams: radii and factors must be positive");
    }
};

/// Everything a simulated run needs besides the world and the path.
struct SimSetup {
    PinholeCamera camera;
    DriftModel drift;
    SimParams sim;
    ControllerParams ctrl;
    CorrectionGains gains;
    std::int64_t tau_us = 66000;
    double delta_d = 0.2;
    double delta_alpha = deg_to_rad(15.0);
    std::uint64_t seed = 1;
    bool collect_events = false;
};

struct TraceRow {
    std::int64_t t_us = 0;
    Pose2D truth;
    Pose2D odom;
};

inline void write_trace(std::ostream& out, const std::vector<TraceRow>& rows) {
    out << "t_us,x,y,theta,odo_x,odo_y,odo_theta\n";
    char buf[320];
    for (const TraceRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      static_cast<long long>(r.t_us), r.truth.x, r.truth.y, r.truth.theta,
                      r.odom.x, r.odom.y, r.odom.theta);
        out << buf;
    }
}

inline std::vector<TraceRow> read_trace(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "t_us,x,y,theta,odo_x,odo_y,odo_theta")
        throw std::runtime_error("trace file: bad or missing header");
    std::vector<TraceRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        TraceRow r;
        long long t = 0;
        if (std::sscanf(line.c_str(), "%lld,%lf,%lf,%lf,%lf,%lf,%lf", &t, &r.truth.x, &r.truth.y,
                        &r.truth.theta, &r.odom.x, &r.odom.y, &r.odom.theta) != 7)
            throw std::runtime_error("trace file: bad line " + std::to_string(line_no));
        r.t_us = t;
        rows.push_back(r);
    }
    if (rows.empty()) throw std::runtime_error("trace file: no rows");
    return rows;
}

namespace detail {

/// Proportional heading controller toward a point, constant linear speed.
inline VelocityCommand drive_toward(const Pose2D& pose, double tx, double ty,
                                    const ControllerParams& p) {
    const double err = wrap_angle(std::atan2(ty - pose.y, tx - pose.x) - pose.theta);
    VelocityCommand c;
    c.v = p.v_lin;
    c.omega = std::clamp(p.k_heading * err, -p.omega_max, p.omega_max);
    return c;
}

/// Projection parameter of point p onto segment a->b (0 at a, 1 at b).
inline double segment_progress(double ax, double ay, double bx, double by, const Pose2D& p) {
    const double sx = bx - ax, sy = by - ay;
    const double len2 = sx * sx + sy * sy;
    if (len2 <= 0.0) return 1.0;
    return ((p.x - ax) * sx + (p.y - ay) * sy) / len2;
}

/// Fraction along the motion p0->p1 at which the Euclidean distance from
/// `anchor` first reaches `radius`, or empty if it never does within the step.
inline std::optional<double> crossing_fraction(const Pose2D& anchor, const Pose2D& p0,
                                               const Pose2D& p1, double radius) {
    const double ax = p1.x - p0.x, ay = p1.y - p0.y;
    const double bx = p0.x - anchor.x, by = p0.y - anchor.y;
    const double a = ax * ax + ay * ay;
    if (a <= 0.0) return std::nullopt;
    const double b = ax * bx + ay * by;
    const double c = bx * bx + by * by - radius * radius;
    if (c >= 0.0) return 0.0;  // already at or beyond the radius
    const double disc = b * b - a * c;
    if (disc < 0.0) return std::nullopt;
    const double f = (-b + std::sqrt(disc)) / a;
    if (f < 0.0 || f > 1.0) return std::nullopt;
    return f;
}

inline Pose2D lerp_pose(const Pose2D& p0, const Pose2D& p1, double f) {
    return {p0.x + f * (p1.x - p0.x), p0.y + f * (p1.y - p0.y),
            wrap_angle(p0.theta + f * wrap_angle(p1.theta - p0.theta))};
}

} // namespace detail

struct TeachResult {
    TopometricMap map;
    std::vector<TraceRow> trace;
    std::vector<Event> events;  // filled when setup.collect_events
    double path_length = 0.0;
    std::int64_t duration_us = 0;
};

/// Drives the waypoint polyline with the simulated robot while recording
/// (frame, odometry pose) nodes. Node poses land exactly on the recording
/// triggers: translation crossings are refined inside the micro-step, so a
/// straight run of length L yields floor(L / delta_d) + 1 nodes.
inline TeachResult run_teach(const World& world, const std::vector<Waypoint>& waypoints,
                             const SimSetup& setup) {
    setup.sim.validate(setup.tau_us);
    setup.ctrl.validate();
    if (waypoints.size() < 2) throw std::invalid_argument("run_teach: needs at least 2 waypoints");

    TeachResult out{TopometricMap(setup.camera.width, setup.camera.height, setup.tau_us,
                                  setup.delta_d, setup.delta_alpha, setup.camera.fov_deg),
                    {}, {}, polyline_length(waypoints), 0};

    SimState st;
    st.truth = initial_pose(waypoints);
    st.odom = st.truth;

    GaussianSampler odo_rng(splitmix64(setup.seed ^ 0x0D03E77Aull));
    GaussianSampler spur_rng(splitmix64(setup.seed ^ 0x51D0FEEDull));
    EventRenderer renderer(&world, &setup.camera, setup.seed);
    renderer.reset(st.truth);

    const std::int64_t steps_per_frame = setup.tau_us / setup.sim.micro_step_us;
    const double dt = static_cast<double>(setup.sim.micro_step_us) * 1e-6;

    const std::int64_t max_ticks = static_cast<std::int64_t>(
        setup.sim.max_duration_factor * out.path_length / setup.ctrl.v_lin /
            (static_cast<double>(setup.tau_us) * 1e-6) +
        64.0);

    Pose2D last_node_odom = st.odom;
    std::vector<Event> window_events;
    std::vector<Pose2D> pending_nodes;
    pending_nodes.push_back(st.odom);  // start node, frame attached at window end

    out.trace.push_back({0, st.truth, st.odom});

    std::size_t wp_target = 1;
    bool done = false;
    std::int64_t tick = 0;
    for (; tick < max_ticks && !done; ++tick) {
        const std::int64_t t_win = tick * setup.tau_us;
        const VelocityCommand cmd =
            detail::drive_toward(st.truth, waypoints[wp_target].x, waypoints[wp_target].y,
                                 setup.ctrl);
        window_events.clear();
        for (std::int64_t m = 0; m < steps_per_frame; ++m) {
            const Pose2D odom0 = st.odom;
            step_motion(st, cmd, dt, setup.drift, setup.sim.wheelbase, odo_rng);
            renderer.step(st.truth, t_win + m * setup.sim.micro_step_us,
                          setup.sim.micro_step_us, window_events);

            // recording triggers, refined to the exact crossing inside the step
            for (int guard = 0; guard < 4; ++guard) {
                const Pose2D& base = pending_nodes.empty() ? last_node_odom : pending_nodes.back();
                std::optional<double> f_trans =
                    detail::crossing_fraction(base, odom0, st.odom, setup.delta_d);
                std::optional<double> f_rot;
                const double rot0 = std::abs(wrap_angle(odom0.theta - base.theta));
                const double rot1 = std::abs(wrap_angle(st.odom.theta - base.theta));
                if (rot1 >= setup.delta_alpha && rot1 > rot0) {
                    const double df = (setup.delta_alpha - rot0) / (rot1 - rot0);
                    f_rot = std::clamp(df, 0.0, 1.0);
                }
                if (!f_trans && !f_rot) break;
                double f = 1.0;
                if (f_trans) f = std::min(f, *f_trans);
                if (f_rot) f = std::min(f, *f_rot);
                pending_nodes.push_back(detail::lerp_pose(odom0, st.odom, f));
                if (pending_nodes.size() > 8) break;  // pathological tiny intervals
            }

            // waypoint bookkeeping runs on the true pose, like a human driver
            while (wp_target < waypoints.size()) {
                const Waypoint& a = waypoints[wp_target - 1];
                const Waypoint& b = waypoints[wp_target];
                const double prog = detail::segment_progress(a.x, a.y, b.x, b.y, st.truth);
                const double d = std::hypot(st.truth.x - b.x, st.truth.y - b.y);
                if (prog >= 1.0 || d <= setup.sim.waypoint_tol) {
                    if (wp_target + 1 == waypoints.size()) {
                        done = true;
                        break;
                    }
                    ++wp_target;
                } else {
                    break;
                }
            }
            if (done) {
                // complete the window so the last frame is well defined
                for (std::int64_t m2 = m + 1; m2 < steps_per_frame; ++m2)
                    renderer.step(st.truth, t_win + m2 * setup.sim.micro_step_us,
                                  setup.sim.micro_step_us, window_events);
                break;
            }
        }

        for (int i = 0; i < setup.sim.spurious_per_frame; ++i) {
            Event e;
            e.t_us = t_win + static_cast<std::int64_t>(spur_rng.uniform() *
                                                       static_cast<double>(setup.tau_us));
            e.u = static_cast<int>(spur_rng.uniform() * setup.camera.width);
            e.v = static_cast<int>(spur_rng.uniform() * setup.camera.height);
            e.p = (spur_rng.bits() & 1) ? 1 : -1;
            window_events.push_back(e);
        }
        std::stable_sort(window_events.begin(), window_events.end(),
                         [](const Event& a, const Event& b) { return a.t_us < b.t_us; });

        const EventFrame frame = accumulate(window_events, t_win, setup.tau_us,
                                            setup.camera.width, setup.camera.height);
        for (const Pose2D& pose : pending_nodes) {
            out.map.record(frame, pose);
            last_node_odom = pose;
        }
        pending_nodes.clear();
        if (setup.collect_events)
            out.events.insert(out.events.end(), window_events.begin(), window_events.end());
        out.trace.push_back({t_win + setup.tau_us, st.truth, st.odom});
    }
    if (!done)
        throw std::runtime_error("run_teach: waypoint unreachable within the duration budget");
    out.duration_us = tick * setup.tau_us;
    return out;
}

struct RepeatResult {
    bool completed = false;
    double completed_pct = 0.0;
    std::vector<TraceRow> trace;
    std::vector<CorrectionReport> reports;
    std::string abort_reason;
};

/// Polyline with cumulative arc length, used as the reference the repeat run
/// is graded against.
class ReferencePath {
public:
    explicit ReferencePath(std::vector<Pose2D> pts) : pts_(std::move(pts)) {
        if (pts_.empty()) throw std::invalid_argument("ReferencePath: empty");
        arclen_.resize(pts_.size(), 0.0);
        for (std::size_t i = 1; i < pts_.size(); ++i)
            arclen_[i] = arclen_[i - 1] +
                         std::hypot(pts_[i].x - pts_[i - 1].x, pts_[i].y - pts_[i - 1].y);
    }

    double total_length() const { return arclen_.back(); }

    /// Distance to the nearest reference point and the arc length at it.
    std::pair<double, double> locate(const Pose2D& p) const {
        double best = std::numeric_limits<double>::max();
        std::size_t best_i = 0;
        for (std::size_t i = 0; i < pts_.size(); ++i) {
            const double dx = p.x - pts_[i].x, dy = p.y - pts_[i].y;
            const double d2 = dx * dx + dy * dy;
            if (d2 < best) {
                best = d2;
                best_i = i;
            }
        }
        return {std::sqrt(best), arclen_[best_i]};
    }

private:
    std::vector<Pose2D> pts_;
    std::vector<double> arclen_;
};

/// Replays the taught map in closed loop. The robot starts at `start_truth`
/// with its odometry aligned to the first map node; `reference` is the taught
/// path the run is graded against (truth trace when available, map poses
/// otherwise).
inline RepeatResult run_repeat(const World& world, const TopometricMap& map,
                               const ReferencePath& reference, const Pose2D& start_truth,
                               const SimSetup& setup, bool corrections) {
    setup.sim.validate(setup.tau_us);
    if (map.width() != setup.camera.width || map.height() != setup.camera.height ||
        map.tau_us() != setup.tau_us)
        throw std::invalid_argument("run_repeat: map geometry does not match the camera setup");

    RepeatResult out;
    RepeatController ctl(map, setup.gains, setup.ctrl);

    SimState st;
    st.truth = start_truth;
    st.odom = map.node(0).pose;

    GaussianSampler odo_rng(splitmix64(setup.seed ^ 0x0D03E77Aull));
    GaussianSampler spur_rng(splitmix64(setup.seed ^ 0x51D0FEEDull));
    EventRenderer renderer(&world, &setup.camera, setup.seed);
    renderer.reset(st.truth);

    const std::int64_t steps_per_frame = setup.tau_us / setup.sim.micro_step_us;
    const double dt = static_cast<double>(setup.sim.micro_step_us) * 1e-6;
    const std::int64_t max_ticks = static_cast<std::int64_t>(
        setup.sim.max_duration_factor * reference.total_length() / setup.ctrl.v_lin /
            (static_cast<double>(setup.tau_us) * 1e-6) +
        64.0);

    out.trace.push_back({0, st.truth, st.odom});
    double max_progress = 0.0;
    VelocityCommand cmd{0.0, 0.0};
    std::vector<Event> window_events;

    for (std::int64_t tick = 0; tick < max_ticks; ++tick) {
        const std::int64_t t_win = tick * setup.tau_us;
        window_events.clear();
        for (std::int64_t m = 0; m < steps_per_frame; ++m) {
            step_motion(st, cmd, dt, setup.drift, setup.sim.wheelbase, odo_rng);
            renderer.step(st.truth, t_win + m * setup.sim.micro_step_us,
                          setup.sim.micro_step_us, window_events);
        }
        for (int i = 0; i < setup.sim.spurious_per_frame; ++i) {
            Event e;
            e.t_us = t_win + static_cast<std::int64_t>(spur_rng.uniform() *
                                                       static_cast<double>(setup.tau_us));
            e.u = static_cast<int>(spur_rng.uniform() * setup.camera.width);
            e.v = static_cast<int>(spur_rng.uniform() * setup.camera.height);
            e.p = (spur_rng.bits() & 1) ? 1 : -1;
            window_events.push_back(e);
        }
        std::stable_sort(window_events.begin(), window_events.end(),
                         [](const Event& a, const Event& b) { return a.t_us < b.t_us; });

        CorrectionReport rep;
        if (corrections) {
            const EventFrame frame = accumulate(window_events, t_win, setup.tau_us,
                                                setup.camera.width, setup.camera.height);
            auto [c, r] = ctl.tick(st.odom, frame);
            cmd = c;
            rep = r;
        } else {
            auto [c, r] = ctl.odom_only_tick(st.odom);
            cmd = c;
            rep = r;
            rep.t_us = t_win;
        }
        out.reports.push_back(rep);
        out.trace.push_back({t_win + setup.tau_us, st.truth, st.odom});

        const auto [deviation, progress] = reference.locate(st.truth);
        max_progress = std::max(max_progress, progress);
        if (deviation > setup.sim.failure_radius) {
            out.abort_reason = "deviation exceeded failure radius";
            break;
        }
        if (ctl.complete()) {
            out.completed = true;
            break;
        }
    }
    if (!out.completed && out.abort_reason.empty())
        out.abort_reason = "duration budget exhausted";
    out.completed_pct = reference.total_length() > 0.0
                            ? 100.0 * max_progress / reference.total_length()
                            : 0.0;
    if (out.completed) out.completed_pct = 100.0;
    return out;
}

} // namespace evtr
