#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "evtr/geometry.hpp"
#include "evtr/repeat_controller.hpp"
#include "evtr/simulator.hpp"

namespace evtr {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Flat key=value run configuration. Defaults reproduce the reference
/// parameter set; every field can be overridden from a file or --set.
struct Config {
    // camera and matcher geometry
    int width = 320;
    int height = 180;
    double fov_deg = 36.0;
    std::int64_t tau_us = 66000;
    int compression = 8;
    int search_half_width = 4;

    // map recording
    double delta_d = 0.2;
    double delta_alpha_deg = 15.0;

    // motion controller
    double v = 0.35;
    double k_heading = 2.0;
    double omega_max = 1.5;
    double goal_tol = 0.05;

    // correction gains
    double g_theta = 1.5e-3;
    double g_rho = 1.5e-5;
    std::string rho_bar = "median";  // "median" or "const:<value>"

    // simulation
    std::uint64_t seed = 1;
    std::int64_t micro_step_us = 1000;
    double camera_height = 0.4;
    double min_depth = 0.2;
    double wheelbase = 0.4;
    double waypoint_tol = 0.15;
    double failure_radius = 0.5;
    double max_duration_factor = 3.0;
    int spurious_per_frame = 0;

    // odometry drift
    double wheel_scale_left = 1.0;
    double wheel_scale_right = 1.0;
    double noise_sigma_trans = 0.0;
    double noise_sigma_rot = 0.0;
    double bias_rot = 0.0;
};

namespace detail {

inline double parse_double(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0')
        throw ConfigError("config: bad numeric value for " + key + ": " + v);
    return x;
}

inline long long parse_int(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const long long x = std::strtoll(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0')
        throw ConfigError("config: bad integer value for " + key + ": " + v);
    return x;
}

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

} // namespace detail

/// Applies one `key=value` assignment. Unknown keys are errors so typos
/// cannot silently run with defaults.
inline void config_set(Config& c, const std::string& key, const std::string& value) {
    using detail::parse_double;
    using detail::parse_int;
    if (key == "width") c.width = static_cast<int>(parse_int(key, value));
    else if (key == "height") c.height = static_cast<int>(parse_int(key, value));
    else if (key == "fov_deg") c.fov_deg = parse_double(key, value);
    else if (key == "tau_us") c.tau_us = parse_int(key, value);
    else if (key == "compression") c.compression = static_cast<int>(parse_int(key, value));
    else if (key == "search_half_width") c.search_half_width = static_cast<int>(parse_int(key, value));
    else if (key == "delta_d") c.delta_d = parse_double(key, value);
    else if (key == "delta_alpha_deg") c.delta_alpha_deg = parse_double(key, value);
    else if (key == "v") c.v = parse_double(key, value);
    else if (key == "k_heading") c.k_heading = parse_double(key, value);
    else if (key == "omega_max") c.omega_max = parse_double(key, value);
    else if (key == "goal_tol") c.goal_tol = parse_double(key, value);
    else if (key == "g_theta") c.g_theta = parse_double(key, value);
    else if (key == "g_rho") c.g_rho = parse_double(key, value);
    else if (key == "rho_bar") c.rho_bar = value;
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "micro_step_us") c.micro_step_us = parse_int(key, value);
    else if (key == "camera_height") c.camera_height = parse_double(key, value);
    else if (key == "min_depth") c.min_depth = parse_double(key, value);
    else if (key == "wheelbase") c.wheelbase = parse_double(key, value);
    else if (key == "waypoint_tol") c.waypoint_tol = parse_double(key, value);
    else if (key == "failure_radius") c.failure_radius = parse_double(key, value);
    else if (key == "max_duration_factor") c.max_duration_factor = parse_double(key, value);
    else if (key == "spurious_per_frame") c.spurious_per_frame = static_cast<int>(parse_int(key, value));
    else if (key == "wheel_scale_left") c.wheel_scale_left = parse_double(key, value);
    else if (key == "wheel_scale_right") c.wheel_scale_right = parse_double(key, value);
    else if (key == "noise_sigma_trans") c.noise_sigma_trans = parse_double(key, value);
    else if (key == "noise_sigma_rot") c.noise_sigma_rot = parse_double(key, value);
    else if (key == "bias_rot") c.bias_rot = parse_double(key, value);
    else throw ConfigError("config: unknown key: " + key);
}

/// Applies a single `key=value` string (the --set form).
inline void config_apply(Config& c, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("config: expected key=value, got: " + assignment);
    config_set(c, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

inline Config parse_config(std::istream& in, Config base = Config{}) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        try {
            config_apply(base, t);
        } catch (const ConfigError& e) {
            throw ConfigError(std::string(e.what()) + " (line " + std::to_string(line_no) + ")");
        }
    }
    return base;
}

/// Parses the rho_bar policy string. "median" or "const:<value>".
inline void parse_rho_bar(const std::string& s, CorrectionGains& gains) {
    if (s == "median") {
        gains.rho_bar_policy = RhoBarPolicy::median;
        return;
    }
    if (s.rfind("const:", 0) == 0) {
        gains.rho_bar_policy = RhoBarPolicy::constant;
        gains.rho_bar_const = detail::parse_double("rho_bar", s.substr(6));
        return;
    }
    throw ConfigError("config: rho_bar must be 'median' or 'const:<value>', got: " + s);
}

inline void validate_config(const Config& c) {
    auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
    if (c.width <= 0 || c.width > 4096 || c.height <= 0 || c.height > 4096)
        fail("width/height must be in (0, 4096]");
    if (c.fov_deg <= 0.0 || c.fov_deg >= 180.0) fail("fov_deg must be in (0, 180)");
    if (c.tau_us <= 0 || c.tau_us > 0xFFFFFFFFll) fail("tau_us out of range");
    if (c.compression < 1 || c.compression > c.width) fail("compression must be in [1, width]");
    if (c.search_half_width < 0) fail("search_half_width must be >= 0");
    if (c.delta_d <= 0.0) fail("delta_d must be positive");
    if (c.delta_alpha_deg <= 0.0) fail("delta_alpha_deg must be positive");
    if (c.v <= 0.0) fail("v must be positive");
    if (c.k_heading <= 0.0) fail("k_heading must be positive");
    if (c.omega_max <= 0.0) fail("omega_max must be positive");
    if (c.goal_tol <= 0.0) fail("goal_tol must be positive");
    if (c.g_theta < 0.0 || c.g_rho < 0.0) fail("gains must be >= 0");
    {
        CorrectionGains g;
        parse_rho_bar(c.rho_bar, g);  // throws on malformed policy
        if (g.rho_bar_policy == RhoBarPolicy::constant && g.rho_bar_const < 0.0)
            fail("constant rho_bar must be >= 0");
    }
    if (c.micro_step_us <= 0 || c.micro_step_us > c.tau_us || c.tau_us % c.micro_step_us != 0)
        fail("micro_step_us must divide tau_us");
    if (c.camera_height < 0.0) fail("camera_height must be >= 0");
    if (c.min_depth <= 0.0) fail("min_depth must be positive");
    if (c.wheelbase <= 0.0) fail("wheelbase must be positive");
    if (c.waypoint_tol <= 0.0) fail("waypoint_tol must be positive");
    if (c.failure_radius <= 0.0) fail("failure_radius must be positive");
    if (c.max_duration_factor < 1.0) fail("max_duration_factor must be >= 1");
    if (c.spurious_per_frame < 0) fail("spurious_per_frame must be >= 0");
    if (c.wheel_scale_left <= 0.0 || c.wheel_scale_right <= 0.0)
        fail("wheel scales must be positive");
    if (c.noise_sigma_trans < 0.0 || c.noise_sigma_rot < 0.0) fail("noise sigmas must be >= 0");
}

/// Writes every key in a fixed order; reloading the dump reproduces the
/// configuration exactly.
inline void dump_config(std::ostream& out, const Config& c) {
    char buf[128];
    auto put_d = [&](const char* key, double v) {
        std::snprintf(buf, sizeof(buf), "%s=%.17g\n", key, v);
        out << buf;
    };
    out << "width=" << c.width << "\n";
    out << "height=" << c.height << "\n";
    put_d("fov_deg", c.fov_deg);
    out << "tau_us=" << c.tau_us << "\n";
    out << "compression=" << c.compression << "\n";
    out << "search_half_width=" << c.search_half_width << "\n";
    put_d("delta_d", c.delta_d);
    put_d("delta_alpha_deg", c.delta_alpha_deg);
    put_d("v", c.v);
    put_d("k_heading", c.k_heading);
    put_d("omega_max", c.omega_max);
    put_d("goal_tol", c.goal_tol);
    put_d("g_theta", c.g_theta);
    put_d("g_rho", c.g_rho);
    out << "rho_bar=" << c.rho_bar << "\n";
    out << "seed=" << c.seed << "\n";
    out << "micro_step_us=" << c.micro_step_us << "\n";
    put_d("camera_height", c.camera_height);
    put_d("min_depth", c.min_depth);
    put_d("wheelbase", c.wheelbase);
    put_d("waypoint_tol", c.waypoint_tol);
    put_d("failure_radius", c.failure_radius);
    put_d("max_duration_factor", c.max_duration_factor);
    out << "spurious_per_frame=" << c.spurious_per_frame << "\n";
    put_d("wheel_scale_left", c.wheel_scale_left);
    put_d("wheel_scale_right", c.wheel_scale_right);
    put_d("noise_sigma_trans", c.noise_sigma_trans);
    put_d("noise_sigma_rot", c.noise_sigma_rot);
    put_d("bias_rot", c.bias_rot);
}

/// Expands the flat config into the simulator/controller parameter structs.
inline SimSetup make_setup(const Config& c) {
    validate_config(c);
    SimSetup s;
    s.camera.width = c.width;
    s.camera.height = c.height;
    s.camera.fov_deg = c.fov_deg;
    s.camera.mount_height = c.camera_height;
    s.camera.min_depth = c.min_depth;
    s.drift.wheel_scale_left = c.wheel_scale_left;
    s.drift.wheel_scale_right = c.wheel_scale_right;
    s.drift.noise_sigma_trans = c.noise_sigma_trans;
    s.drift.noise_sigma_rot = c.noise_sigma_rot;
    s.drift.bias_rot = c.bias_rot;
    s.sim.micro_step_us = c.micro_step_us;
    s.sim.wheelbase = c.wheelbase;
    s.sim.spurious_per_frame = c.spurious_per_frame;
    s.sim.failure_radius = c.failure_radius;
    s.sim.max_duration_factor = c.max_duration_factor;
    s.sim.waypoint_tol = c.waypoint_tol;
    s.ctrl.v_lin = c.v;
    s.ctrl.k_heading = c.k_heading;
    s.ctrl.omega_max = c.omega_max;
    s.ctrl.goal_tol = c.goal_tol;
    s.ctrl.s = c.search_half_width;
    s.ctrl.compression = c.compression;
    s.gains.g_theta = c.g_theta;
    s.gains.g_rho = c.g_rho;
    parse_rho_bar(c.rho_bar, s.gains);
    s.tau_us = c.tau_us;
    s.delta_d = c.delta_d;
    s.delta_alpha = deg_to_rad(c.delta_alpha_deg);
    s.seed = c.seed;
    return s;
}

} // namespace evtr
