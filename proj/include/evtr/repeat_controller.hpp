#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "evtr/event_frame.hpp"
#include "evtr/fft_correlation.hpp"
#include "evtr/geometry.hpp"
#include "evtr/topometric_map.hpp"

namespace evtr {

struct DegenerateSegmentError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

enum class RhoBarPolicy { median, constant };

/// Gains for the two visual corrections, plus the policy that sets the
/// correlation noise floor rho_bar.
struct CorrectionGains {
    double g_theta = 1.5e-3;
    double g_rho = 1.5e-5;
    RhoBarPolicy rho_bar_policy = RhoBarPolicy::median;
    double rho_bar_const = 0.0;

    void validate() const {
        if (g_theta < 0.0 || g_rho < 0.0)
            throw std::invalid_argument("CorrectionGains: gains must be >= 0");
        if (rho_bar_policy == RhoBarPolicy::constant && rho_bar_const < 0.0)
            throw std::invalid_argument("CorrectionGains: constant rho_bar must be >= 0");
    }
};

struct VelocityCommand {
    double v = 0.0;
    double omega = 0.0;
};

/// Per-tick record of what the vision stage saw and what the controller did
/// with it.
struct CorrectionReport {
    std::int64_t tick = 0;
    std::int64_t t_us = 0;
    int k = 0;
    double u = 0.0;
    int first_index = 0;              // map index of deltas[0] / rhos[0]
    std::vector<int> deltas;          // peak shift per candidate (compressed columns)
    std::vector<double> rhos;         // peak correlation per candidate
    double delta_px = 0.0;            // goal-frame peak shift, sensor pixels
    double rho = 0.0;                 // goal-frame peak correlation
    double dtheta_rad = 0.0;
    double drho = 0.0;
    std::int64_t latency_us = 0;
};

/// Relative transform from the current odometry pose to the goal pose,
/// expressed in the robot frame.
inline Pose2D goal_transform(const Pose2D& odom_pose, const Pose2D& goal_pose) {
    return relative(odom_pose, goal_pose);
}

/// Fraction of the segment prev_goal -> curr_goal covered by current_pose,
/// by projection onto the segment. Not clamped; overshoot yields u > 1.
inline double interpolation_factor(const Pose2D& prev_goal, const Pose2D& curr_goal,
                                   const Pose2D& current_pose) {
    const double sx = curr_goal.x - prev_goal.x, sy = curr_goal.y - prev_goal.y;
    const double len2 = sx * sx + sy * sy;
    if (len2 < 1e-18)
        throw DegenerateSegmentError("interpolation_factor: goal segment has zero length");
    return ((current_pose.x - prev_goal.x) * sx + (current_pose.y - prev_goal.y) * sy) / len2;
}

/// Interpolates the heading offset between the two bracketing goals and
/// rotates the goal transform against it: R(-g_theta * dtheta) * T_delta.
inline Pose2D lateral_correction(double theta_prev, double theta_curr, double u, double g_theta,
                                 const Pose2D& t_delta) {
    const double dtheta = (1.0 - u) * theta_prev + u * theta_curr;
    return rotate_transform(t_delta, -g_theta * dtheta);
}

/// Noise floor for the correlation peaks. The median policy uses the lower
/// median of the window's peaks.
inline double rho_bar_threshold(const CorrectionGains& gains, std::span<const double> rhos) {
    if (gains.rho_bar_policy == RhoBarPolicy::constant) return gains.rho_bar_const;
    if (rhos.empty()) return 0.0;
    std::vector<double> sorted(rhos.begin(), rhos.end());
    std::sort(sorted.begin(), sorted.end());
    return sorted[(sorted.size() - 1) / 2];
}

/// Along-path progress error in goal-interval units: the thresholded,
/// correlation-weighted average of candidate offsets relative to goal k,
/// minus the odometry progress u. rhos[i] scores map frame
/// first_rel_offset + i relative to k. No surviving evidence means no
/// correction.
inline double along_path_offset(std::span<const double> rhos, int first_rel_offset, double u,
                                double rho_bar) {
    if (rhos.empty()) throw std::invalid_argument("along_path_offset: empty rho vector");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < rhos.size(); ++i) {
        const double r = rhos[i] - rho_bar;
        if (r > 0.0) {
            num += (first_rel_offset + static_cast<int>(i)) * r;
            den += r;
        }
    }
    if (den <= 0.0) return 0.0;
    return num / den - u;
}

/// Scales the goal translation by (|t| - g_rho * drho * delta_d) / |t|,
/// clamped at zero so the goal vector never flips direction. Pure-rotation
/// goals pass through unchanged.
inline Pose2D apply_along_path(const Pose2D& t_delta, double drho, double g_rho, double delta_d) {
    const double n = translation_norm(t_delta);
    if (n == 0.0) return t_delta;
    double scale = (n - g_rho * drho * delta_d) / n;
    if (scale < 0.0) scale = 0.0;
    return {t_delta.x * scale, t_delta.y * scale, t_delta.theta};
}

struct ControllerParams {
    double v_lin = 0.35;
    double k_heading = 2.0;
    double omega_max = 1.5;
    double goal_tol = 0.05;
    int s = 4;
    int compression = 8;

    void validate() const {
        if (v_lin <= 0.0 || k_heading <= 0.0 || omega_max <= 0.0 || goal_tol <= 0.0)
            throw std::invalid_argument("ControllerParams: rates and tolerances must be positive");
        if (s < 0) throw std::invalid_argument("ControllerParams: s must be >= 0");
        if (compression < 1) throw std::invalid_argument("ControllerParams: compression must be >= 1");
    }
};

/// Two-stage repeat controller: pursues the next map pose on odometry and
/// bends that pursuit with the lateral and along-path visual corrections.
///
/// The goal transform is kept as controller state. It is seeded from the
/// odometry pose, advanced between ticks by the measured odometry increment,
/// and extended with the map's next relative transform at every goal
/// handoff. The visual corrections rotate and scale this persistent
/// transform in place, so they compound across ticks: a constant visual
/// offset keeps bending the goal until the offset disappears. That
/// accumulation is what lets per-tick corrections of a fraction of a degree
/// cancel odometry drift that grows without bound; recomputing the goal from
/// odometry every tick would silently discard each tick's correction and cap
/// the whole loop at one tick's worth of authority.
///
/// Sign convention: a positive correlation shift delta means the live view
/// content sits left of the teach view, which happens when the robot points
/// right of (or stands right of) the taught pose. The heading offsets
/// theta_k fed to the interpolation are therefore the negated pixel-shift
/// angles, making them match the robot's signed heading deviation
/// (counter-clockwise positive); the closed-loop tests pin this down.
class RepeatController {
public:
    RepeatController(const TopometricMap& map, CorrectionGains gains, ControllerParams params)
        : map_(map), gains_(gains), params_(params) {
        gains_.validate();
        params_.validate();
        if (map.size() < 2)
            throw std::invalid_argument("RepeatController: map needs at least 2 nodes");
        if (params_.compression > map.width())
            throw std::invalid_argument("RepeatController: compression exceeds frame width");
        compressed_.reserve(map.size());
        for (const MapNode& n : map.nodes()) compressed_.push_back(compress(n.frame, params_.compression));
        k_ = 1;
    }

    int goal_index() const { return k_; }
    bool complete() const { return complete_; }
    double theta_prev() const { return theta_prev_; }
    double theta_curr() const { return theta_curr_; }

    /// Full tick: vision corrections plus goal pursuit.
    std::pair<VelocityCommand, CorrectionReport> tick(const Pose2D& odom_pose,
                                                      const EventFrame& frame) {
        return tick_impl(odom_pose, &frame, true);
    }

    /// Odometry-only baseline: identical goal pursuit, corrections disabled.
    std::pair<VelocityCommand, CorrectionReport> odom_only_tick(const Pose2D& odom_pose) {
        return tick_impl(odom_pose, nullptr, false);
    }

private:
    std::pair<VelocityCommand, CorrectionReport> tick_impl(const Pose2D& odom_pose,
                                                           const EventFrame* frame,
                                                           bool corrections) {
        CorrectionReport rep;
        rep.tick = tick_count_++;
        rep.k = k_;
        if (complete_) {
            rep.t_us = frame ? frame->t_start_us() : 0;
            return {VelocityCommand{0.0, 0.0}, rep};
        }

        const auto t0 = std::chrono::steady_clock::now();
        const MapNode& goal = map_.node(static_cast<std::size_t>(k_));

        double u = 1.0;
        try {
            u = interpolation_factor(map_.node(static_cast<std::size_t>(k_ - 1)).pose, goal.pose,
                                     odom_pose);
        } catch (const DegenerateSegmentError&) {
            u = 1.0;
        }
        // Weight used in the interpolations; clamped only on gross overshoot.
        double uw = u;
        if (u < -0.5) uw = 0.0;
        else if (u > 1.5) uw = 1.0;

        // Carry the goal transform across ticks: seed it from odometry once,
        // then unwind each tick's odometry increment so past corrections stay
        // baked in instead of being recomputed away.
        if (!have_goal_) {
            t_delta_ = goal_transform(odom_pose, goal.pose);
            have_goal_ = true;
        } else {
            t_delta_ = compose(inverse(relative(prev_odom_, odom_pose)), t_delta_);
        }
        prev_odom_ = odom_pose;

        if (frame) {
            if (frame->width() != map_.width() || frame->height() != map_.height() ||
                frame->tau_us() != map_.tau_us())
                throw std::invalid_argument("RepeatController: frame geometry mismatch with map");
            rep.t_us = frame->t_start_us();
            const CompressedFrame live = compress(*frame, params_.compression);
            const int lo = std::max(0, k_ - params_.s);
            const int hi_excl = std::min(static_cast<int>(map_.size()), k_ + params_.s + 1);
            SearchSpace<CompressedFrame> space;
            space.k = k_;
            space.first_index = lo;
            space.s = params_.s;
            space.candidates.reserve(static_cast<std::size_t>(hi_excl - lo));
            for (int i = lo; i < hi_excl; ++i)
                space.candidates.push_back(&compressed_[static_cast<std::size_t>(i)]);
            const std::vector<CorrelationResult> results = engine_.correlate_search_space(space, live);

            rep.first_index = lo;
            rep.deltas.reserve(results.size());
            rep.rhos.reserve(results.size());
            for (const CorrelationResult& r : results) {
                rep.deltas.push_back(r.delta);
                rep.rhos.push_back(r.peak);
            }
            const std::size_t goal_i = static_cast<std::size_t>(k_ - lo);
            const int cols = compressed_[0].cols;
            theta_curr_ = -deg_to_rad(
                pixel_offset_to_angle(results[goal_i].delta, cols, map_.fov_deg()));
            rep.delta_px = static_cast<double>(results[goal_i].delta) * params_.compression;
            rep.rho = results[goal_i].peak;

            rep.dtheta_rad = (1.0 - uw) * theta_prev_ + uw * theta_curr_;
            const double rho_bar = rho_bar_threshold(gains_, rep.rhos);
            rep.drho = along_path_offset(rep.rhos, lo - k_, uw, rho_bar);
            if (corrections) {
                t_delta_ = lateral_correction(theta_prev_, theta_curr_, uw, gains_.g_theta, t_delta_);
                t_delta_ = apply_along_path(t_delta_, rep.drho, gains_.g_rho, map_.delta_d());
            }
        }
        rep.u = u;
        rep.latency_us = std::chrono::duration_cast<std::chrono::microseconds>(
                             std::chrono::steady_clock::now() - t0)
                             .count();

        VelocityCommand cmd;
        cmd.v = params_.v_lin;
        const double heading_err = std::atan2(t_delta_.y, t_delta_.x);
        cmd.omega = std::clamp(params_.k_heading * heading_err, -params_.omega_max,
                               params_.omega_max);

        const double goal_dist = translation_norm(t_delta_);
        if (goal_dist <= params_.goal_tol || u >= 1.0) {
            if (k_ + 1 >= static_cast<int>(map_.size())) {
                complete_ = true;
                cmd = VelocityCommand{0.0, 0.0};
            } else {
                theta_prev_ = theta_curr_;
                // Hand off by extending the live transform with the map's
                // next segment, so accumulated corrections survive the hop.
                t_delta_ = compose(t_delta_, relative(map_.node(static_cast<std::size_t>(k_)).pose,
                                                      map_.node(static_cast<std::size_t>(k_ + 1)).pose));
                ++k_;
            }
        }
        return {cmd, rep};
    }

    const TopometricMap& map_;
    CorrectionGains gains_;
    ControllerParams params_;
    CorrelationEngine engine_;
    std::vector<CompressedFrame> compressed_;
    int k_ = 1;
    Pose2D t_delta_{};
    Pose2D prev_odom_{};
    bool have_goal_ = false;
    double theta_prev_ = 0.0;
    double theta_curr_ = 0.0;
    std::int64_t tick_count_ = 0;
    bool complete_ = false;
};

inline void write_corrections_header(std::ostream& out) {
    out << "tick,t_us,k,u,delta_px,rho,dtheta_rad,drho,latency_us\n";
}

/// One CSV row per tick. zero_latency strips the only wall-clock field so
/// simulated runs stay byte-reproducible; the benchmark reports real timings.
inline void write_corrections_row(std::ostream& out, const CorrectionReport& r,
                                  bool zero_latency) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%lld,%lld,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%lld\n",
                  static_cast<long long>(r.tick), static_cast<long long>(r.t_us), r.k, r.u,
                  r.delta_px, r.rho, r.dtheta_rad, r.drho,
                  zero_latency ? 0ll : static_cast<long long>(r.latency_us));
    out << buf;
}

} // namespace evtr
