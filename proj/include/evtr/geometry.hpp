#pragma once

#include <cmath>

namespace evtr {

inline constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
    a = std::fmod(a, 2.0 * kPi);
    if (a <= -kPi) a += 2.0 * kPi;
    if (a > kPi) a -= 2.0 * kPi;
    return a;
}

/// Planar pose (x, y in meters, theta in radians, counter-clockwise positive).
/// Also used as an SE(2) transform: rotation theta followed by translation (x, y).
struct Pose2D {
    double x = 0.0;
    double y = 0.0;
    double theta = 0.0;
};

/// a * b: applies b in the frame of a.
inline Pose2D compose(const Pose2D& a, const Pose2D& b) {
    const double c = std::cos(a.theta), s = std::sin(a.theta);
    return {a.x + c * b.x - s * b.y,
            a.y + s * b.x + c * b.y,
            wrap_angle(a.theta + b.theta)};
}

inline Pose2D inverse(const Pose2D& a) {
    const double c = std::cos(a.theta), s = std::sin(a.theta);
    return {-(c * a.x + s * a.y), -(-s * a.x + c * a.y), wrap_angle(-a.theta)};
}

/// b expressed in the frame of a, i.e. inverse(a) * b.
inline Pose2D relative(const Pose2D& a, const Pose2D& b) {
    return compose(inverse(a), b);
}

/// Left-multiplies a pure rotation: R(angle) * t. Rotates both the
/// translation vector and the heading of t.
inline Pose2D rotate_transform(const Pose2D& t, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    return {c * t.x - s * t.y, s * t.x + c * t.y, wrap_angle(t.theta + angle)};
}

inline double translation_norm(const Pose2D& t) {
    return std::sqrt(t.x * t.x + t.y * t.y);
}

} // namespace evtr
