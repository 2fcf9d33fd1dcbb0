#pragma once

#include <cmath>
#include <stdexcept>

namespace polybot {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(dot(*this)); }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

/// Unit quaternion, Hamilton convention, scalar first. Every constructor
/// normalizes, so instances satisfy |q| = 1 to within 1e-9 at all times.
/// q and -q denote the same rotation.
struct Quaternion {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

    Quaternion() = default;
    Quaternion(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) {
        normalize();
    }

    static Quaternion identity() { return {}; }

    static Quaternion from_axis_angle(const Vec3& axis, double angle) {
        const double n = axis.norm();
        if (n < 1e-15) return identity();
        const double h = 0.5 * angle;
        const double s = std::sin(h) / n;
        return {std::cos(h), axis.x * s, axis.y * s, axis.z * s};
    }

    void normalize() {
        const double n = std::sqrt(w * w + x * x + y * y + z * z);
        if (n < 1e-15) {
            w = 1.0; x = y = z = 0.0;
            return;
        }
        w /= n; x /= n; y /= n; z /= n;
    }

    double dot(const Quaternion& o) const {
        return w * o.w + x * o.x + y * o.y + z * o.z;
    }

    /// Rotate a vector: q v q^-1.
    Vec3 rotate(const Vec3& v) const {
        const Vec3 u{x, y, z};
        const Vec3 t = 2.0 * u.cross(v);
        return v + w * t + u.cross(t);
    }
};

/// Hamilton product, renormalized. R(a*b) = R(a) R(b).
inline Quaternion quat_mul(const Quaternion& a, const Quaternion& b) {
    return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

/// Inverse of a unit quaternion is its conjugate.
inline Quaternion quat_inv(const Quaternion& q) { return {q.w, -q.x, -q.y, -q.z}; }

/// Geodesic distance between two rotations, in radians, range [0, pi].
/// Computed as arccos(clamp(2<p,q>^2 - 1)); invariant to a sign flip of
/// either argument, zero iff the rotations coincide.
inline double geodesic_dist(const Quaternion& p, const Quaternion& q) {
    const double d = p.dot(q);
    double c = 2.0 * d * d - 1.0;
    if (c > 1.0) c = 1.0;
    if (c < -1.0) c = -1.0;
    return std::acos(c);
}

/// Rotation vector (axis * angle) of q, angle in [0, pi].
inline Vec3 rotation_vector(const Quaternion& q) {
    double w = q.w;
    Vec3 v{q.x, q.y, q.z};
    if (w < 0.0) { w = -w; v = -v; }
    const double n = v.norm();
    if (n < 1e-12) return v * 2.0;  // small-angle: sin(t/2) ~ t/2
    const double angle = 2.0 * std::atan2(n, w);
    return v * (angle / n);
}

/// Quaternion whose rotation maps unit x/y/z to the given orthonormal basis.
inline Quaternion quat_from_basis(const Vec3& ex, const Vec3& ey, const Vec3& ez) {
    // Shepperd's method on the column matrix [ex ey ez]
    const double m00 = ex.x, m01 = ey.x, m02 = ez.x;
    const double m10 = ex.y, m11 = ey.y, m12 = ez.y;
    const double m20 = ex.z, m21 = ey.z, m22 = ez.z;
    const double tr = m00 + m11 + m22;
    double w, x, y, z;
    if (tr > 0.0) {
        const double s = std::sqrt(tr + 1.0) * 2.0;
        w = 0.25 * s; x = (m21 - m12) / s; y = (m02 - m20) / s; z = (m10 - m01) / s;
    } else if (m00 > m11 && m00 > m22) {
        const double s = std::sqrt(1.0 + m00 - m11 - m22) * 2.0;
        w = (m21 - m12) / s; x = 0.25 * s; y = (m01 + m10) / s; z = (m02 + m20) / s;
    } else if (m11 > m22) {
        const double s = std::sqrt(1.0 + m11 - m00 - m22) * 2.0;
        w = (m02 - m20) / s; x = (m01 + m10) / s; y = 0.25 * s; z = (m12 + m21) / s;
    } else {
        const double s = std::sqrt(1.0 + m22 - m00 - m11) * 2.0;
        w = (m10 - m01) / s; x = (m02 + m20) / s; y = (m12 + m21) / s; z = 0.25 * s;
    }
    return {w, x, y, z};
}

/// Wrap an angle to (-pi, pi]. Idempotent.
inline double wrap_angle(double a) {
    double r = std::fmod(a + M_PI, 2.0 * M_PI);
    if (r <= 0.0) r += 2.0 * M_PI;
    return r - M_PI;
}

/// Intrinsic roll-pitch-yaw (XYZ) angles, each wrapped to (-pi, pi].
struct EulerAngles {
    double roll = 0.0, pitch = 0.0, yaw = 0.0;

    EulerAngles wrapped() const {
        return {wrap_angle(roll), wrap_angle(pitch), wrap_angle(yaw)};
    }
};

inline Quaternion euler_to_quat(const EulerAngles& e) {
    const Quaternion qx = Quaternion::from_axis_angle({1, 0, 0}, e.roll);
    const Quaternion qy = Quaternion::from_axis_angle({0, 1, 0}, e.pitch);
    const Quaternion qz = Quaternion::from_axis_angle({0, 0, 1}, e.yaw);
    return quat_mul(quat_mul(qx, qy), qz);  // R = Rx Ry Rz
}

/// Extract intrinsic XYZ angles. At |pitch| = pi/2 the roll/yaw pair is
/// degenerate; roll is set to 0 and the remaining rotation folds into yaw.
inline EulerAngles quat_to_euler(const Quaternion& q) {
    const double r02 = 2.0 * (q.x * q.z + q.w * q.y);
    const double r12 = 2.0 * (q.y * q.z - q.w * q.x);
    const double r22 = 1.0 - 2.0 * (q.x * q.x + q.y * q.y);
    const double r01 = 2.0 * (q.x * q.y - q.w * q.z);
    const double r00 = 1.0 - 2.0 * (q.y * q.y + q.z * q.z);

    EulerAngles e;
    if (std::fabs(r02) >= 1.0 - 1e-12) {
        const double r10 = 2.0 * (q.x * q.y + q.w * q.z);
        const double r11 = 1.0 - 2.0 * (q.x * q.x + q.z * q.z);
        e.pitch = (r02 > 0.0) ? M_PI / 2.0 : -M_PI / 2.0;
        e.roll = 0.0;
        e.yaw = std::atan2(r10, r11);
    } else {
        e.pitch = std::asin(r02);
        e.roll = std::atan2(-r12, r22);
        e.yaw = std::atan2(-r01, r00);
    }
    return e.wrapped();
}

/// Compose two Euler rotations as b after a (via quaternions), result wrapped.
inline EulerAngles add_angles(const EulerAngles& a, const EulerAngles& b) {
    return quat_to_euler(quat_mul(euler_to_quat(b), euler_to_quat(a)));
}

/// End-effector pose: position in meters plus unit-quaternion orientation.
struct Pose {
    Vec3 xyz;
    Quaternion quat;

    Vec3 transform(const Vec3& p) const { return quat.rotate(p) + xyz; }
    Vec3 inv_transform(const Vec3& p) const { return quat_inv(quat).rotate(p - xyz); }
};

inline Pose pose_compose(const Pose& a, const Pose& b) {
    return {a.xyz + a.quat.rotate(b.xyz), quat_mul(a.quat, b.quat)};
}

inline Pose pose_inverse(const Pose& p) {
    const Quaternion qi = quat_inv(p.quat);
    return {qi.rotate(-p.xyz), qi};
}

/// Relative pose change: translation difference plus relative rotation.
struct DeltaPose {
    Vec3 d_xyz;
    Quaternion d_quat;
};

/// Delta carrying p1 to p2: d_xyz = p2.xyz - p1.xyz, d_quat = q2 q1^-1.
inline DeltaPose pose_delta(const Pose& p1, const Pose& p2) {
    return {p2.xyz - p1.xyz, quat_mul(p2.quat, quat_inv(p1.quat))};
}

/// Exact inverse of pose_delta: apply_delta(p1, pose_delta(p1, p2)) == p2.
inline Pose apply_delta(const Pose& p, const DeltaPose& d) {
    return {p.xyz + d.d_xyz, quat_mul(d.d_quat, p.quat)};
}

} // namespace polybot
