#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <vector>

#include "polybot/pose.hpp"
#include "polybot/robot.hpp"

namespace polybot {

/// 64x64 RGB image, intensities quantized to 8 bits; at() returns [0,1].
struct Image {
    static constexpr int kW = 64;
    static constexpr int kH = 64;
    static constexpr int kC = 3;
    std::array<std::uint8_t, kW * kH * kC> px{};

    float at(int x, int y, int c) const {
        return static_cast<float>(px[(y * kW + x) * kC + c]) / 255.0f;
    }
    void set(int x, int y, float r, float g, float b) {
        auto q = [](float v) {
            v = std::clamp(v, 0.0f, 1.0f);
            return static_cast<std::uint8_t>(v * 255.0f + 0.5f);
        };
        std::uint8_t* p = &px[(y * kW + x) * kC];
        p[0] = q(r); p[1] = q(g); p[2] = q(b);
    }
    bool operator==(const Image& o) const { return px == o.px; }
};

inline double image_l2(const Image& a, const Image& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.px.size(); ++i) {
        const double d = (static_cast<double>(a.px[i]) - static_cast<double>(b.px[i])) / 255.0;
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(a.px.size()));
}

struct Color {
    float r = 0, g = 0, b = 0;
    Color scaled(float k) const { return {r * k, g * k, b * k}; }
};

/// Orthographic camera. Looks along the +x axis of its pose; the image u
/// axis is the camera -y (so +y is to the left) and v is the camera +z.
class OrthoCamera {
public:
    OrthoCamera(const Pose& pose, double half_width)
        : inv_(pose_inverse(pose)), half_(half_width) {}

    // Project a world point to continuous pixel coordinates plus depth.
    void project(const Vec3& p, double& px, double& py, double& depth) const {
        const Vec3 c = inv_.quat.rotate(p) + inv_.xyz;
        depth = c.x;
        px = (0.5 - 0.5 * c.y / half_) * Image::kW;
        py = (0.5 - 0.5 * c.z / half_) * Image::kH;
    }
    double px_per_meter() const { return 0.5 * Image::kW / half_; }

private:
    Pose inv_;
    double half_;
};

/// Depth cue for flat shading: nearer surfaces render brighter.
inline float depth_shade(double depth) {
    return static_cast<float>(std::clamp(1.12 - 1.5 * depth, 0.25, 1.0));
}

class Canvas {
public:
    Canvas(Image& img, const OrthoCamera& cam) : img_(img), cam_(cam) {}

    void fill(const Color& c) {
        for (int y = 0; y < Image::kH; ++y)
            for (int x = 0; x < Image::kW; ++x) img_.set(x, y, c.r, c.g, c.b);
    }

    void disc(const Vec3& center, double radius, const Color& c, bool shade = true) {
        double px, py, d;
        cam_.project(center, px, py, d);
        if (d <= 0.0) return;
        const Color col = shade ? c.scaled(depth_shade(d)) : c;
        const double rp = radius * cam_.px_per_meter();
        const int x0 = std::max(0, static_cast<int>(px - rp - 1));
        const int x1 = std::min(Image::kW - 1, static_cast<int>(px + rp + 1));
        const int y0 = std::max(0, static_cast<int>(py - rp - 1));
        const int y1 = std::min(Image::kH - 1, static_cast<int>(py + rp + 1));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double dx = x + 0.5 - px, dy = y + 0.5 - py;
                if (dx * dx + dy * dy <= rp * rp) img_.set(x, y, col.r, col.g, col.b);
            }
    }

    /// Thick segment between world points, width in meters.
    void line(const Vec3& a, const Vec3& b, double width, const Color& c, bool shade = true) {
        double ax, ay, ad, bx, by, bd;
        cam_.project(a, ax, ay, ad);
        cam_.project(b, bx, by, bd);
        if (ad <= 0.0 && bd <= 0.0) return;
        const Color col = shade ? c.scaled(depth_shade(0.5 * (ad + bd))) : c;
        const double wp = std::max(1.0, width * cam_.px_per_meter());
        const double vx = bx - ax, vy = by - ay;
        const double len2 = vx * vx + vy * vy;
        const int x0 = std::max(0, static_cast<int>(std::min(ax, bx) - wp - 1));
        const int x1 = std::min(Image::kW - 1, static_cast<int>(std::max(ax, bx) + wp + 1));
        const int y0 = std::max(0, static_cast<int>(std::min(ay, by) - wp - 1));
        const int y1 = std::min(Image::kH - 1, static_cast<int>(std::max(ay, by) + wp + 1));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double pxc = x + 0.5, pyc = y + 0.5;
                double t = len2 > 1e-12 ? ((pxc - ax) * vx + (pyc - ay) * vy) / len2 : 0.0;
                t = std::clamp(t, 0.0, 1.0);
                const double dx = pxc - (ax + t * vx), dy = pyc - (ay + t * vy);
                if (dx * dx + dy * dy <= 0.25 * wp * wp) img_.set(x, y, col.r, col.g, col.b);
            }
    }

    /// Filled convex quad given world corners (in order).
    void quad(const std::array<Vec3, 4>& corners, const Color& c, bool shade = true) {
        double xs[4], ys[4], ds[4];
        for (int i = 0; i < 4; ++i) cam_.project(corners[i], xs[i], ys[i], ds[i]);
        const double dmean = 0.25 * (ds[0] + ds[1] + ds[2] + ds[3]);
        if (dmean <= 0.0) return;
        const Color col = shade ? c.scaled(depth_shade(dmean)) : c;
        const int x0 = std::max(0, static_cast<int>(*std::min_element(xs, xs + 4)));
        const int x1 = std::min(Image::kW - 1, static_cast<int>(*std::max_element(xs, xs + 4)) + 1);
        const int y0 = std::max(0, static_cast<int>(*std::min_element(ys, ys + 4)));
        const int y1 = std::min(Image::kH - 1, static_cast<int>(*std::max_element(ys, ys + 4)) + 1);
        // winding sign of the projected polygon
        double area = 0.0;
        for (int i = 0; i < 4; ++i) {
            const int j = (i + 1) % 4;
            area += xs[i] * ys[j] - xs[j] * ys[i];
        }
        const double sign = area >= 0.0 ? 1.0 : -1.0;
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double pxc = x + 0.5, pyc = y + 0.5;
                bool inside = true;
                for (int i = 0; i < 4 && inside; ++i) {
                    const int j = (i + 1) % 4;
                    const double cr = (xs[j] - xs[i]) * (pyc - ys[i]) - (ys[j] - ys[i]) * (pxc - xs[i]);
                    if (sign * cr < 0.0) inside = false;
                }
                if (inside) img_.set(x, y, col.r, col.g, col.b);
            }
    }

    /// Axis-aligned box footprint on the plane z = top, centered at c.
    void box_top(const Vec3& c, double hx, double hy, const Color& col, bool shade = true) {
        quad({Vec3{c.x - hx, c.y - hy, c.z}, Vec3{c.x + hx, c.y - hy, c.z},
              Vec3{c.x + hx, c.y + hy, c.z}, Vec3{c.x - hx, c.y + hy, c.z}},
             col, shade);
    }

private:
    Image& img_;
    const OrthoCamera& cam_;
};

/// Fixed per-robot wrist camera mount: a small rotation and offset relative
/// to the flange, different per robot but constant over time. Mirrors wrist
/// mounts that are hand-fitted per arm rather than standardized.
inline Pose wrist_mount(const RobotModel& m) {
    const std::uint64_t h = mix64(0xCA33u + static_cast<std::uint64_t>(m.robot_id));
    auto u = [&](int k) {
        return (static_cast<double>((h >> (k * 8)) & 0xFF) / 255.0) * 2.0 - 1.0;
    };
    const Vec3 axis{u(0), u(1), u(2)};
    const double angle = 0.06 * u(3);                    // up to ~3.4 deg
    const Vec3 off{0.004 * u(4), 0.004 * u(5), 0.004 * u(6)}; // up to 4 mm
    return {off, Quaternion::from_axis_angle(axis, angle)};
}

/// Fixed world-frame exterior camera; placement differs per robot the way
/// tripod-mounted cameras differ between lab setups.
inline Pose exterior_camera(const RobotModel& m) {
    const int id = m.robot_id;
    const Vec3 eye{0.95 + 0.07 * id, -0.55 + 0.16 * id, 0.52 + 0.05 * id};
    const Vec3 look{0.16, 0.0, 0.06};
    Vec3 fwd = look - eye;
    fwd = fwd * (1.0 / fwd.norm());
    Vec3 up{0, 0, 1};
    Vec3 zc = up - fwd * up.dot(fwd);
    zc = zc * (1.0 / zc.norm());
    const Vec3 yc = zc.cross(fwd);
    return {eye, quat_from_basis(fwd, yc, zc)};
}

inline constexpr double kWristHalfWidth = 0.30;
inline constexpr double kExteriorHalfWidth = 0.44;

} // namespace polybot
