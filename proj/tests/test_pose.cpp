#include <catch2/catch_amalgamated.hpp>

#include "polybot/pose.hpp"
#include "polybot/rng.hpp"
#include "test_util.hpp"

using namespace polybot;
using test_util::random_unit_quat;
using test_util::rot_dist;

TEST_CASE("quat_mul basics") {
    Rng rng(11);
    const Quaternion id = Quaternion::identity();
    for (int i = 0; i < 100; ++i) {
        const Quaternion q = random_unit_quat(rng);
        REQUIRE(rot_dist(quat_mul(id, q), q) < 1e-12);
        REQUIRE(rot_dist(quat_mul(q, quat_inv(q)), id) < 1e-12);
    }

    // 90 deg about z twice = 180 deg about z = (0,0,0,1).
    const Quaternion qz90 = Quaternion::from_axis_angle({0, 0, 1}, M_PI / 2.0);
    const Quaternion r = quat_mul(qz90, qz90);
    REQUIRE(rot_dist(r, Quaternion(0, 0, 0, 1)) < 1e-12);
}

TEST_CASE("quat_inv is the conjugate") {
    const Quaternion id = Quaternion::identity();
    REQUIRE(rot_dist(quat_inv(id), id) == 0.0);

    const double c = std::cos(M_PI / 4.0), s = std::sin(M_PI / 4.0);
    const Quaternion q{c, 0, 0, s};
    const Quaternion qi = quat_inv(q);
    REQUIRE(qi.w == Catch::Approx(c));
    REQUIRE(qi.z == Catch::Approx(-s));

    Rng rng(12);
    for (int i = 0; i < 1000; ++i) {
        const Quaternion r = random_unit_quat(rng);
        REQUIRE(rot_dist(quat_mul(r, quat_inv(r)), id) < 1e-9);
    }
}

TEST_CASE("geodesic_dist examples") {
    Rng rng(13);
    const Quaternion q = random_unit_quat(rng);
    REQUIRE(geodesic_dist(q, q) < 1e-9);

    // identity vs 90 deg about z: <p,q> = cos(45 deg), arccos(2*0.5-1) = pi/2.
    const Quaternion qz90 = Quaternion::from_axis_angle({0, 0, 1}, M_PI / 2.0);
    REQUIRE(geodesic_dist(Quaternion::identity(), qz90) == Catch::Approx(M_PI / 2.0).margin(1e-12));

    const Quaternion nq{-q.w, -q.x, -q.y, -q.z};
    REQUIRE(geodesic_dist(q, nq) < 1e-9);
}

TEST_CASE("geodesic_dist invariants on 10k random pairs") {
    Rng rng(14);
    for (int i = 0; i < 10000; ++i) {
        const Quaternion p = random_unit_quat(rng);
        const Quaternion q = random_unit_quat(rng);
        const double d = geodesic_dist(p, q);
        REQUIRE(d >= 0.0);
        REQUIRE(d <= M_PI + 1e-12);
        REQUIRE(geodesic_dist(q, p) == Catch::Approx(d).margin(1e-12));
        const Quaternion np{-p.w, -p.x, -p.y, -p.z};
        REQUIRE(geodesic_dist(np, q) == Catch::Approx(d).margin(1e-9));
        // zero iff same rotation (up to sign)
        if (d < 1e-9) REQUIRE(rot_dist(p, q) < 1e-4);
    }
}

TEST_CASE("wrap_angle is idempotent and lands in (-pi, pi]") {
    Rng rng(15);
    REQUIRE(wrap_angle(M_PI) == Catch::Approx(M_PI));
    REQUIRE(wrap_angle(-M_PI) == Catch::Approx(M_PI));
    REQUIRE(wrap_angle(0.0) == 0.0);
    for (int i = 0; i < 1000; ++i) {
        const double a = rng.uniform(-50.0, 50.0);
        const double w = wrap_angle(a);
        REQUIRE(w > -M_PI);
        REQUIRE(w <= M_PI);
        REQUIRE(wrap_angle(w) == Catch::Approx(w).margin(1e-12));
        // same angle modulo 2pi
        REQUIRE(std::fabs(std::remainder(a - w, 2.0 * M_PI)) < 1e-9);
    }
}

TEST_CASE("add_angles examples") {
    const EulerAngles zero{};
    const EulerAngles b{0.3, -0.2, 0.9};
    const EulerAngles r = add_angles(zero, b);
    REQUIRE(rot_dist(euler_to_quat(r), euler_to_quat(b)) < 1e-9);

    const EulerAngles y1{0, 0, 0.1};
    const EulerAngles sum = add_angles(y1, y1);
    REQUIRE(sum.roll == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(sum.pitch == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(sum.yaw == Catch::Approx(0.2).margin(1e-12));
}

TEST_CASE("add_angles agrees with quaternion composition on 1000 random pairs") {
    Rng rng(16);
    for (int i = 0; i < 1000; ++i) {
        const EulerAngles a{rng.uniform(-M_PI, M_PI), rng.uniform(-1.4, 1.4),
                            rng.uniform(-M_PI, M_PI)};
        const EulerAngles b{rng.uniform(-M_PI, M_PI), rng.uniform(-1.4, 1.4),
                            rng.uniform(-M_PI, M_PI)};
        const Quaternion via_euler = euler_to_quat(add_angles(a, b));
        const Quaternion oracle = quat_mul(euler_to_quat(b), euler_to_quat(a));
        REQUIRE(rot_dist(via_euler, oracle) < 1e-9);
    }
}

TEST_CASE("euler round-trips preserve the rotation") {
    Rng rng(17);
    for (int i = 0; i < 10000; ++i) {
        const Quaternion q = random_unit_quat(rng);
        const Quaternion q2 = euler_to_quat(quat_to_euler(q));
        REQUIRE(rot_dist(q, q2) < 1e-9);
    }
    // gimbal-adjacent pitches
    for (const double s : {1.0, -1.0}) {
        const EulerAngles e{0.4, s * (M_PI / 2.0 - 1e-4), -0.7};
        const Quaternion q = euler_to_quat(e);
        REQUIRE(rot_dist(q, euler_to_quat(quat_to_euler(q))) < 1e-9);
    }
    // exact gimbal: roll folds into yaw deterministically
    const EulerAngles g{0.5, M_PI / 2.0, 0.2};
    const Quaternion qg = euler_to_quat(g);
    const EulerAngles eg = quat_to_euler(qg);
    REQUIRE(eg.roll == 0.0);
    REQUIRE(rot_dist(euler_to_quat(eg), qg) < 1e-9);
}

TEST_CASE("pose_delta / apply_delta examples") {
    Rng rng(18);
    const Pose p{{0.4, -0.1, 0.2}, random_unit_quat(rng)};
    const DeltaPose d0 = pose_delta(p, p);
    REQUIRE(d0.d_xyz.norm() == 0.0);
    REQUIRE(rot_dist(d0.d_quat, Quaternion::identity()) < 1e-9);

    const Pose origin{{0, 0, 0}, Quaternion::identity()};
    const Pose moved{{1, 2, 3}, Quaternion::identity()};
    const DeltaPose d = pose_delta(origin, moved);
    REQUIRE(d.d_xyz.x == 1.0);
    REQUIRE(d.d_xyz.y == 2.0);
    REQUIRE(d.d_xyz.z == 3.0);
    REQUIRE(rot_dist(d.d_quat, Quaternion::identity()) < 1e-12);
}

TEST_CASE("pose_delta and apply_delta are mutually inverse on 1000 random pairs") {
    Rng rng(19);
    for (int i = 0; i < 1000; ++i) {
        const Pose p1{{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)},
                      random_unit_quat(rng)};
        const Pose p2{{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)},
                      random_unit_quat(rng)};
        const Pose back = apply_delta(p1, pose_delta(p1, p2));
        REQUIRE((back.xyz - p2.xyz).norm() < 1e-9);
        REQUIRE(rot_dist(back.quat, p2.quat) < 1e-9);
    }
}

TEST_CASE("quaternion constructors normalize") {
    const Quaternion q(2.0, 0.0, 0.0, 0.0);
    REQUIRE(std::fabs(q.dot(q) - 1.0) < 1e-9);
    const Quaternion r(0.3, -1.2, 0.4, 2.2);
    REQUIRE(std::fabs(r.dot(r) - 1.0) < 1e-9);
}

TEST_CASE("rotation_vector round-trip") {
    Rng rng(20);
    for (int i = 0; i < 1000; ++i) {
        const Quaternion q = random_unit_quat(rng);
        const Vec3 rv = rotation_vector(q);
        const Quaternion back = Quaternion::from_axis_angle(rv, rv.norm());
        REQUIRE(rot_dist(q, back) < 1e-9);
    }
}
