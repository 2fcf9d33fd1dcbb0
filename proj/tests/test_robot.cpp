#include <catch2/catch_amalgamated.hpp>

#include "polybot/robot.hpp"
#include "test_util.hpp"

using namespace polybot;
using test_util::rot_dist;

namespace {

RobotModel ideal_model() {
    RobotModel m = robot_preset("fr");
    m.servo_lag = 0.0;
    m.actuation_noise_sd = 0.0;
    return m;
}

Pose tool_down_flange(const RobotModel& m, double x, double y, double tcp_z) {
    // flange x axis points straight down; flange sits tool_offset above the tcp
    return {{x, y, tcp_z + m.tool_offset}, Quaternion::from_axis_angle({0, 1, 0}, M_PI / 2.0)};
}

} // namespace

TEST_CASE("fk at zero configuration is the fully extended pose") {
    RobotModel m;
    m.base_offset = {-0.2, 0.0, 0.1};
    const double total = m.link_lengths[0] + m.link_lengths[1] + m.link_lengths[2];
    const Pose p = fk(m, Joints{});
    REQUIRE(p.xyz.x == Catch::Approx(total + m.base_offset.x).margin(1e-12));
    REQUIRE(p.xyz.y == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(p.xyz.z == Catch::Approx(m.base_offset.z).margin(1e-12));
    REQUIRE(rot_dist(p.quat, Quaternion::identity()) < 1e-12);
}

TEST_CASE("base rotation sweeps a circle of the full reach") {
    RobotModel m;
    const double total = m.link_lengths[0] + m.link_lengths[1] + m.link_lengths[2];
    for (double theta : {0.3, -0.9, 1.7}) {
        const Pose p = fk(m, Joints{theta, 0, 0, 0, 0, 0});
        const Vec3 rel = p.xyz - m.base_offset;
        REQUIRE(rel.norm() == Catch::Approx(total).margin(1e-12));
        REQUIRE(std::atan2(rel.y, rel.x) == Catch::Approx(theta).margin(1e-12));
    }
}

TEST_CASE("fk rejects joints outside limits") {
    RobotModel m;
    Joints q{};
    q[1] = m.joint_max[1] + 0.1;
    REQUIRE_THROWS_AS(fk(m, q), std::invalid_argument);
}

TEST_CASE("ik round-trips fk targets") {
    Rng rng(31);
    for (const char* name : {"wx", "sw", "fr"}) {
        const RobotModel m = robot_preset(name);
        int ok = 0, total = 0;
        for (int i = 0; i < 120; ++i) {
            Joints q;
            for (int j = 0; j < 6; ++j) {
                const double lo = m.joint_min[j] + 0.25;
                const double hi = (j == 4) ? 3.0 : m.joint_max[j] - 0.25;
                q[j] = rng.uniform(lo, hi);
            }
            const Pose target = fk(m, q);
            // operating envelope: table-height band, inside 88% reach, away
            // from the base column
            const double reach = m.link_lengths[0] + m.link_lengths[1] + m.link_lengths[2];
            const Vec3 rel = target.xyz - m.base_offset;
            if (target.xyz.z < 0.02 || target.xyz.z > 0.35 || rel.norm() > 0.88 * reach ||
                rel.norm() < 0.34)
                continue;
            ++total;
            Joints seed{};
            const IkResult r = ik_solve(m, target, seed);
            if (r.reachable) {
                const Pose achieved = fk(m, r.joints);
                REQUIRE((achieved.xyz - target.xyz).norm() < 1e-4);
                REQUIRE(rot_dist(achieved.quat, target.quat) < 1e-3);
                ++ok;
            } else {
                // best-effort iterate must still be close
                REQUIRE(r.pos_residual < 1e-2);
            }
        }
        INFO("preset " << name << ": " << ok << "/" << total);
        REQUIRE(total > 10);
        REQUIRE(ok * 10 >= total * 9);
    }
}

TEST_CASE("ik flags unreachable targets with a positive residual") {
    const RobotModel m = robot_preset("wx");
    const double reach = m.link_lengths[0] + m.link_lengths[1] + m.link_lengths[2];
    const Pose target{{m.base_offset.x + 2.0 * reach, 0, 0.2}, Quaternion::identity()};
    const IkResult r = ik_solve(m, target, Joints{});
    REQUIRE_FALSE(r.reachable);
    REQUIRE(r.pos_residual > 0.0);
}

TEST_CASE("ik with the current pose as target returns the seed unchanged") {
    const RobotModel m = robot_preset("sw");
    const Joints q{0.3, 0.7, -1.1, 0.2, 1.4, -0.5};
    const Pose target = fk(m, q);
    const IkResult r = ik_solve(m, target, q);
    REQUIRE(r.reachable);
    REQUIRE(r.iters == 0);
    for (int i = 0; i < 6; ++i) REQUIRE(r.joints[i] == q[i]);
}

TEST_CASE("task workspace is reachable with the tool pointing down") {
    for (const char* name : {"wx", "sw", "fr"}) {
        const RobotModel m = robot_preset(name);
        Joints seed{};
        REQUIRE(ik_solve(m, home_pose(), seed).reachable);
        const Joints home = ik_solve(m, home_pose(), seed).joints;
        for (double x : {0.10, 0.18, 0.26}) {
            for (double y : {-0.16, 0.0, 0.16}) {
                for (double z : {0.02, 0.12}) {
                    const IkResult r = ik_solve(m, tool_down_flange(m, x, y, z), home);
                    INFO(name << " x=" << x << " y=" << y << " z=" << z
                              << " residual=" << r.pos_residual);
                    REQUIRE(r.reachable);
                }
            }
        }
    }
}

TEST_CASE("blocking controller converges on reachable targets") {
    const RobotModel m = ideal_model();
    Controller c(m, EnvConfig{}, ControlMode::kBlocking, 7);
    const Pose target = tool_down_flange(m, 0.2, -0.1, 0.05);
    c.update_pose(target);
    const Pose got = c.get_ee_pose();
    REQUIRE((got.xyz - target.xyz).norm() < 2e-3);
    REQUIRE(rot_dist(got.quat, target.quat) < 6e-3);
}

TEST_CASE("nonblocking servo lag halves the per-tick motion") {
    RobotModel m = ideal_model();
    m.servo_lag = 0.5;
    EnvConfig env;
    Controller c(m, env, ControlMode::kNonBlocking, 7);
    const Joints before = c.get_joint_positions();
    Joints target = before;
    target[0] = before[0] + 1.0; // far beyond one tick of travel
    c.update_joints(target);
    const Joints after = c.get_joint_positions();
    const double cap = m.max_joint_velocity[0] / env.hz;
    REQUIRE(after[0] - before[0] == Catch::Approx(0.5 * cap).margin(1e-12));
}

TEST_CASE("gripper reaches the commanded fraction after a blocking settle") {
    Controller c(ideal_model(), EnvConfig{}, ControlMode::kBlocking, 7);
    c.update_gripper(0.7);
    REQUIRE(c.get_gripper_state() == Catch::Approx(0.7).margin(1e-9));
    REQUIRE_THROWS_AS(c.update_gripper(1.2), std::invalid_argument);
    REQUIRE_THROWS_AS(c.update_gripper(-0.1), std::invalid_argument);
}

TEST_CASE("per-tick joint change never exceeds the velocity cap") {
    RobotModel m = robot_preset("wx");
    EnvConfig env;
    Controller c(m, env, ControlMode::kNonBlocking, 99);
    Rng rng(41);
    Joints prev = c.get_joint_positions();
    for (int t = 0; t < 300; ++t) {
        Joints target;
        for (int i = 0; i < 6; ++i) target[i] = rng.uniform(m.joint_min[i], m.joint_max[i]);
        c.update_joints(target);
        const Joints now = c.get_joint_positions();
        for (int i = 0; i < 6; ++i) {
            REQUIRE(std::fabs(now[i] - prev[i]) <= m.max_joint_velocity[i] / env.hz + 1e-12);
        }
        prev = now;
    }
}

TEST_CASE("identical controllers given identical commands stay bit-identical") {
    const RobotModel m = robot_preset("sw");
    Controller a(m, EnvConfig{}, ControlMode::kNonBlocking, 1234);
    Controller b(m, EnvConfig{}, ControlMode::kNonBlocking, 1234);
    Rng rng(55);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> action(7);
        for (auto& v : action) v = rng.uniform(-1.0, 1.0);
        EnvConfig env;
        env_step(a, action, env);
        env_step(b, action, env);
        const Joints qa = a.get_joint_positions(), qb = b.get_joint_positions();
        for (int i = 0; i < 6; ++i) REQUIRE(qa[i] == qb[i]);
    }
}

TEST_CASE("env_step scales, asserts, and leaves an ideal robot alone on zero action") {
    const RobotModel m = ideal_model();
    EnvConfig env;
    env.max_lin_vel = 0.1;
    env.hz = 5.0;
    Controller c(m, env, ControlMode::kNonBlocking, 7);

    const Pose before = c.get_ee_pose();
    env_step(c, {0, 0, 0, 0, 0, 0, -1}, env);
    const Pose after = c.get_ee_pose();
    REQUIRE((after.xyz - before.xyz).norm() < 1e-9);
    REQUIRE(rot_dist(after.quat, before.quat) < 1e-9);

    const CommandedStep s = env_step(c, {1, 0, 0, 0, 0, 0, -1}, env);
    REQUIRE(s.commanded.d_xyz.x == Catch::Approx(0.02).margin(1e-15));
    REQUIRE(s.commanded.d_xyz.y == 0.0);

    REQUIRE_THROWS_AS(env_step(c, {1.2, 0, 0, 0, 0, 0, 0}, env), std::invalid_argument);
    REQUIRE_THROWS_AS(env_step(c, {0, 0, 0, 0, 0, 0}, env), std::invalid_argument);
}

namespace {

// Drive a controller toward a sequence of waypoints inside the workspace,
// returning the commanded deltas and achieved poses.
std::pair<std::vector<DeltaPose>, std::vector<Pose>> run_commands(Controller& c,
                                                                  const EnvConfig& env,
                                                                  int steps, Rng rng,
                                                                  bool zero_actions) {
    std::vector<DeltaPose> cmd;
    std::vector<Pose> poses;
    poses.push_back(c.get_ee_pose());
    Vec3 wp{0.18, 0.0, 0.2};
    for (int t = 0; t < steps; ++t) {
        std::vector<double> action(7, 0.0);
        action[6] = -1.0;
        if (!zero_actions) {
            if (t % 8 == 0)
                wp = {rng.uniform(0.10, 0.26), rng.uniform(-0.14, 0.14), rng.uniform(0.12, 0.26)};
            const Vec3 to = wp - c.get_ee_pose().xyz;
            const double scale = env.max_lin_vel / env.hz;
            action[0] = std::clamp(to.x / scale, -0.9, 0.9);
            action[1] = std::clamp(to.y / scale, -0.9, 0.9);
            action[2] = std::clamp(to.z / scale, -0.9, 0.9);
        }
        cmd.push_back(env_step(c, action, env).commanded);
        poses.push_back(c.get_ee_pose());
    }
    return {cmd, poses};
}

} // namespace

TEST_CASE("achieved delta error: ideal blocking robot is accurate") {
    const RobotModel m = ideal_model();
    EnvConfig env;
    Controller c(m, env, ControlMode::kBlocking, 7);
    auto [cmd, poses] = run_commands(c, env, 20, Rng(61), false);
    const DeltaErrorReport r = achieved_delta_error(cmd, poses);
    for (double e : r.per_step) REQUIRE(e < 1e-3 * 2.2);
}

TEST_CASE("achieved delta error: zero actions give zero error") {
    const RobotModel m = ideal_model();
    EnvConfig env;
    Controller c(m, env, ControlMode::kNonBlocking, 7);
    auto [cmd, poses] = run_commands(c, env, 10, Rng(62), true);
    const DeltaErrorReport r = achieved_delta_error(cmd, poses);
    REQUIRE(r.mean < 1e-9);
}

TEST_CASE("achieved delta error grows monotonically with servo lag") {
    EnvConfig env;
    double prev_mean = -1.0;
    for (double lag : {0.0, 0.1, 0.25, 0.4, 0.55}) {
        RobotModel m = ideal_model();
        m.servo_lag = lag;
        Controller c(m, env, ControlMode::kNonBlocking, 7);
        auto [cmd, poses] = run_commands(c, env, 40, Rng(63), false);
        const double mean = achieved_delta_error(cmd, poses).mean;
        REQUIRE(mean >= prev_mean);
        prev_mean = mean;
    }
}

TEST_CASE("preset error ordering wx > sw > fr") {
    EnvConfig env;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        double means[3];
        int k = 0;
        for (const char* name : {"wx", "sw", "fr"}) {
            Controller c(robot_preset(name), env, ControlMode::kNonBlocking, seed);
            auto [cmd, poses] = run_commands(c, env, 40, Rng(100 + seed), false);
            means[k++] = achieved_delta_error(cmd, poses).mean;
        }
        REQUIRE(means[0] > means[1]);
        REQUIRE(means[1] > means[2]);
    }
}
