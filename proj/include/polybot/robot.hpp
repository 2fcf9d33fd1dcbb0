#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "polybot/pose.hpp"
#include "polybot/rng.hpp"

namespace polybot {

using Joints = std::array<double, 6>;

/// Simulated arm: yaw-pitch-pitch arm links plus a 3-axis wrist whose last
/// link carries the flange. tool_offset is the flange-to-grasp-point
/// distance along the flange x axis and differs per robot, the way gripper
/// morphology differs between real arms.
struct RobotModel {
    int robot_id = 0;
    std::string name;
    std::array<double, 3> link_lengths{0.3, 0.3, 0.12};
    std::array<double, 6> joint_min{-2.9, -0.6, -2.8, -2.9, -2.2, -2.9};
    std::array<double, 6> joint_max{2.9, 1.6, 0.3, 2.9, 4.3, 2.9};
    std::array<double, 6> max_joint_velocity{2.0, 2.0, 2.2, 3.0, 3.0, 3.0};
    double servo_lag = 0.0;          // fraction of commanded motion lost per tick
    double actuation_noise_sd = 0.0; // radians, per joint per tick
    Vec3 base_offset{-0.25, 0.0, 0.08};
    double tool_offset = 0.05;
};

inline void validate(const RobotModel& m) {
    for (double l : m.link_lengths)
        if (!(l > 0.0)) throw std::invalid_argument("link length must be positive");
    if (!(m.servo_lag >= 0.0 && m.servo_lag < 1.0))
        throw std::invalid_argument("servo_lag must lie in [0,1)");
    for (int i = 0; i < 6; ++i)
        if (!(m.joint_min[i] < m.joint_max[i]))
            throw std::invalid_argument("joint limits must be well-ordered");
}

/// Stock presets. Lag/noise ordering wx > sw > fr; link lengths, bases and
/// tool offsets all differ. The magnitudes are free parameters of the
/// simulator; only the ordering is meaningful.
inline RobotModel robot_preset(const std::string& name) {
    RobotModel m;
    m.name = name;
    if (name == "wx") {
        m.robot_id = 0;
        m.link_lengths = {0.30, 0.30, 0.12};
        m.base_offset = {-0.24, 0.00, 0.08};
        m.tool_offset = 0.050;
        m.servo_lag = 0.35;
        m.actuation_noise_sd = 2.5e-3;
    } else if (name == "sw") {
        m.robot_id = 1;
        m.link_lengths = {0.33, 0.31, 0.14};
        m.base_offset = {-0.28, 0.02, 0.09};
        m.tool_offset = 0.062;
        m.servo_lag = 0.20;
        m.actuation_noise_sd = 1.2e-3;
    } else if (name == "fr") {
        m.robot_id = 2;
        m.link_lengths = {0.35, 0.33, 0.16};
        m.base_offset = {-0.31, -0.02, 0.10};
        m.tool_offset = 0.075;
        m.servo_lag = 0.08;
        m.actuation_noise_sd = 0.6e-3;
    } else {
        throw std::invalid_argument("unknown robot preset: " + name);
    }
    validate(m);
    return m;
}

struct EnvConfig {
    double hz = 5.0;
    double max_lin_vel = 0.25; // m/s
    double max_rot_vel = 1.5;  // rad/s
    int dof = 6;
    std::uint64_t seed = 0;

    void check() const {
        if (!(hz > 0.0 && max_lin_vel > 0.0 && max_rot_vel > 0.0 && dof > 0))
            throw std::invalid_argument("EnvConfig fields must be positive");
    }
};

namespace detail {
inline void check_joint_limits(const RobotModel& m, const Joints& q) {
    for (int i = 0; i < 6; ++i)
        if (q[i] < m.joint_min[i] - 1e-9 || q[i] > m.joint_max[i] + 1e-9)
            throw std::invalid_argument("joint " + std::to_string(i) + " outside limits");
}

inline Joints clamp_joints(const RobotModel& m, Joints q) {
    for (int i = 0; i < 6; ++i) {
        if (q[i] < m.joint_min[i]) q[i] = m.joint_min[i];
        if (q[i] > m.joint_max[i]) q[i] = m.joint_max[i];
    }
    return q;
}
} // namespace detail

/// Joint frames of the chain at configuration q, for Jacobians and drawing.
struct FkFrames {
    Vec3 base;
    Vec3 elbow;       // end of upper arm
    Vec3 wrist;       // end of forearm, wrist center
    Pose flange;      // end of wrist link; the pose fk/ik work with
    Vec3 tcp;         // grasp point, flange + tool_offset along flange x
    std::array<Vec3, 6> joint_origin;
    std::array<Vec3, 6> joint_axis;
};

inline FkFrames fk_frames(const RobotModel& m, const Joints& q) {
    FkFrames f;
    const double l1 = m.link_lengths[0], l2 = m.link_lengths[1], l3 = m.link_lengths[2];
    const Quaternion rz0 = Quaternion::from_axis_angle({0, 0, 1}, q[0]);
    const Quaternion ry1 = Quaternion::from_axis_angle({0, 1, 0}, q[1]);
    const Quaternion ry12 = Quaternion::from_axis_angle({0, 1, 0}, q[1] + q[2]);

    f.base = m.base_offset;
    const Vec3 upper = quat_mul(rz0, ry1).rotate({l1, 0, 0});
    f.elbow = f.base + upper;
    const Quaternion r_arm = quat_mul(rz0, ry12);
    f.wrist = f.elbow + r_arm.rotate({l2, 0, 0});

    const Quaternion rx3 = Quaternion::from_axis_angle({1, 0, 0}, q[3]);
    const Quaternion ry4 = Quaternion::from_axis_angle({0, 1, 0}, q[4]);
    const Quaternion rz5 = Quaternion::from_axis_angle({0, 0, 1}, q[5]);
    const Quaternion r_ee = quat_mul(quat_mul(quat_mul(r_arm, rx3), ry4), rz5);

    f.flange.quat = r_ee;
    f.flange.xyz = f.wrist + r_ee.rotate({l3, 0, 0});
    f.tcp = f.flange.transform({m.tool_offset, 0, 0});

    f.joint_origin = {f.base, f.base, f.elbow, f.wrist, f.wrist, f.wrist};
    f.joint_axis[0] = {0, 0, 1};
    f.joint_axis[1] = rz0.rotate({0, 1, 0});
    f.joint_axis[2] = f.joint_axis[1];
    f.joint_axis[3] = r_arm.rotate({1, 0, 0});
    f.joint_axis[4] = quat_mul(r_arm, rx3).rotate({0, 1, 0});
    f.joint_axis[5] = quat_mul(quat_mul(r_arm, rx3), ry4).rotate({0, 0, 1});
    return f;
}

/// Forward kinematics of the flange. Rejects joints outside limits.
inline Pose fk(const RobotModel& m, const Joints& q) {
    detail::check_joint_limits(m, q);
    return fk_frames(m, q).flange;
}

struct IkResult {
    Joints joints{};
    bool reachable = false;
    double pos_residual = 0.0;
    double rot_residual = 0.0;
    int iters = 0;
};

namespace detail {

// Solve (A + lambda^2 I) x = b for symmetric positive definite A (6x6),
// in-place Cholesky.
inline std::array<double, 6> solve_spd6(std::array<std::array<double, 6>, 6> a,
                                        std::array<double, 6> b, double lambda2) {
    for (int i = 0; i < 6; ++i) a[i][i] += lambda2;
    // LL^T factorization
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = a[i][j];
            for (int k = 0; k < j; ++k) s -= a[i][k] * a[j][k];
            if (i == j)
                a[i][i] = std::sqrt(std::max(s, 1e-12));
            else
                a[i][j] = s / a[j][j];
        }
    }
    // forward then backward substitution
    std::array<double, 6> y{};
    for (int i = 0; i < 6; ++i) {
        double s = b[i];
        for (int k = 0; k < i; ++k) s -= a[i][k] * y[k];
        y[i] = s / a[i][i];
    }
    std::array<double, 6> x{};
    for (int i = 5; i >= 0; --i) {
        double s = y[i];
        for (int k = i + 1; k < 6; ++k) s -= a[k][i] * x[k];
        x[i] = s / a[i][i];
    }
    return x;
}

} // namespace detail

inline constexpr double kIkPosTol = 1e-4;
inline constexpr double kIkRotTol = 1e-3;

/// Damped-least-squares IK, identical numeric routine for every robot.
/// Converges to fk error < 1e-4 m / 1e-3 rad or returns the best iterate
/// found with reachable == false and the remaining residuals.
inline IkResult ik_solve(const RobotModel& m, const Pose& target, const Joints& seed) {
    if (!std::isfinite(target.xyz.x) || !std::isfinite(target.xyz.y) ||
        !std::isfinite(target.xyz.z) || !std::isfinite(target.quat.w))
        throw std::invalid_argument("ik target must be finite");

    const int max_iters = 220;
    const double step_cap = 0.35;

    Joints q = detail::clamp_joints(m, seed);
    IkResult best;
    best.joints = q;
    double best_score = 1e18;
    int restarts = 0;
    int since_best = 0;
    int nudges = 0;

    for (int iter = 0; iter <= max_iters; ++iter) {
        const FkFrames f = fk_frames(m, q);
        const Vec3 e_pos = target.xyz - f.flange.xyz;
        const Vec3 e_rot = rotation_vector(quat_mul(target.quat, quat_inv(f.flange.quat)));
        const double pe = e_pos.norm(), re = e_rot.norm();
        const double score = pe + 0.1 * re;
        if (score < 0.999 * best_score) {
            best_score = score;
            best.joints = q;
            best.pos_residual = pe;
            best.rot_residual = re;
            since_best = 0;
        } else {
            ++since_best;
        }
        if (pe < kIkPosTol && re < kIkRotTol) {
            best.joints = q;
            best.pos_residual = pe;
            best.rot_residual = re;
            best.reachable = true;
            best.iters = iter;
            return best;
        }
        if (iter == max_iters) break;
        if (since_best >= 12 && best_score < 5e-3 && nudges < 6) {
            // stalled close to the target, usually a wrist singularity;
            // hop along the wrist self-motion direction and re-polish
            const double dir = (nudges % 2 == 0) ? 1.0 : -1.0;
            q = best.joints;
            q[3] += 0.4 * dir;
            q[5] -= 0.4 * dir;
            q = detail::clamp_joints(m, q);
            ++nudges;
            since_best = 0;
            continue;
        }
        if (iter == 180 || iter == 200 || iter == 212)
            q = best.joints; // polish the best iterate found so far
        if (iter > 0 && iter % 25 == 0 && restarts < 7 && best_score > 5e-3) {
            // reseed: aim the base at the target, pick a canonical arm fold,
            // and solve the wrist exactly for the target orientation
            // (intrinsic XYZ factorization of the residual rotation); the
            // last folds aim away from the target for near-base poses
            double aim = std::atan2(target.xyz.y - m.base_offset.y,
                                    target.xyz.x - m.base_offset.x);
            static constexpr std::array<std::array<double, 2>, 7> kArmFolds{{
                {0.8, -1.6}, {0.3, -0.9}, {1.2, -2.2}, {0.0, -0.3}, {1.5, -2.6},
                {0.5, -2.4}, {1.3, -2.7},
            }};
            if (restarts >= 5) aim = wrap_angle(aim + M_PI);
            const auto& fold = kArmFolds[static_cast<std::size_t>(restarts)];
            const Quaternion r_arm = quat_mul(Quaternion::from_axis_angle({0, 0, 1}, aim),
                                              Quaternion::from_axis_angle({0, 1, 0}, fold[0] + fold[1]));
            const EulerAngles ea = quat_to_euler(quat_mul(quat_inv(r_arm), target.quat));
            // both XYZ factorizations of the wrist rotation; prefer the one
            // violating the wrist joint limits least
            const EulerAngles eb{wrap_angle(ea.roll + M_PI), wrap_angle(M_PI - ea.pitch),
                                 wrap_angle(ea.yaw + M_PI)};
            auto violation = [&](const EulerAngles& e) {
                const double v[3] = {e.roll, e.pitch, e.yaw};
                double s = 0;
                for (int i = 0; i < 3; ++i) {
                    if (v[i] < m.joint_min[3 + i]) s += m.joint_min[3 + i] - v[i];
                    if (v[i] > m.joint_max[3 + i]) s += v[i] - m.joint_max[3 + i];
                }
                return s;
            };
            const EulerAngles& wrist = violation(eb) < violation(ea) ? eb : ea;
            q = detail::clamp_joints(
                m, Joints{aim, fold[0], fold[1], wrist.roll, wrist.pitch, wrist.yaw});
            ++restarts;
            continue;
        }

        // J columns: [axis x (p - origin); axis]
        std::array<std::array<double, 6>, 6> jac{};
        for (int c = 0; c < 6; ++c) {
            const Vec3 lin = f.joint_axis[c].cross(f.flange.xyz - f.joint_origin[c]);
            jac[0][c] = lin.x; jac[1][c] = lin.y; jac[2][c] = lin.z;
            jac[3][c] = f.joint_axis[c].x; jac[4][c] = f.joint_axis[c].y; jac[5][c] = f.joint_axis[c].z;
        }
        const std::array<double, 6> err{e_pos.x, e_pos.y, e_pos.z, e_rot.x, e_rot.y, e_rot.z};
        std::array<std::array<double, 6>, 6> jtj{};
        std::array<double, 6> jte{};
        for (int i = 0; i < 6; ++i) {
            for (int j = 0; j < 6; ++j) {
                double s = 0;
                for (int k = 0; k < 6; ++k) s += jac[k][i] * jac[k][j];
                jtj[i][j] = s;
            }
            double s = 0;
            for (int k = 0; k < 6; ++k) s += jac[k][i] * err[k];
            jte[i] = s;
        }
        // damping tapers off near the solution for fast terminal convergence
        const double lambda = std::clamp(score, 0.008, 0.05);
        std::array<double, 6> dq = detail::solve_spd6(jtj, jte, lambda * lambda);
        for (int i = 0; i < 6; ++i) {
            if (dq[i] > step_cap) dq[i] = step_cap;
            if (dq[i] < -step_cap) dq[i] = -step_cap;
            q[i] += dq[i];
        }
        q = detail::clamp_joints(m, q);
    }
    best.reachable = false;
    best.iters = max_iters;
    return best;
}

/// Canonical ready pose shared by all robots: above the workspace, flange x
/// axis pointing straight down.
inline Pose home_pose() {
    return {{0.18, 0.0, 0.22}, Quaternion::from_axis_angle({0, 1, 0}, M_PI / 2.0)};
}

enum class ControlMode { kBlocking, kNonBlocking };

struct ControllerState {
    Joints joints{};
    Joints joint_velocities{};
    double gripper = 0.0;
    ControlMode mode = ControlMode::kNonBlocking;
};

/// Lower-level robot controller. update_pose routes through the shared IK
/// solver; blocking mode settles each command (tolerance 1e-3 m / 5e-3 rad,
/// 200-tick cap), nonblocking mode advances exactly one control tick per
/// command. Per tick:
///   joints += (1 - servo_lag) * clamp(dq, +-max_vel/hz) + noise
/// with the total per-tick change clamped to +-max_vel/hz.
class Controller {
public:
    Controller(RobotModel model, EnvConfig env, ControlMode mode, std::uint64_t noise_seed)
        : model_(std::move(model)), env_(env), mode_(mode), rng_(noise_seed) {
        validate(model_);
        env_.check();
        Joints seed{};
        const IkResult r = ik_solve(model_, home_pose(), seed);
        if (!r.reachable)
            throw std::runtime_error("robot '" + model_.name + "' cannot reach the home pose");
        q_ = q_target_ = r.joints;
        qd_ = Joints{};
    }

    const RobotModel& model() const { return model_; }
    ControlMode mode() const { return mode_; }
    double sim_time() const { return sim_time_; }

    void update_pose(const Pose& target) {
        set_pose_target(target);
        advance();
    }

    void update_joints(const Joints& joints) {
        q_target_ = detail::clamp_joints(model_, joints);
        advance();
    }

    void update_gripper(double close_fraction) {
        set_gripper_target(close_fraction);
        advance();
    }

    Joints get_joint_positions() const { return q_; }
    Joints get_joint_velocities() const { return qd_; }
    double get_gripper_state() const { return gripper_; }
    Pose get_ee_pose() const { return fk_frames(model_, q_).flange; }
    Vec3 get_tcp() const { return fk_frames(model_, q_).tcp; }

    /// Combined dispatch used by the environment step: set both targets,
    /// then advance once (nonblocking) or settle (blocking).
    void command(const Pose& pose_target, double gripper_target) {
        set_gripper_target(gripper_target);
        set_pose_target(pose_target);
        advance();
    }

    /// One control tick of the servo dynamics.
    void step_once() {
        const Joints prev = q_;
        for (int i = 0; i < 6; ++i) {
            const double cap = model_.max_joint_velocity[i] / env_.hz;
            double d = q_target_[i] - q_[i];
            if (d > cap) d = cap;
            if (d < -cap) d = -cap;
            double dq = (1.0 - model_.servo_lag) * d;
            if (model_.actuation_noise_sd > 0.0)
                dq += rng_.normal(0.0, model_.actuation_noise_sd);
            if (dq > cap) dq = cap;
            if (dq < -cap) dq = -cap;
            q_[i] += dq;
        }
        q_ = detail::clamp_joints(model_, q_);
        for (int i = 0; i < 6; ++i) qd_[i] = (q_[i] - prev[i]) * env_.hz;

        const double gcap = kGripperRate / env_.hz;
        double gd = gripper_target_ - gripper_;
        if (gd > gcap) gd = gcap;
        if (gd < -gcap) gd = -gcap;
        gripper_ += (1.0 - model_.servo_lag) * gd;
        sim_time_ += 1.0 / env_.hz;
    }

private:
    static constexpr double kGripperRate = 2.0; // fraction/s
    static constexpr int kSettleCap = 200;
    static constexpr double kSettlePosTol = 1e-3;
    static constexpr double kSettleRotTol = 5e-3;
    static constexpr double kSettleGripTol = 1e-3;

    void set_pose_target(const Pose& target) {
        if (!std::isfinite(target.xyz.x) || !std::isfinite(target.xyz.y) ||
            !std::isfinite(target.xyz.z) || !std::isfinite(target.quat.w) ||
            !std::isfinite(target.quat.x) || !std::isfinite(target.quat.y) ||
            !std::isfinite(target.quat.z))
            throw std::invalid_argument("pose target must be finite");
        q_target_ = ik_solve(model_, target, q_).joints;
    }

    void set_gripper_target(double f) {
        if (!(f >= 0.0 && f <= 1.0))
            throw std::invalid_argument("gripper fraction must lie in [0,1]");
        gripper_target_ = f;
    }

    void advance() {
        if (mode_ == ControlMode::kNonBlocking) {
            step_once();
            return;
        }
        const Pose goal = fk_frames(model_, q_target_).flange;
        for (int t = 0; t < kSettleCap; ++t) {
            step_once();
            const Pose cur = fk_frames(model_, q_).flange;
            const double pe = (goal.xyz - cur.xyz).norm();
            const double re = rotation_vector(quat_mul(goal.quat, quat_inv(cur.quat))).norm();
            if (pe < kSettlePosTol && re < kSettleRotTol &&
                std::fabs(gripper_ - gripper_target_) < kSettleGripTol)
                break;
        }
    }

    RobotModel model_;
    EnvConfig env_;
    ControlMode mode_;
    Rng rng_;
    Joints q_{}, qd_{}, q_target_{};
    double gripper_ = 0.0, gripper_target_ = 0.0;
    double sim_time_ = 0.0;
};

/// Record of what one env step commanded, for relabeling and error metrics.
struct CommandedStep {
    DeltaPose commanded;
    Pose target_pose;
    double gripper_target = 0.0;
};

inline void check_action(const std::vector<double>& action, int dof) {
    if (static_cast<int>(action.size()) != dof + 1)
        throw std::invalid_argument("action length must be dof + 1");
    for (double a : action)
        if (!(a >= -1.0 && a <= 1.0))
            throw std::invalid_argument("action components must lie in [-1, 1]");
}

/// Shared higher-level environment step: scale the normalized action into
/// per-tick velocities, add to the current pose, dispatch to the controller,
/// advance the simulated clock (no wall-clock sleeping).
inline CommandedStep env_step(Controller& c, const std::vector<double>& action,
                              const EnvConfig& env) {
    check_action(action, env.dof);
    const double ls = env.max_lin_vel / env.hz;
    const double rs = env.max_rot_vel / env.hz;
    const Vec3 lin_vel{action[0] * ls, action[1] * ls, action[2] * ls};
    const EulerAngles rot_vel{action[3] * rs, action[4] * rs, action[5] * rs};
    const double gripper = 0.5 * (action[6] + 1.0);

    const Pose cur = c.get_ee_pose();
    const Vec3 desired_pos = cur.xyz + lin_vel;
    const EulerAngles desired_angle = add_angles(rot_vel, quat_to_euler(cur.quat));
    const Pose target{desired_pos, euler_to_quat(desired_angle)};
    c.command(target, gripper);
    return {DeltaPose{lin_vel, euler_to_quat(rot_vel)}, target, gripper};
}

struct DeltaErrorReport {
    std::vector<double> per_step;
    double mean = 0.0;
};

/// Per-step || commanded translation - achieved translation ||_2 plus the
/// trajectory mean. poses must have one more entry than commanded deltas.
inline DeltaErrorReport achieved_delta_error(const std::vector<DeltaPose>& commanded,
                                             const std::vector<Pose>& poses) {
    if (poses.size() != commanded.size() + 1)
        throw std::invalid_argument("need one more pose than commanded deltas");
    DeltaErrorReport r;
    r.per_step.reserve(commanded.size());
    double sum = 0.0;
    for (std::size_t t = 0; t < commanded.size(); ++t) {
        const Vec3 achieved = poses[t + 1].xyz - poses[t].xyz;
        const double e = (commanded[t].d_xyz - achieved).norm();
        r.per_step.push_back(e);
        sum += e;
    }
    r.mean = r.per_step.empty() ? 0.0 : sum / static_cast<double>(r.per_step.size());
    return r;
}

} // namespace polybot
