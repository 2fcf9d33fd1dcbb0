#pragma once

#include <optional>
#include <string>
#include <vector>

#include "polybot/render.hpp"
#include "polybot/robot.hpp"

namespace polybot {

enum class TaskKind { kPickPlace, kShelf };

enum class ObjectShape { kDisc, kCapsule, kBox };

struct ObjectSpec {
    ObjectShape shape = ObjectShape::kDisc;
    Color color{0.85f, 0.15f, 0.12f};
    double radius = 0.016;     // disc/capsule radius, box half-thickness
    double half_length = 0.0;  // capsule half length / box half x
    double half_width = 0.0;   // box half y
    double rest_z = 0.012;     // resting height of the center above a floor
};

struct Distractor {
    ObjectSpec spec;
    Vec3 position;
};

struct Box2 {
    double x_lo = 0, x_hi = 0, y_lo = 0, y_hi = 0;
};

/// Where released objects can come to rest besides the table.
struct RestZone {
    Vec3 center;       // of the opening, z = floor height
    double hx = 0, hy = 0;
    double z_top = 0;  // top of the opening
};

/// Goal region, closed box plus an optional orientation requirement.
struct GoalRegion {
    Vec3 center;
    double hx = 0, hy = 0;
    double z_lo = 0, z_hi = 0;
};

struct TaskSpec {
    int task_id = 0;
    std::string name;
    std::string scenario;  // "", or "s1".."s5" for target variants
    TaskKind kind = TaskKind::kPickPlace;
    ObjectSpec object;
    Pose container_pose;   // container (pick/place) or shelf (shelf tasks)
    Pose holder_pose;      // shelf tasks: fixture the object starts in
    bool reversed_holder = false;
    std::vector<Distractor> distractors;
    bool requires_rotation = false;
    double rotation_angle = 0.0;  // world-y reorientation the task demands
    Box2 start_region;
    int n_backgrounds = 3;
    GoalRegion goal;
    std::vector<RestZone> rest_zones;
    double rot_tol = 0.5;  // radians about the required axis
    Vec3 insert_point;     // tcp target for the final placement move
    Vec3 pre_insert_point; // staging point before the final move
};

/// World ground truth. grasped implies the object moves rigidly with the
/// flange; joints mirror the controller for exterior rendering.
struct WorldState {
    Pose ee_pose;
    Joints joints{};
    double gripper = 0.0;
    Pose object_pose;
    bool grasped = false;
    std::vector<Vec3> distractor_pos;
    int background_id = 0;
};

// ---------------------------------------------------------------------------
// Suite construction

namespace scene {
inline constexpr double kHover = 0.10;

struct Palette {
    Color bg, table, accent;
};

inline Palette palette(int background_id) {
    switch (background_id % 3) {
        case 0: return {{0.72f, 0.70f, 0.66f}, {0.60f, 0.56f, 0.50f}, {0.52f, 0.44f, 0.36f}};
        case 1: return {{0.52f, 0.62f, 0.72f}, {0.42f, 0.52f, 0.60f}, {0.30f, 0.44f, 0.56f}};
        default: return {{0.70f, 0.58f, 0.70f}, {0.58f, 0.46f, 0.58f}, {0.48f, 0.34f, 0.50f}};
    }
}

inline const Color kContainerColor{0.95f, 0.95f, 0.92f};
inline const Color kShelfColor{0.52f, 0.36f, 0.20f};
inline const Color kShelfDark{0.30f, 0.20f, 0.10f};
inline const Color kHolderColor{0.82f, 0.78f, 0.60f};
inline const Color kGripperColor{0.20f, 0.20f, 0.24f};
} // namespace scene

inline ObjectSpec marker_object() {
    return {ObjectShape::kDisc, {0.85f, 0.15f, 0.12f}, 0.016, 0.0, 0.0, 0.012};
}
inline ObjectSpec banana_object() {
    return {ObjectShape::kCapsule, {0.90f, 0.82f, 0.10f}, 0.012, 0.030, 0.0, 0.010};
}
inline ObjectSpec pen_object() {
    return {ObjectShape::kCapsule, {0.15f, 0.30f, 0.90f}, 0.008, 0.035, 0.0, 0.008};
}
inline ObjectSpec book_object() {
    return {ObjectShape::kBox, {0.10f, 0.62f, 0.25f}, 0.008, 0.024, 0.015, 0.008};
}

namespace detail {

inline TaskSpec base_pick_place() {
    TaskSpec t;
    t.task_id = 0;
    t.name = "pick_place";
    t.kind = TaskKind::kPickPlace;
    t.object = marker_object();
    t.container_pose = {{0.14, 0.13, 0.0}, Quaternion::identity()};
    t.start_region = {0.12, 0.26, -0.16, -0.02};
    t.goal = {{0.14, 0.13, 0.0}, 0.05, 0.05, 0.0, 0.05};
    t.rest_zones = {{{0.14, 0.13, 0.0}, 0.05, 0.05, 0.045}};
    t.insert_point = {0.14, 0.13, 0.065};
    t.pre_insert_point = {0.14, 0.13, scene::kHover};
    return t;
}

inline TaskSpec base_shelf() {
    TaskSpec t;
    t.task_id = 1;
    t.name = "shelf";
    t.kind = TaskKind::kShelf;
    t.object = book_object();
    t.container_pose = {{0.12, 0.14, 0.0}, Quaternion::identity()};  // shelf
    t.holder_pose = {{0.22, -0.10, 0.0}, Quaternion::identity()};
    t.start_region = {0.19, 0.25, -0.13, -0.07};
    // top compartment
    t.goal = {{0.12, 0.14, 0.0}, 0.05, 0.05, 0.10, 0.17};
    t.rest_zones = {{{0.12, 0.14, 0.10}, 0.05, 0.05, 0.17},
                    {{0.12, 0.14, 0.02}, 0.05, 0.05, 0.08}};
    t.insert_point = {0.12, 0.14, 0.145};
    t.pre_insert_point = {0.12, 0.14, 0.21};
    return t;
}

} // namespace detail

struct TaskSuite {
    std::vector<TaskSpec> shared;
    std::vector<TaskSpec> targets;

    int n_tasks() const { return static_cast<int>(shared.size() + targets.size()); }

    const TaskSpec& by_id(int id) const {
        for (const auto& t : shared)
            if (t.task_id == id) return t;
        for (const auto& t : targets)
            if (t.task_id == id) return t;
        throw std::invalid_argument("unknown task id " + std::to_string(id));
    }

    const TaskSpec& by_scenario(const std::string& s) const {
        for (const auto& t : targets)
            if (t.scenario == s) return t;
        throw std::invalid_argument("unknown scenario " + s);
    }
};

/// Shared tasks (base pick/place + base shelf, 3 backgrounds each) plus the
/// five target variants s1..s5.
inline TaskSuite make_suite() {
    TaskSuite suite;
    suite.shared = {detail::base_pick_place(), detail::base_shelf()};

    TaskSpec s1 = detail::base_pick_place();
    s1.task_id = 2;
    s1.name = "pick_place_distractor";
    s1.scenario = "s1";
    s1.n_backgrounds = 1;
    s1.distractors.push_back({{ObjectShape::kDisc, {0.80f, 0.15f, 0.75f}, 0.020, 0, 0, 0.010},
                              {0.24, 0.10, 0.010}});

    TaskSpec s2 = detail::base_pick_place();
    s2.task_id = 3;
    s2.name = "pick_place_banana";
    s2.scenario = "s2";
    s2.n_backgrounds = 1;
    s2.object = banana_object();

    TaskSpec s3 = detail::base_pick_place();
    s3.task_id = 4;
    s3.name = "pick_place_pen_cup";
    s3.scenario = "s3";
    s3.n_backgrounds = 1;
    s3.object = pen_object();
    s3.requires_rotation = true;
    s3.rotation_angle = -1.35;  // pen pitches up to near-vertical
    s3.container_pose = {{0.13, 0.12, 0.0}, Quaternion::identity()};
    s3.goal = {{0.13, 0.12, 0.0}, 0.024, 0.024, 0.0, 0.06};
    s3.rest_zones = {{{0.13, 0.12, 0.0}, 0.026, 0.026, 0.06}};
    s3.insert_point = {0.13, 0.12, 0.045};
    s3.pre_insert_point = {0.13, 0.12, scene::kHover + 0.02};

    TaskSpec s4 = detail::base_shelf();
    s4.task_id = 5;
    s4.name = "shelf_reversed";
    s4.scenario = "s4";
    s4.n_backgrounds = 1;
    s4.reversed_holder = true;

    TaskSpec s5 = detail::base_shelf();
    s5.task_id = 6;
    s5.name = "shelf_lower";
    s5.scenario = "s5";
    s5.n_backgrounds = 1;
    s5.requires_rotation = true;
    s5.rotation_angle = 1.25;
    // bottom compartment, entered from the front at an angle
    s5.goal = {{0.12, 0.14, 0.0}, 0.05, 0.05, 0.01, 0.08};
    s5.insert_point = {0.13, 0.14, 0.055};
    s5.pre_insert_point = {0.20, 0.14, 0.09};

    suite.targets = {s1, s2, s3, s4, s5};
    return suite;
}

// ---------------------------------------------------------------------------
// Success predicate

/// Object orientation requirement for rotation tasks: the object's local x
/// axis must end up near the axis produced by the demanded (signed) world-y
/// pitch, i.e. Ry(angle) applied to x.
inline bool rotation_satisfied(const TaskSpec& t, const WorldState& w) {
    if (!t.requires_rotation) return true;
    const Vec3 axis = w.object_pose.quat.rotate({1, 0, 0});
    const Vec3 want{std::cos(t.rotation_angle), 0.0, -std::sin(t.rotation_angle)};
    const double c = std::clamp(axis.dot(want), -1.0, 1.0);
    return std::acos(c) <= t.rot_tol;
}

/// Closed-box goal test: faces count as inside.
inline bool success(const TaskSpec& t, const WorldState& w) {
    if (w.grasped) return false;
    const Vec3& p = w.object_pose.xyz;
    if (std::fabs(p.x - t.goal.center.x) > t.goal.hx) return false;
    if (std::fabs(p.y - t.goal.center.y) > t.goal.hy) return false;
    if (p.z < t.goal.z_lo || p.z > t.goal.z_hi) return false;
    return rotation_satisfied(t, w);
}

// ---------------------------------------------------------------------------
// Rendering

namespace detail {

inline void draw_object_at(Canvas& canvas, const ObjectSpec& o, const Pose& pose) {
    switch (o.shape) {
        case ObjectShape::kDisc:
            canvas.disc(pose.xyz, o.radius, o.color);
            break;
        case ObjectShape::kCapsule: {
            const Vec3 a = pose.transform({-o.half_length, 0, 0});
            const Vec3 b = pose.transform({o.half_length, 0, 0});
            canvas.line(a, b, 2.0 * o.radius, o.color);
            break;
        }
        case ObjectShape::kBox: {
            const std::array<Vec3, 4> corners{
                pose.transform({-o.half_length, -o.half_width, o.radius}),
                pose.transform({o.half_length, -o.half_width, o.radius}),
                pose.transform({o.half_length, o.half_width, o.radius}),
                pose.transform({-o.half_length, o.half_width, o.radius})};
            canvas.quad(corners, o.color);
            break;
        }
    }
}

inline void draw_scene(Canvas& canvas, const WorldState& w, const TaskSpec& t) {
    const scene::Palette pal = scene::palette(w.background_id);
    canvas.fill(pal.bg);
    // table top plus two accent stripes that move with the colorway
    canvas.box_top({0.20, 0.0, 0.0}, 0.26, 0.34, pal.table);
    canvas.box_top({0.06, -0.22, 0.0005}, 0.05, 0.09, pal.accent);
    canvas.box_top({0.33, 0.20, 0.0005}, 0.08, 0.05, pal.accent);

    if (t.kind == TaskKind::kPickPlace) {
        const Vec3 c = t.container_pose.xyz;
        const GoalRegion& g = t.goal;
        if (t.requires_rotation) {
            // cup: rim ring seen from above
            canvas.disc({c.x, c.y, 0.02}, g.hx + 0.012, scene::kContainerColor);
            canvas.disc({c.x, c.y, 0.021}, g.hx + 0.002, pal.table.scaled(0.55f));
        } else {
            canvas.box_top({c.x, c.y, 0.015}, g.hx + 0.012, g.hy + 0.012, scene::kContainerColor);
            canvas.box_top({c.x, c.y, 0.016}, g.hx, g.hy, pal.table.scaled(0.6f));
        }
    } else {
        // shelf: top face, front face, and the compartment openings
        const Vec3 s = t.container_pose.xyz;
        const double hx = 0.05, hy = 0.062;
        canvas.box_top({s.x, s.y, 0.18}, hx, hy, scene::kShelfColor);
        const double xf = s.x + hx;
        canvas.quad({Vec3{xf, s.y - hy, 0.0}, Vec3{xf, s.y + hy, 0.0},
                     Vec3{xf, s.y + hy, 0.18}, Vec3{xf, s.y - hy, 0.18}},
                    scene::kShelfColor.scaled(0.8f));
        canvas.quad({Vec3{xf + 0.001, s.y - 0.045, 0.10}, Vec3{xf + 0.001, s.y + 0.045, 0.10},
                     Vec3{xf + 0.001, s.y + 0.045, 0.165}, Vec3{xf + 0.001, s.y - 0.045, 0.165}},
                    scene::kShelfDark);
        canvas.quad({Vec3{xf + 0.001, s.y - 0.045, 0.015}, Vec3{xf + 0.001, s.y + 0.045, 0.015},
                     Vec3{xf + 0.001, s.y + 0.045, 0.08}, Vec3{xf + 0.001, s.y - 0.045, 0.08}},
                    scene::kShelfDark.scaled(1.4f));
        // book holder fixture: floor plus three walls, open side flips when
        // the holder is reversed
        const Vec3 h = t.holder_pose.xyz;
        canvas.box_top({h.x, h.y, 0.004}, 0.045, 0.045, scene::kHolderColor);
        const double open = t.reversed_holder ? -1.0 : 1.0;
        canvas.line({h.x - 0.045, h.y - open * 0.045, 0.01}, {h.x + 0.045, h.y - open * 0.045, 0.01},
                    0.012, scene::kHolderColor.scaled(0.55f));
        canvas.line({h.x - open * 0.045, h.y - 0.045, 0.01}, {h.x - open * 0.045, h.y + 0.045, 0.01},
                    0.012, scene::kHolderColor.scaled(0.55f));
        canvas.line({h.x + open * 0.045, h.y - 0.045, 0.012},
                    {h.x + open * 0.045, h.y + 0.045, 0.012}, 0.006,
                    scene::kHolderColor.scaled(0.85f));
    }

    for (std::size_t i = 0; i < t.distractors.size(); ++i) {
        const Vec3 pos = i < w.distractor_pos.size() ? w.distractor_pos[i] : t.distractors[i].position;
        draw_object_at(canvas, t.distractors[i].spec, {pos, Quaternion::identity()});
    }
    draw_object_at(canvas, t.object, w.object_pose);
}

} // namespace detail

/// Wrist-camera view: scene rasterized in the flange frame (composed with
/// the fixed mount offset). No robot-specific geometry is drawn; the gripper
/// glyph is the same for every robot, so two robots at the same flange pose
/// with the same mount produce identical pixels.
inline Image render_wrist(const WorldState& w, const TaskSpec& t, const Pose& mount_jitter) {
    Image img;
    const Pose cam_pose = pose_compose(w.ee_pose, mount_jitter);
    const OrthoCamera cam(cam_pose, kWristHalfWidth);
    Canvas canvas(img, cam);
    detail::draw_scene(canvas, w, t);
    // gripper glyph: two finger bars, aperture follows the gripper state
    const double open = 0.030 * (1.0 - 0.8 * w.gripper) + 0.010;
    for (double side : {-1.0, 1.0}) {
        const Vec3 a = cam_pose.transform({0.09, side * open, -0.020});
        const Vec3 b = cam_pose.transform({0.09, side * open, 0.020});
        Canvas(img, cam).line(a, b, 0.012, scene::kGripperColor, false);
    }
    return img;
}

inline Image render_wrist(const WorldState& w, const TaskSpec& t, const RobotModel& robot) {
    return render_wrist(w, t, wrist_mount(robot));
}

/// Exterior view: fixed world-frame camera per robot; draws the arm with
/// robot-specific link colors and widths.
inline Image render_exterior(const WorldState& w, const TaskSpec& t, const RobotModel& robot) {
    Image img;
    const OrthoCamera cam(exterior_camera(robot), kExteriorHalfWidth);
    Canvas canvas(img, cam);
    detail::draw_scene(canvas, w, t);

    Color arm;
    double width;
    switch (robot.robot_id % 3) {
        case 0: arm = {0.16f, 0.16f, 0.20f}; width = 0.030; break;
        case 1: arm = {0.72f, 0.14f, 0.10f}; width = 0.042; break;
        default: arm = {0.86f, 0.86f, 0.92f}; width = 0.050; break;
    }
    const FkFrames f = fk_frames(robot, w.joints);
    canvas.disc(f.base, 0.045, arm.scaled(0.7f));
    canvas.line({f.base.x, f.base.y, 0.0}, f.base, 1.4 * width, arm.scaled(0.8f));
    canvas.line(f.base, f.elbow, width, arm);
    canvas.line(f.elbow, f.wrist, width, arm);
    canvas.line(f.wrist, f.flange.xyz, 0.8 * width, arm.scaled(1.1f));
    // fingers
    const Vec3 fy = f.flange.quat.rotate({0, 1, 0});
    const double open = 0.016 * (1.0 - 0.8 * w.gripper) + 0.004;
    for (double side : {-1.0, 1.0}) {
        const Vec3 root = f.flange.xyz + fy * (side * open);
        canvas.line(root, root + (f.tcp - f.flange.xyz), 0.008, scene::kGripperColor);
    }
    return img;
}

// ---------------------------------------------------------------------------
// Task environment: controller + world dynamics

/// Grasp model: proximity of the grasp point to the object while the
/// gripper closes. No contact physics; released objects settle into the
/// nearest rest zone or onto the table.
class TaskEnv {
public:
    static constexpr int kStepCap = 80;

    TaskEnv(const TaskSpec& task, const RobotModel& robot, const EnvConfig& env,
            ControlMode mode, const Pose& object_start, int background_id,
            std::uint64_t noise_seed)
        : task_(task), env_(env), ctrl_(robot, env, mode, noise_seed) {
        world_.background_id = background_id;
        world_.object_pose = object_start;
        world_.grasped = false;
        for (const auto& d : task_.distractors) world_.distractor_pos.push_back(d.position);
        sync_from_controller();
    }

    const WorldState& world() const { return world_; }
    const TaskSpec& task() const { return task_; }
    const Controller& controller() const { return ctrl_; }
    const RobotModel& robot() const { return ctrl_.model(); }
    int steps() const { return steps_; }
    Vec3 tcp() const { return world_.ee_pose.transform({ctrl_.model().tool_offset, 0, 0}); }

    bool succeeded() const { return success(task_, world_); }

    CommandedStep step(const std::vector<double>& action) {
        const double g_before = world_.gripper;
        const CommandedStep cs = env_step(ctrl_, action, env_);
        sync_from_controller();
        update_grasp(g_before);
        ++steps_;
        return cs;
    }

private:
    void sync_from_controller() {
        world_.ee_pose = ctrl_.get_ee_pose();
        world_.joints = ctrl_.get_joint_positions();
        world_.gripper = ctrl_.get_gripper_state();
        if (world_.grasped) world_.object_pose = pose_compose(world_.ee_pose, grasp_rel_);
    }

    void update_grasp(double g_before) {
        if (!world_.grasped) {
            if (world_.gripper >= 0.55 && world_.gripper > g_before && tcp_near_object()) {
                world_.grasped = true;
                grasp_rel_ = pose_compose(pose_inverse(world_.ee_pose), world_.object_pose);
            }
        } else if (world_.gripper <= 0.45) {
            world_.grasped = false;
            settle_object();
        }
    }

    bool tcp_near_object() const {
        const Vec3 rel = world_.ee_pose.inv_transform(world_.object_pose.xyz);
        const double along = rel.x - ctrl_.model().tool_offset;
        const double trans = std::sqrt(rel.y * rel.y + rel.z * rel.z);
        return std::fabs(along) <= 0.035 && trans <= 0.022;
    }

    void settle_object() {
        const Vec3 p = world_.object_pose.xyz;
        for (const RestZone& z : task_.rest_zones) {
            if (std::fabs(p.x - z.center.x) <= z.hx && std::fabs(p.y - z.center.y) <= z.hy &&
                p.z >= z.center.z - 0.02 && p.z <= z.z_top + 0.08) {
                world_.object_pose.xyz.z = z.center.z + task_.object.rest_z;
                return;
            }
        }
        world_.object_pose.xyz.z = task_.object.rest_z;
    }

    TaskSpec task_;
    EnvConfig env_;
    Controller ctrl_;
    WorldState world_;
    Pose grasp_rel_;
    int steps_ = 0;
};

/// Sample an object start pose inside the task's start region.
inline Pose sample_start(const TaskSpec& t, Rng& rng) {
    const double x = rng.uniform(t.start_region.x_lo, t.start_region.x_hi);
    const double y = rng.uniform(t.start_region.y_lo, t.start_region.y_hi);
    const double yaw = rng.uniform(-0.12, 0.12);
    return {{x, y, t.object.rest_z}, Quaternion::from_axis_angle({0, 0, 1}, yaw)};
}

// ---------------------------------------------------------------------------
// Scripted expert

/// Waypoint feedback controller standing in for a human demonstrator. It
/// watches the grasp point (like a teleoperator watching the tool), so the
/// emitted flange actions already compensate each robot's tool geometry.
class ScriptedExpert {
public:
    ScriptedExpert(const TaskSpec& task, const RobotModel& robot, const EnvConfig& env,
                   std::uint64_t noise_seed, double action_noise = 0.0)
        : task_(task), env_(env), tool_(robot.tool_offset), rng_(noise_seed),
          noise_(action_noise) {}

    bool done() const { return done_; }
    int phase() const { return static_cast<int>(phase_); }

    std::vector<double> act(const WorldState& w) {
        if (success(task_, w) || phase_ == Phase::kDone) {
            done_ = true;
            return std::vector<double>(7, 0.0);
        }
        const Vec3 tcp = w.ee_pose.transform({tool_, 0, 0});
        advance_phase(w, tcp);

        Vec3 tcp_goal = tcp;
        Quaternion q_goal = upright();
        double grip = w.grasped ? 1.0 : -1.0;
        const Vec3 obj = w.object_pose.xyz;

        switch (phase_) {
            case Phase::kApproach:
                tcp_goal = {obj.x, obj.y, obj.z + scene::kHover};
                break;
            case Phase::kDescend:
                tcp_goal = obj;
                break;
            case Phase::kGrasp:
                tcp_goal = obj;
                grip = 1.0;
                break;
            case Phase::kLift:
                tcp_goal = {obj.x, obj.y, task_.object.rest_z + scene::kHover};
                break;
            case Phase::kTraverse:
                tcp_goal = task_.pre_insert_point;
                break;
            case Phase::kRotate:
                tcp_goal = task_.pre_insert_point;
                q_goal = rotated();
                break;
            case Phase::kInsert:
                tcp_goal = task_.insert_point;
                q_goal = task_.requires_rotation ? rotated() : upright();
                break;
            case Phase::kRelease:
                tcp_goal = task_.insert_point;
                q_goal = task_.requires_rotation ? rotated() : upright();
                grip = -1.0;
                break;
            case Phase::kRetreat:
                tcp_goal = {task_.insert_point.x, task_.insert_point.y,
                            task_.insert_point.z + scene::kHover};
                grip = -1.0;
                break;
            case Phase::kDone:
                break;
        }
        return compose_action(w, tcp, tcp_goal, q_goal, grip);
    }

private:
    enum class Phase {
        kApproach, kDescend, kGrasp, kLift, kTraverse, kRotate, kInsert,
        kRelease, kRetreat, kDone
    };

    Quaternion upright() const {
        return Quaternion::from_axis_angle({0, 1, 0}, M_PI / 2.0);
    }
    Quaternion rotated() const {
        return quat_mul(Quaternion::from_axis_angle({0, 1, 0}, task_.rotation_angle), upright());
    }

    void advance_phase(const WorldState& w, const Vec3& tcp) {
        const Vec3 obj = w.object_pose.xyz;
        auto near2 = [](const Vec3& a, const Vec3& b, double tol) {
            const Vec3 d = a - b;
            return d.norm() <= tol;
        };
        switch (phase_) {
            case Phase::kApproach:
                if (near2(tcp, {obj.x, obj.y, obj.z + scene::kHover}, 0.018)) phase_ = Phase::kDescend;
                break;
            case Phase::kDescend:
                if (near2(tcp, obj, 0.012)) phase_ = Phase::kGrasp;
                break;
            case Phase::kGrasp:
                if (w.grasped && w.gripper > 0.6) phase_ = Phase::kLift;
                break;
            case Phase::kLift:
                if (!w.grasped) { phase_ = Phase::kApproach; break; }  // slipped
                if (tcp.z >= task_.object.rest_z + scene::kHover - 0.02) phase_ = Phase::kTraverse;
                break;
            case Phase::kTraverse:
                if (near2(tcp, task_.pre_insert_point, 0.02))
                    phase_ = task_.requires_rotation ? Phase::kRotate : Phase::kInsert;
                break;
            case Phase::kRotate: {
                const Vec3 rv = rotation_vector(
                    quat_mul(rotated(), quat_inv(w.ee_pose.quat)));
                if (rv.norm() < 0.12) phase_ = Phase::kInsert;
                break;
            }
            case Phase::kInsert:
                if (near2(tcp, task_.insert_point, 0.014)) phase_ = Phase::kRelease;
                break;
            case Phase::kRelease:
                if (!w.grasped) phase_ = Phase::kRetreat;
                break;
            case Phase::kRetreat:
                if (tcp.z >= task_.insert_point.z + scene::kHover - 0.03) phase_ = Phase::kDone;
                break;
            default: break;
        }
    }

    std::vector<double> compose_action(const WorldState& w, const Vec3& /*tcp*/,
                                       const Vec3& tcp_goal, const Quaternion& q_goal,
                                       double grip) {
        // flange target from the tcp goal under the current orientation
        const Vec3 flange_goal = tcp_goal - w.ee_pose.quat.rotate({tool_, 0, 0});
        const double ls = env_.max_lin_vel / env_.hz;
        const double rs = env_.max_rot_vel / env_.hz;
        const Vec3 dp = flange_goal - w.ee_pose.xyz;
        // body-frame rotation delta matching how env_step composes angles
        const Vec3 rv = rotation_vector(quat_mul(quat_inv(w.ee_pose.quat), q_goal));

        std::vector<double> a(7, 0.0);
        a[0] = dp.x / ls; a[1] = dp.y / ls; a[2] = dp.z / ls;
        a[3] = rv.x / rs; a[4] = rv.y / rs; a[5] = rv.z / rs;
        for (int i = 0; i < 6; ++i) {
            if (noise_ > 0.0) a[i] += rng_.uniform(-noise_, noise_);
            a[i] = std::clamp(a[i], -0.95, 0.95);
        }
        a[6] = grip;
        return a;
    }

    TaskSpec task_;
    EnvConfig env_;
    double tool_;
    Rng rng_;
    double noise_;
    Phase phase_ = Phase::kApproach;
    bool done_ = false;
};

} // namespace polybot
