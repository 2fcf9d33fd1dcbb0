#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "polybot/binio.hpp"
#include "polybot/tasks.hpp"

namespace polybot {

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

using DatasetError = FormatError;

enum class Provenance : std::uint8_t { kShared = 0, kTargetSource = 1, kTargetFewshot = 2 };

/// One trajectory step. Numeric fields are stored as 32-bit floats so a
/// record is bit-identical through a save/load round trip; accessors expose
/// the usual double-precision types.
struct Step {
    std::array<float, 7> pose_q{};    // x y z qw qx qy qz
    std::array<float, 7> action{};
    std::array<float, 7> commanded{}; // dx dy dz qw qx qy qz
    int obs_ref = 0;
    bool fixed = false;
    bool grasped = false;

    Pose pose() const {
        return {{pose_q[0], pose_q[1], pose_q[2]},
                Quaternion(pose_q[3], pose_q[4], pose_q[5], pose_q[6])};
    }
    DeltaPose commanded_delta() const {
        return {{commanded[0], commanded[1], commanded[2]},
                Quaternion(commanded[3], commanded[4], commanded[5], commanded[6])};
    }
    void set_pose(const Pose& p) {
        pose_q = {static_cast<float>(p.xyz.x), static_cast<float>(p.xyz.y),
                  static_cast<float>(p.xyz.z), static_cast<float>(p.quat.w),
                  static_cast<float>(p.quat.x), static_cast<float>(p.quat.y),
                  static_cast<float>(p.quat.z)};
    }
    void set_commanded(const DeltaPose& d) {
        commanded = {static_cast<float>(d.d_xyz.x), static_cast<float>(d.d_xyz.y),
                     static_cast<float>(d.d_xyz.z), static_cast<float>(d.d_quat.w),
                     static_cast<float>(d.d_quat.x), static_cast<float>(d.d_quat.y),
                     static_cast<float>(d.d_quat.z)};
    }
    bool operator==(const Step&) const = default;
};

struct TrajectoryRecord {
    int robot_id = 0;
    int task_id = 0;
    int background_id = 0;
    std::uint64_t seed = 0;
    bool success = false;
    Provenance provenance = Provenance::kShared;
    bool fixed_usable = false;
    std::vector<Step> steps;
    std::vector<int> fixed_indices;
    std::vector<Image> wrist;
    std::vector<Image> exterior;

    bool operator==(const TrajectoryRecord&) const = default;
};

/// Marks the grasp-completion step (first step whose state is grasped) and
/// the final release step as fixed states. A trajectory without a grasp
/// event gets an empty fixed set and is flagged unusable for contrastive
/// sampling.
inline void annotate_fixed_states(TrajectoryRecord& r) {
    r.fixed_indices.clear();
    for (auto& s : r.steps) s.fixed = false;
    int first_grasp = -1;
    for (std::size_t i = 0; i < r.steps.size(); ++i) {
        if (r.steps[i].grasped) {
            first_grasp = static_cast<int>(i);
            break;
        }
    }
    if (first_grasp < 0) {
        r.fixed_usable = false;
        return;
    }
    int release = -1;
    for (std::size_t i = r.steps.size(); i-- > 1;) {
        if (r.steps[i - 1].grasped && !r.steps[i].grasped) {
            release = static_cast<int>(i);
            break;
        }
    }
    r.fixed_indices.push_back(first_grasp);
    if (release > first_grasp) r.fixed_indices.push_back(release);
    for (int i : r.fixed_indices) r.steps[static_cast<std::size_t>(i)].fixed = true;
    r.fixed_usable = true;
}

struct FixedDiff {
    Vec3 d_xyz;
    Quaternion d_quat;
};

/// Difference to the closest fixed state at or after step i:
///   d_xyz = p_i - p_tf,   d_quat = q_tf * q_i^-1.
/// Empty when no fixed state follows i; such states are excluded from
/// contrastive sampling.
inline std::optional<FixedDiff> closest_fixed_diff(const TrajectoryRecord& r, int i) {
    int tf = -1;
    for (int f : r.fixed_indices) {
        if (f >= i) {
            tf = f;
            break;
        }
    }
    if (tf < 0) return std::nullopt;
    const Pose pi = r.steps[static_cast<std::size_t>(i)].pose();
    const Pose pf = r.steps[static_cast<std::size_t>(tf)].pose();
    return FixedDiff{pi.xyz - pf.xyz, quat_mul(pf.quat, quat_inv(pi.quat))};
}

struct RelabelResult {
    TrajectoryRecord record;
    int saturated = 0;  // action components that had to be clipped
};

/// Subsample the trajectory with stride n and relabel actions as the
/// achieved pose deltas, renormalized by the per-step velocity scales and
/// clipped to [-1, 1]. commanded fields keep the raw (unclipped) deltas.
inline RelabelResult relabel_blocking(const TrajectoryRecord& r, int n, const EnvConfig& env) {
    if (n < 1) throw std::invalid_argument("stride must be >= 1");
    RelabelResult out;
    out.record = r;
    out.record.steps.clear();
    out.record.wrist.clear();
    out.record.exterior.clear();
    out.record.fixed_indices.clear();

    const double ls = env.max_lin_vel / env.hz;
    const double rs = env.max_rot_vel / env.hz;
    const int T = static_cast<int>(r.steps.size());
    for (int k = 0; (k + 1) * n <= T - 1; ++k) {
        const int i0 = k * n, i1 = (k + 1) * n;
        const Pose p0 = r.steps[static_cast<std::size_t>(i0)].pose();
        const Pose p1 = r.steps[static_cast<std::size_t>(i1)].pose();
        const DeltaPose d = pose_delta(p0, p1);

        Step s = r.steps[static_cast<std::size_t>(i0)];
        s.set_commanded(d);
        // actions replay through the env step, whose rotation is composed in
        // the body frame
        const Vec3 rv = rotation_vector(quat_mul(quat_inv(p0.quat), p1.quat));
        const double raw[6] = {d.d_xyz.x / ls, d.d_xyz.y / ls, d.d_xyz.z / ls,
                               rv.x / rs,      rv.y / rs,      rv.z / rs};
        for (int c = 0; c < 6; ++c) {
            double v = raw[c];
            if (v > 1.0 || v < -1.0) {
                ++out.saturated;
                v = std::clamp(v, -1.0, 1.0);
            }
            s.action[static_cast<std::size_t>(c)] = static_cast<float>(v);
        }
        const bool closing = r.steps[static_cast<std::size_t>(i1)].grasped ||
                             r.steps[static_cast<std::size_t>(i1)].action[6] > 0.0f;
        s.action[6] = closing ? 1.0f : -1.0f;
        s.obs_ref = static_cast<int>(out.record.steps.size());
        out.record.steps.push_back(s);
        out.record.wrist.push_back(r.wrist[static_cast<std::size_t>(i0)]);
        out.record.exterior.push_back(r.exterior[static_cast<std::size_t>(i0)]);
    }
    annotate_fixed_states(out.record);
    return out;
}

// ---------------------------------------------------------------------------
// Shared multi-robot buffer

class SharedBuffer {
public:
    void add(TrajectoryRecord r) {
        const int idx = static_cast<int>(records_.size());
        index_[{r.robot_id, r.task_id}].push_back(idx);
        counts_[std::make_tuple(r.robot_id, r.task_id, r.background_id)] += 1;
        records_.push_back(std::move(r));
    }

    const std::vector<TrajectoryRecord>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }

    /// Record indices for (robot, task); -1 acts as a wildcard.
    std::vector<int> find(int robot_id, int task_id) const {
        std::vector<int> out;
        for (const auto& [key, idxs] : index_) {
            if ((robot_id < 0 || key.first == robot_id) && (task_id < 0 || key.second == task_id))
                out.insert(out.end(), idxs.begin(), idxs.end());
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    int count(int robot_id, int task_id, int background_id) const {
        int n = 0;
        for (const auto& [key, c] : counts_) {
            const auto& [r, t, b] = key;
            if ((robot_id < 0 || r == robot_id) && (task_id < 0 || t == task_id) &&
                (background_id < 0 || b == background_id))
                n += c;
        }
        return n;
    }

    bool operator==(const SharedBuffer& o) const { return records_ == o.records_; }

private:
    std::vector<TrajectoryRecord> records_;
    std::map<std::pair<int, int>, std::vector<int>> index_;
    std::map<std::tuple<int, int, int>, int> counts_;
};

// ---------------------------------------------------------------------------
// On-disk format: manifest.json + records.bin

namespace detail {

using io::ByteReader;
using io::ByteWriter;
using io::crc32;

inline constexpr std::uint32_t kRecordMagic = 0x50425243;  // "PBRC"

inline void write_image_f32(ByteWriter& w, const Image& img) {
    for (std::uint8_t p : img.px) w.f32(static_cast<float>(p) / 255.0f);
}

inline Image read_image_f32(ByteReader& r) {
    Image img;
    for (auto& p : img.px) {
        const float v = std::clamp(r.f32(), 0.0f, 1.0f);
        p = static_cast<std::uint8_t>(v * 255.0f + 0.5f);
    }
    return img;
}

inline std::vector<std::uint8_t> encode_record(const TrajectoryRecord& r) {
    ByteWriter w;
    w.u32(kRecordMagic);
    w.u32(static_cast<std::uint32_t>(r.steps.size()));
    w.u32(Image::kW);
    w.u32(Image::kH);
    w.u32(Image::kC);
    w.i32(r.robot_id);
    w.i32(r.task_id);
    w.i32(r.background_id);
    w.u8(r.success ? 1 : 0);
    w.u8(static_cast<std::uint8_t>(r.provenance));
    w.u8(r.fixed_usable ? 1 : 0);
    w.u8(0);
    w.u64(r.seed);
    for (const Step& s : r.steps) {
        for (float v : s.pose_q) w.f32(v);
        for (float v : s.action) w.f32(v);
        for (float v : s.commanded) w.f32(v);
        w.i32(s.obs_ref);
        w.u8(s.fixed ? 1 : 0);
        w.u8(s.grasped ? 1 : 0);
    }
    for (const Image& img : r.wrist) write_image_f32(w, img);
    for (const Image& img : r.exterior) write_image_f32(w, img);
    return w.buf;
}

inline TrajectoryRecord decode_record(const std::uint8_t* data, std::size_t len) {
    ByteReader rd{data, len};
    if (rd.u32() != kRecordMagic) throw DatasetError("bad record magic");
    const std::uint32_t n = rd.u32();
    if (rd.u32() != Image::kW || rd.u32() != Image::kH || rd.u32() != Image::kC)
        throw DatasetError("unexpected image geometry");
    TrajectoryRecord r;
    r.robot_id = rd.i32();
    r.task_id = rd.i32();
    r.background_id = rd.i32();
    r.success = rd.u8() != 0;
    r.provenance = static_cast<Provenance>(rd.u8());
    r.fixed_usable = rd.u8() != 0;
    rd.u8();
    r.seed = rd.u64();
    r.steps.resize(n);
    for (Step& s : r.steps) {
        for (float& v : s.pose_q) v = rd.f32();
        for (float& v : s.action) v = rd.f32();
        for (float& v : s.commanded) v = rd.f32();
        s.obs_ref = rd.i32();
        s.fixed = rd.u8() != 0;
        s.grasped = rd.u8() != 0;
        if (s.fixed) r.fixed_indices.push_back(static_cast<int>(&s - r.steps.data()));
    }
    r.wrist.reserve(n);
    r.exterior.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) r.wrist.push_back(read_image_f32(rd));
    for (std::uint32_t i = 0; i < n; ++i) r.exterior.push_back(read_image_f32(rd));
    return r;
}

// TaskSpec <-> JSON, enough to rebuild a suite exactly
inline nlohmann::json task_to_json(const TaskSpec& t) {
    nlohmann::json j;
    j["task_id"] = t.task_id;
    j["name"] = t.name;
    j["scenario"] = t.scenario;
    j["kind"] = t.kind == TaskKind::kPickPlace ? "pick_place" : "shelf";
    j["object"] = {{"shape", static_cast<int>(t.object.shape)},
                   {"color", {t.object.color.r, t.object.color.g, t.object.color.b}},
                   {"radius", t.object.radius},
                   {"half_length", t.object.half_length},
                   {"half_width", t.object.half_width},
                   {"rest_z", t.object.rest_z}};
    j["container"] = {t.container_pose.xyz.x, t.container_pose.xyz.y, t.container_pose.xyz.z};
    j["holder"] = {t.holder_pose.xyz.x, t.holder_pose.xyz.y, t.holder_pose.xyz.z};
    j["reversed_holder"] = t.reversed_holder;
    j["requires_rotation"] = t.requires_rotation;
    j["rotation_angle"] = t.rotation_angle;
    j["start_region"] = {t.start_region.x_lo, t.start_region.x_hi, t.start_region.y_lo,
                         t.start_region.y_hi};
    j["n_backgrounds"] = t.n_backgrounds;
    j["goal"] = {{"center", {t.goal.center.x, t.goal.center.y, t.goal.center.z}},
                 {"hx", t.goal.hx},
                 {"hy", t.goal.hy},
                 {"z_lo", t.goal.z_lo},
                 {"z_hi", t.goal.z_hi}};
    nlohmann::json zones = nlohmann::json::array();
    for (const auto& z : t.rest_zones)
        zones.push_back({{"center", {z.center.x, z.center.y, z.center.z}},
                         {"hx", z.hx},
                         {"hy", z.hy},
                         {"z_top", z.z_top}});
    j["rest_zones"] = zones;
    j["rot_tol"] = t.rot_tol;
    j["insert_point"] = {t.insert_point.x, t.insert_point.y, t.insert_point.z};
    j["pre_insert_point"] = {t.pre_insert_point.x, t.pre_insert_point.y, t.pre_insert_point.z};
    nlohmann::json ds = nlohmann::json::array();
    for (const auto& d : t.distractors)
        ds.push_back({{"shape", static_cast<int>(d.spec.shape)},
                      {"color", {d.spec.color.r, d.spec.color.g, d.spec.color.b}},
                      {"radius", d.spec.radius},
                      {"half_length", d.spec.half_length},
                      {"half_width", d.spec.half_width},
                      {"rest_z", d.spec.rest_z},
                      {"position", {d.position.x, d.position.y, d.position.z}}});
    j["distractors"] = ds;
    return j;
}

inline TaskSpec task_from_json(const nlohmann::json& j) {
    TaskSpec t;
    t.task_id = j.at("task_id").get<int>();
    t.name = j.at("name").get<std::string>();
    t.scenario = j.at("scenario").get<std::string>();
    t.kind = j.at("kind").get<std::string>() == "shelf" ? TaskKind::kShelf : TaskKind::kPickPlace;
    const auto& o = j.at("object");
    t.object.shape = static_cast<ObjectShape>(o.at("shape").get<int>());
    t.object.color = {o.at("color")[0].get<float>(), o.at("color")[1].get<float>(),
                      o.at("color")[2].get<float>()};
    t.object.radius = o.at("radius").get<double>();
    t.object.half_length = o.at("half_length").get<double>();
    t.object.half_width = o.at("half_width").get<double>();
    t.object.rest_z = o.at("rest_z").get<double>();
    t.container_pose = {{j.at("container")[0].get<double>(), j.at("container")[1].get<double>(),
                         j.at("container")[2].get<double>()},
                        Quaternion::identity()};
    t.holder_pose = {{j.at("holder")[0].get<double>(), j.at("holder")[1].get<double>(),
                      j.at("holder")[2].get<double>()},
                     Quaternion::identity()};
    t.reversed_holder = j.at("reversed_holder").get<bool>();
    t.requires_rotation = j.at("requires_rotation").get<bool>();
    t.rotation_angle = j.at("rotation_angle").get<double>();
    t.start_region = {j.at("start_region")[0].get<double>(), j.at("start_region")[1].get<double>(),
                      j.at("start_region")[2].get<double>(), j.at("start_region")[3].get<double>()};
    t.n_backgrounds = j.at("n_backgrounds").get<int>();
    const auto& g = j.at("goal");
    t.goal = {{g.at("center")[0].get<double>(), g.at("center")[1].get<double>(),
               g.at("center")[2].get<double>()},
              g.at("hx").get<double>(),
              g.at("hy").get<double>(),
              g.at("z_lo").get<double>(),
              g.at("z_hi").get<double>()};
    for (const auto& z : j.at("rest_zones"))
        t.rest_zones.push_back({{z.at("center")[0].get<double>(), z.at("center")[1].get<double>(),
                                 z.at("center")[2].get<double>()},
                                z.at("hx").get<double>(),
                                z.at("hy").get<double>(),
                                z.at("z_top").get<double>()});
    t.rot_tol = j.at("rot_tol").get<double>();
    t.insert_point = {j.at("insert_point")[0].get<double>(), j.at("insert_point")[1].get<double>(),
                      j.at("insert_point")[2].get<double>()};
    t.pre_insert_point = {j.at("pre_insert_point")[0].get<double>(),
                          j.at("pre_insert_point")[1].get<double>(),
                          j.at("pre_insert_point")[2].get<double>()};
    for (const auto& d : j.at("distractors")) {
        Distractor dd;
        dd.spec.shape = static_cast<ObjectShape>(d.at("shape").get<int>());
        dd.spec.color = {d.at("color")[0].get<float>(), d.at("color")[1].get<float>(),
                         d.at("color")[2].get<float>()};
        dd.spec.radius = d.at("radius").get<double>();
        dd.spec.half_length = d.at("half_length").get<double>();
        dd.spec.half_width = d.at("half_width").get<double>();
        dd.spec.rest_z = d.at("rest_z").get<double>();
        dd.position = {d.at("position")[0].get<double>(), d.at("position")[1].get<double>(),
                       d.at("position")[2].get<double>()};
        t.distractors.push_back(dd);
    }
    return t;
}

} // namespace detail

inline nlohmann::json suite_to_json(const TaskSuite& suite) {
    nlohmann::json j;
    j["shared"] = nlohmann::json::array();
    j["targets"] = nlohmann::json::array();
    for (const auto& t : suite.shared) j["shared"].push_back(detail::task_to_json(t));
    for (const auto& t : suite.targets) j["targets"].push_back(detail::task_to_json(t));
    return j;
}

inline TaskSuite suite_from_json(const nlohmann::json& j) {
    TaskSuite suite;
    for (const auto& t : j.at("shared")) suite.shared.push_back(detail::task_from_json(t));
    for (const auto& t : j.at("targets")) suite.targets.push_back(detail::task_from_json(t));
    return suite;
}

/// Write manifest.json + records.bin into dir. Byte-stable: identical
/// buffers and metadata produce identical files; the manifest carries the
/// generation seed rather than any timestamp.
inline void save_buffer(const SharedBuffer& buffer, const std::filesystem::path& dir,
                        const TaskSuite& suite, std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["format_version"] = kDatasetFormatVersion;
    manifest["seed"] = seed;
    manifest["suite"] = suite_to_json(suite);

    std::vector<std::uint8_t> blob;
    nlohmann::json recs = nlohmann::json::array();
    std::map<std::string, int> counts;
    for (const TrajectoryRecord& r : buffer.records()) {
        const std::vector<std::uint8_t> block = detail::encode_record(r);
        nlohmann::json jr;
        jr["offset"] = blob.size();
        jr["length"] = block.size();
        jr["crc32"] = detail::crc32(block.data(), block.size());
        jr["robot_id"] = r.robot_id;
        jr["task_id"] = r.task_id;
        jr["background_id"] = r.background_id;
        jr["steps"] = r.steps.size();
        jr["success"] = r.success;
        jr["provenance"] = static_cast<int>(r.provenance);
        recs.push_back(jr);
        blob.insert(blob.end(), block.begin(), block.end());
        counts["r" + std::to_string(r.robot_id) + "_t" + std::to_string(r.task_id) + "_b" +
               std::to_string(r.background_id)] += 1;
    }
    manifest["records"] = recs;
    manifest["counts"] = counts;
    manifest["n_records"] = buffer.size();

    std::ofstream mf(dir / "manifest.json", std::ios::binary | std::ios::trunc);
    mf << manifest.dump(2) << "\n";
    std::ofstream bf(dir / "records.bin", std::ios::binary | std::ios::trunc);
    bf.write(reinterpret_cast<const char*>(blob.data()),
             static_cast<std::streamsize>(blob.size()));
}

struct LoadedBuffer {
    SharedBuffer buffer;
    TaskSuite suite;
    std::uint64_t seed = 0;
};

inline LoadedBuffer load_buffer(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json", std::ios::binary);
    if (!mf) throw DatasetError("missing manifest: " + (dir / "manifest.json").string());
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw DatasetError(std::string("malformed manifest: ") + e.what());
    }
    const auto version = manifest.at("format_version").get<std::uint32_t>();
    if (version != kDatasetFormatVersion)
        throw VersionMismatchError("dataset format version " + std::to_string(version) +
                                   ", expected " + std::to_string(kDatasetFormatVersion));

    std::ifstream bf(dir / "records.bin", std::ios::binary);
    if (!bf) throw DatasetError("missing records.bin");
    std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(bf)),
                                   std::istreambuf_iterator<char>());

    LoadedBuffer out;
    out.seed = manifest.at("seed").get<std::uint64_t>();
    out.suite = suite_from_json(manifest.at("suite"));
    for (const auto& jr : manifest.at("records")) {
        const std::size_t off = jr.at("offset").get<std::size_t>();
        const std::size_t len = jr.at("length").get<std::size_t>();
        if (off + len > blob.size()) throw TruncatedError("records.bin shorter than manifest");
        if (detail::crc32(blob.data() + off, len) != jr.at("crc32").get<std::uint32_t>())
            throw ChecksumError("record checksum mismatch at offset " + std::to_string(off));
        out.buffer.add(detail::decode_record(blob.data() + off, len));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Demonstration collection and experiment buffers

struct CollectParams {
    double action_noise = 0.05;
    int max_retries = 4;
    bool keep_failures = false;
};

/// Run the scripted expert once and record the trajectory.
inline TrajectoryRecord collect_demo(const TaskSpec& task, const RobotModel& robot,
                                     const EnvConfig& env, int background_id,
                                     std::uint64_t seed, double action_noise) {
    Rng rng(seed);
    const Pose start = sample_start(task, rng);
    TaskEnv te(task, robot, env, ControlMode::kNonBlocking, start, background_id, mix64(seed));
    ScriptedExpert expert(task, robot, env, mix64(seed ^ 0xE599u), action_noise);

    TrajectoryRecord r;
    r.robot_id = robot.robot_id;
    r.task_id = task.task_id;
    r.background_id = background_id;
    r.seed = seed;
    while (te.steps() < TaskEnv::kStepCap && !expert.done()) {
        const WorldState& w = te.world();
        const std::vector<double> a = expert.act(w);
        if (expert.done()) break;
        Step s;
        s.set_pose(w.ee_pose);
        for (int i = 0; i < 7; ++i) s.action[static_cast<std::size_t>(i)] = static_cast<float>(a[static_cast<std::size_t>(i)]);
        s.grasped = w.grasped;
        s.obs_ref = static_cast<int>(r.steps.size());
        r.wrist.push_back(render_wrist(w, task, robot));
        r.exterior.push_back(render_exterior(w, task, robot));
        const CommandedStep cs = te.step(a);
        s.set_commanded(cs.commanded);
        r.steps.push_back(s);
    }
    // terminal state with a hold action, so the post-release state is part
    // of the record
    {
        const WorldState& w = te.world();
        Step s;
        s.set_pose(w.ee_pose);
        s.set_commanded(DeltaPose{{0, 0, 0}, Quaternion::identity()});
        s.action[6] = w.grasped ? 1.0f : -1.0f;
        s.grasped = w.grasped;
        s.obs_ref = static_cast<int>(r.steps.size());
        r.wrist.push_back(render_wrist(w, task, robot));
        r.exterior.push_back(render_exterior(w, task, robot));
        r.steps.push_back(s);
    }
    r.success = te.succeeded();
    annotate_fixed_states(r);
    return r;
}

/// Retry wrapper: demonstrations are kept only when they succeed, the way
/// teleoperated demo collection discards botched attempts.
inline TrajectoryRecord collect_successful_demo(const TaskSpec& task, const RobotModel& robot,
                                                const EnvConfig& env, int background_id,
                                                std::uint64_t seed, const CollectParams& p) {
    TrajectoryRecord r;
    for (int attempt = 0; attempt <= p.max_retries; ++attempt) {
        r = collect_demo(task, robot, env, background_id, mix64(seed + 7919u * static_cast<std::uint64_t>(attempt)),
                         p.action_noise);
        if (r.success && !r.steps.empty()) return r;
    }
    if (!p.keep_failures)
        throw std::runtime_error("expert failed repeatedly on task " + task.name + " robot " +
                                 std::to_string(robot.robot_id));
    return r;
}

struct ExperimentBuffers {
    SharedBuffer shared;          // shared tasks x all robots x backgrounds
    SharedBuffer target_source;   // target task on the source robots
    SharedBuffer target_fewshot;  // k demos on the held-out robot
};

/// Shared buffer over shared tasks x robots x backgrounds, a target-task
/// buffer on the source robots, and an optional k-demo buffer on the
/// held-out robot (k = 0 gives the zero-shot configuration).
inline ExperimentBuffers build_experiment_buffers(const TaskSuite& suite,
                                                  const std::vector<RobotModel>& robots,
                                                  int demos_per_cell, int fewshot_k,
                                                  const std::string& target_scenario,
                                                  int heldout_robot_id, const EnvConfig& env,
                                                  std::uint64_t seed,
                                                  const CollectParams& params = {}) {
    ExperimentBuffers out;
    for (const TaskSpec& task : suite.shared) {
        for (const RobotModel& robot : robots) {
            for (int bg = 0; bg < task.n_backgrounds; ++bg) {
                for (int d = 0; d < demos_per_cell; ++d) {
                    const std::uint64_t s =
                        mix64(seed ^ mix64(static_cast<std::uint64_t>(task.task_id) << 40 |
                                           static_cast<std::uint64_t>(robot.robot_id) << 28 |
                                           static_cast<std::uint64_t>(bg) << 16 |
                                           static_cast<std::uint64_t>(d)));
                    TrajectoryRecord r = collect_successful_demo(task, robot, env, bg, s, params);
                    r.provenance = Provenance::kShared;
                    out.shared.add(std::move(r));
                }
            }
        }
    }
    if (!target_scenario.empty()) {
        const TaskSpec& target = suite.by_scenario(target_scenario);
        for (const RobotModel& robot : robots) {
            const bool heldout = robot.robot_id == heldout_robot_id;
            const int n = heldout ? fewshot_k : demos_per_cell;
            for (int d = 0; d < n; ++d) {
                const std::uint64_t s =
                    mix64(seed ^ 0xFACEu ^ mix64(static_cast<std::uint64_t>(target.task_id) << 40 |
                                                 static_cast<std::uint64_t>(robot.robot_id) << 28 |
                                                 static_cast<std::uint64_t>(d)));
                TrajectoryRecord r = collect_successful_demo(target, robot, env, 0, s, params);
                r.provenance = heldout ? Provenance::kTargetFewshot : Provenance::kTargetSource;
                if (heldout)
                    out.target_fewshot.add(std::move(r));
                else
                    out.target_source.add(std::move(r));
            }
        }
    }
    return out;
}

} // namespace polybot
