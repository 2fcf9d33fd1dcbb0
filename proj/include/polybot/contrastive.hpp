#pragma once

#include "polybot/policy.hpp"

namespace polybot {

/// Thresholds are on distances between closest-fixed-state differences:
/// eps_xyz bounds the squared translation distance, eps_quat the quaternion
/// geodesic distance.
struct ContrastiveConfig {
    double eps_xyz = 0.03 * 0.03;  // squared meters
    double eps_quat = 0.2;         // radians
    double margin = 0.5;
    int batch_size = 64;
    double learning_rate = 1e-4;
    int updates_per_epoch = 1000;
    int epochs = 1;
    int rejection_cap = 100;
    bool augment_enabled = true;
    AugmentConfig aug;
    std::uint64_t seed = 0;

    void check() const {
        if (eps_xyz <= 0.0 || eps_quat <= 0.0 || margin <= 0.0)
            throw std::invalid_argument("contrastive thresholds and margin must be positive");
    }
};

/// A state eligible for contrastive sampling: it has a fixed state at or
/// after it, and its difference to that state is cached.
struct EligibleState {
    const TrajectoryRecord* rec = nullptr;
    int step = 0;
    Vec3 d_xyz;
    Quaternion d_quat;
};

inline bool fixed_diff_close(const EligibleState& a, const EligibleState& b,
                             const ContrastiveConfig& cfg) {
    const Vec3 d = a.d_xyz - b.d_xyz;
    return d.dot(d) < cfg.eps_xyz && geodesic_dist(a.d_quat, b.d_quat) < cfg.eps_quat;
}

/// Eligible states grouped by task; pairing across tasks is not allowed,
/// pairing across robots and trajectories within a task is the point.
class MiningPool {
public:
    explicit MiningPool(const std::vector<const SharedBuffer*>& buffers) {
        for (const SharedBuffer* buf : buffers) {
            for (const TrajectoryRecord& rec : buf->records()) {
                if (!rec.fixed_usable) {
                    ++unusable_records_;
                    continue;
                }
                auto& pool = by_task_[rec.task_id];
                for (int i = 0; i < static_cast<int>(rec.steps.size()); ++i) {
                    const auto d = closest_fixed_diff(rec, i);
                    if (!d) continue;  // states after the last fixed state are excluded
                    pool.push_back({&rec, i, d->d_xyz, d->d_quat});
                }
            }
        }
        for (const auto& [task, pool] : by_task_) total_ += pool.size();
    }

    const std::map<int, std::vector<EligibleState>>& by_task() const { return by_task_; }
    std::size_t total() const { return total_; }
    int unusable_records() const { return unusable_records_; }

    const std::vector<EligibleState>& task_pool(int task_id) const {
        return by_task_.at(task_id);
    }

private:
    std::map<int, std::vector<EligibleState>> by_task_;
    std::size_t total_ = 0;
    int unusable_records_ = 0;
};

/// All pool states within both thresholds of the anchor. The anchor itself
/// always qualifies.
inline std::vector<int> positive_set(const std::vector<EligibleState>& pool, int anchor,
                                     const ContrastiveConfig& cfg) {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(pool.size()); ++i)
        if (fixed_diff_close(pool[static_cast<std::size_t>(anchor)],
                             pool[static_cast<std::size_t>(i)], cfg))
            out.push_back(i);
    return out;
}

/// Complement of the positive set: at least one threshold exceeded.
inline std::vector<int> negative_set(const std::vector<EligibleState>& pool, int anchor,
                                     const ContrastiveConfig& cfg) {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(pool.size()); ++i)
        if (!fixed_diff_close(pool[static_cast<std::size_t>(anchor)],
                              pool[static_cast<std::size_t>(i)], cfg))
            out.push_back(i);
    return out;
}

/// Margin triplet loss on embeddings: max(0, m + |za-zp|^2 - |za-zn|^2).
/// Gradients are written (not accumulated) when pointers are given; they
/// are identically zero in the inactive region.
template <typename T>
inline T triplet_loss(const T* za, const T* zp, const T* zn, int dim, T margin, T* dza = nullptr,
                      T* dzp = nullptr, T* dzn = nullptr) {
    T dap = 0, dan = 0;
    for (int i = 0; i < dim; ++i) {
        const T ep = za[i] - zp[i];
        const T en = za[i] - zn[i];
        dap += ep * ep;
        dan += en * en;
    }
    const T raw = margin + dap - dan;
    const bool active = raw > T(0);
    if (dza)
        for (int i = 0; i < dim; ++i) dza[i] = active ? T(2) * (zn[i] - zp[i]) : T(0);
    if (dzp)
        for (int i = 0; i < dim; ++i) dzp[i] = active ? T(-2) * (za[i] - zp[i]) : T(0);
    if (dzn)
        for (int i = 0; i < dim; ++i) dzn[i] = active ? T(2) * (za[i] - zn[i]) : T(0);
    return active ? raw : T(0);
}

struct Triplet {
    const EligibleState* anchor;
    const EligibleState* positive;
    const EligibleState* negative;
};

struct MiningStats {
    int resampled_anchors = 0;
    int dropped_anchors = 0;  // anchors with a permanently empty side
};

namespace detail {

struct FlatAnchor {
    int task_id;
    int index;  // into the task pool
};

inline std::vector<FlatAnchor> flatten(const MiningPool& pool) {
    std::vector<FlatAnchor> flat;
    for (const auto& [task, states] : pool.by_task())
        for (int i = 0; i < static_cast<int>(states.size()); ++i) flat.push_back({task, i});
    return flat;
}

} // namespace detail

/// Uniform anchors over eligible states; positives/negatives uniform over
/// their sets. Anchors whose positive or negative set is empty are rejected
/// and resampled up to cfg.rejection_cap times per slot.
inline std::vector<Triplet> sample_triplet_batch(const MiningPool& pool,
                                                 const ContrastiveConfig& cfg, Rng& rng,
                                                 MiningStats* stats = nullptr) {
    const std::vector<detail::FlatAnchor> flat = detail::flatten(pool);
    if (flat.empty()) throw std::invalid_argument("sample_triplet_batch: empty pool");
    std::vector<Triplet> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int slot = 0; slot < cfg.batch_size; ++slot) {
        bool filled = false;
        for (int attempt = 0; attempt < cfg.rejection_cap; ++attempt) {
            const auto& fa = flat[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<int>(flat.size()) - 1))];
            const auto& tp = pool.task_pool(fa.task_id);
            const std::vector<int> pos = positive_set(tp, fa.index, cfg);
            const std::vector<int> neg = negative_set(tp, fa.index, cfg);
            if (pos.empty() || neg.empty()) {
                if (stats) {
                    ++stats->resampled_anchors;
                    if (pos.empty()) ++stats->dropped_anchors;
                }
                continue;
            }
            const int pi = pos[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<int>(pos.size()) - 1))];
            const int ni = neg[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<int>(neg.size()) - 1))];
            batch.push_back({&tp[static_cast<std::size_t>(fa.index)],
                             &tp[static_cast<std::size_t>(pi)],
                             &tp[static_cast<std::size_t>(ni)]});
            filled = true;
            break;
        }
        if (!filled)
            throw std::runtime_error("sample_triplet_batch: rejection cap exhausted; "
                                     "thresholds leave no usable anchors");
    }
    return batch;
}

struct PretrainResult {
    std::vector<double> epoch_mean_loss;
    MiningStats mining;
};

/// Contrastive pretraining of the shared encoder with the triplet loss.
/// Deterministic under cfg.seed; aborts on a non-finite loss.
inline PretrainResult pretrain(Encoder<float>& encoder, const std::vector<const SharedBuffer*>& buffers,
                               const ContrastiveConfig& cfg) {
    cfg.check();
    const MiningPool pool(buffers);
    if (pool.total() == 0) throw std::invalid_argument("pretrain: no eligible states");

    Rng rng(mix64(cfg.seed ^ 0xC047u));
    Rng aug_rng(mix64(cfg.seed ^ 0xA461u));

    const int B = cfg.batch_size;
    const int zd = encoder.z_dim();
    const int in_size = encoder.input_size();
    auto ws = encoder.make_ws(3 * B);

    nn::Adam<float> opt(encoder.params(), cfg.learning_rate);
    std::vector<float> input(static_cast<std::size_t>(3 * B) * in_size);
    std::vector<float> dz(static_cast<std::size_t>(3 * B) * zd);

    PretrainResult result;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (int u = 0; u < cfg.updates_per_epoch; ++u) {
            const std::vector<Triplet> batch = sample_triplet_batch(pool, cfg, rng, &result.mining);
            auto put = [&](int row, const EligibleState& s) {
                const Image& raw =
                    s.rec->wrist[static_cast<std::size_t>(s.rec->steps[static_cast<std::size_t>(s.step)].obs_ref)];
                const Image img = cfg.augment_enabled ? augment(raw, aug_rng, cfg.aug) : raw;
                image_to_chw(img, input.data() + static_cast<std::ptrdiff_t>(row) * in_size);
            };
            for (int b = 0; b < B; ++b) {
                put(b, *batch[static_cast<std::size_t>(b)].anchor);
                put(B + b, *batch[static_cast<std::size_t>(b)].positive);
                put(2 * B + b, *batch[static_cast<std::size_t>(b)].negative);
            }
            const auto& z = encoder.forward(ws, input.data(), 3 * B);

            double loss = 0.0;
            const float inv_b = 1.0f / static_cast<float>(B);
            for (int b = 0; b < B; ++b) {
                const float* za = z.data() + static_cast<std::ptrdiff_t>(b) * zd;
                const float* zp = z.data() + static_cast<std::ptrdiff_t>(B + b) * zd;
                const float* zn = z.data() + static_cast<std::ptrdiff_t>(2 * B + b) * zd;
                float* dza = dz.data() + static_cast<std::ptrdiff_t>(b) * zd;
                float* dzp = dz.data() + static_cast<std::ptrdiff_t>(B + b) * zd;
                float* dzn = dz.data() + static_cast<std::ptrdiff_t>(2 * B + b) * zd;
                loss += static_cast<double>(triplet_loss(za, zp, zn, zd,
                                                         static_cast<float>(cfg.margin), dza, dzp,
                                                         dzn));
                for (int i = 0; i < zd; ++i) {
                    dza[i] *= inv_b;
                    dzp[i] *= inv_b;
                    dzn[i] *= inv_b;
                }
            }
            loss *= inv_b;
            if (!std::isfinite(loss)) throw std::runtime_error("pretrain: non-finite loss");
            encoder.backward(ws, dz.data());
            opt.step();
            epoch_loss += loss;
        }
        result.epoch_mean_loss.push_back(
            cfg.updates_per_epoch > 0 ? epoch_loss / cfg.updates_per_epoch : 0.0);
    }
    return result;
}

} // namespace polybot
