#pragma once

#include <map>

#include "polybot/dataset.hpp"
#include "polybot/nn.hpp"

namespace polybot {

/// CNN encoder: conv/pool pyramid, flattened into two fully-connected
/// layers ending in the representation z.
struct EncoderSpec {
    int input_w = 64, input_h = 64, input_c = 3;
    std::vector<int> kernels{3, 3, 3};
    std::vector<int> channels{16, 16, 16};
    std::vector<int> strides{1, 1, 1};
    std::vector<int> paddings{1, 1, 1};
    std::vector<int> pool_sizes{2, 2, 1};
    std::vector<int> pool_strides{2, 2, 1};
    std::vector<int> pool_paddings{0, 0, 0};
    int fc_hidden = 128;
    int z_dim = 128;

    void check() const {
        const std::size_t n = kernels.size();
        if (channels.size() != n || strides.size() != n || paddings.size() != n ||
            pool_sizes.size() != n || pool_strides.size() != n || pool_paddings.size() != n)
            throw std::invalid_argument("encoder spec layer lists must have equal length");
    }
};

/// z concatenated with a one-hot task index, two trunk layers, then one
/// 7-dim tanh head per robot.
struct DecoderSpec {
    int z_dim = 128;
    int n_tasks = 7;
    int hidden = 128;
    int n_heads = 3;
    int action_dim = 7;
};

template <typename T>
class Encoder {
public:
    Encoder(const EncoderSpec& spec, Rng rng) : spec_(spec) {
        spec_.check();
        int h = spec_.input_h, w = spec_.input_w, c = spec_.input_c;
        for (std::size_t i = 0; i < spec_.kernels.size(); ++i) {
            convs_.emplace_back("enc.conv" + std::to_string(i), c, h, w, spec_.channels[i],
                                spec_.kernels[i], spec_.strides[i], spec_.paddings[i], rng);
            h = convs_.back().out_h();
            w = convs_.back().out_w();
            c = spec_.channels[i];
            pools_.emplace_back(c, h, w, spec_.pool_sizes[i], spec_.pool_strides[i],
                                spec_.pool_paddings[i]);
            h = pools_.back().out_h();
            w = pools_.back().out_w();
        }
        flat_ = c * h * w;
        fc1_ = std::make_unique<nn::Dense<T>>("enc.fc1", flat_, spec_.fc_hidden, rng);
        fc2_ = std::make_unique<nn::Dense<T>>("enc.fc2", spec_.fc_hidden, spec_.z_dim, rng);
    }

    int input_size() const { return spec_.input_c * spec_.input_h * spec_.input_w; }
    int z_dim() const { return spec_.z_dim; }
    const EncoderSpec& spec() const { return spec_; }

    struct Ws {
        int batch = 0;
        std::vector<T> input;
        std::vector<std::vector<T>> col, conv_out, relu_out, pool_out;
        std::vector<std::vector<int>> pool_arg;
        std::vector<T> fc1_out, fc1_relu, z;
        // scratch for backward
        std::vector<T> d_a, d_b, d_col;
    };

    Ws make_ws(int batch) const {
        Ws ws;
        ws.batch = batch;
        ws.input.resize(static_cast<std::size_t>(batch) * input_size());
        std::size_t max_stage = ws.input.size();
        for (std::size_t i = 0; i < convs_.size(); ++i) {
            ws.col.emplace_back(static_cast<std::size_t>(batch) * convs_[i].col_rows() *
                                convs_[i].col_cols());
            ws.conv_out.emplace_back(static_cast<std::size_t>(batch) * convs_[i].out_size());
            ws.relu_out.emplace_back(static_cast<std::size_t>(batch) * convs_[i].out_size());
            ws.pool_out.emplace_back(static_cast<std::size_t>(batch) * pools_[i].out_size());
            ws.pool_arg.emplace_back(static_cast<std::size_t>(batch) * pools_[i].out_size());
            max_stage = std::max(max_stage, ws.conv_out.back().size());
        }
        ws.fc1_out.resize(static_cast<std::size_t>(batch) * spec_.fc_hidden);
        ws.fc1_relu.resize(static_cast<std::size_t>(batch) * spec_.fc_hidden);
        ws.z.resize(static_cast<std::size_t>(batch) * spec_.z_dim);
        ws.d_a.resize(max_stage);
        ws.d_b.resize(max_stage);
        std::size_t max_col = 0;
        for (const auto& c : convs_)
            max_col = std::max(max_col, static_cast<std::size_t>(c.col_rows()) * c.col_cols());
        ws.d_col.resize(max_col);
        return ws;
    }

    /// images: batch x (C*H*W), channel-major. Returns ws.z.
    const std::vector<T>& forward(Ws& ws, const T* images, int batch) const {
        std::copy(images, images + static_cast<std::ptrdiff_t>(batch) * input_size(),
                  ws.input.begin());
        const T* x = ws.input.data();
        for (std::size_t i = 0; i < convs_.size(); ++i) {
            convs_[i].forward(batch, x, ws.col[i].data(), ws.conv_out[i].data());
            nn::relu_forward(batch * convs_[i].out_size(), ws.conv_out[i].data(),
                             ws.relu_out[i].data());
            pools_[i].forward(batch, ws.relu_out[i].data(), ws.pool_out[i].data(),
                              ws.pool_arg[i].data());
            x = ws.pool_out[i].data();
        }
        fc1_->forward(batch, x, ws.fc1_out.data());
        nn::relu_forward(batch * spec_.fc_hidden, ws.fc1_out.data(), ws.fc1_relu.data());
        fc2_->forward(batch, ws.fc1_relu.data(), ws.z.data());
        return ws.z;
    }

    /// dz: batch x z_dim. Accumulates parameter gradients.
    void backward(Ws& ws, const T* dz) {
        const int batch = ws.batch;
        std::vector<T>& dh = ws.d_a;
        std::vector<T>& dh2 = ws.d_b;
        fc2_->backward(batch, ws.fc1_relu.data(), dz, dh.data());                 // -> d fc1_relu
        nn::relu_backward(batch * spec_.fc_hidden, ws.fc1_relu.data(), dh.data(), dh.data());
        const T* last_pool =
            convs_.empty() ? ws.input.data() : ws.pool_out.back().data();
        fc1_->backward(batch, last_pool, dh.data(), dh2.data());                  // -> d pool_last
        T* dcur = dh2.data();
        for (std::size_t i = convs_.size(); i-- > 0;) {
            pools_[i].backward(batch, ws.pool_arg[i].data(), dcur, dh.data());    // -> d relu
            nn::relu_backward(batch * convs_[i].out_size(), ws.relu_out[i].data(), dh.data(),
                              dh.data());
            const bool need_dx = i > 0;
            convs_[i].backward(batch, ws.col[i].data(), dh.data(), ws.d_col.data(),
                               need_dx ? dh2.data() : nullptr);
            dcur = dh2.data();
        }
    }

    std::vector<nn::ParamBlock<T>> params() {
        std::vector<nn::ParamBlock<T>> blocks;
        for (auto& c : convs_) c.collect(blocks);
        fc1_->collect(blocks);
        fc2_->collect(blocks);
        return blocks;
    }

private:
    EncoderSpec spec_;
    std::vector<nn::Conv2d<T>> convs_;
    std::vector<nn::MaxPool<T>> pools_;
    int flat_ = 0;
    std::unique_ptr<nn::Dense<T>> fc1_, fc2_;
};

template <typename T>
class Decoder {
public:
    Decoder(const DecoderSpec& spec, Rng rng) : spec_(spec) {
        trunk1_ = std::make_unique<nn::Dense<T>>("dec.trunk1", spec.z_dim + spec.n_tasks,
                                                 spec.hidden, rng);
        trunk2_ = std::make_unique<nn::Dense<T>>("dec.trunk2", spec.hidden, spec.hidden, rng);
        for (int h = 0; h < spec.n_heads; ++h)
            heads_.push_back(std::make_unique<nn::Dense<T>>("dec.head" + std::to_string(h),
                                                            spec.hidden, spec.action_dim, rng));
    }

    const DecoderSpec& spec() const { return spec_; }

    struct Ws {
        std::vector<T> in, h1, h1r, h2, h2r, pre, act;
        std::vector<T> d1, d2, d3;
    };

    Ws make_ws() const {
        Ws ws;
        ws.in.resize(static_cast<std::size_t>(spec_.z_dim + spec_.n_tasks));
        ws.h1.resize(static_cast<std::size_t>(spec_.hidden));
        ws.h1r.resize(static_cast<std::size_t>(spec_.hidden));
        ws.h2.resize(static_cast<std::size_t>(spec_.hidden));
        ws.h2r.resize(static_cast<std::size_t>(spec_.hidden));
        ws.pre.resize(static_cast<std::size_t>(spec_.action_dim));
        ws.act.resize(static_cast<std::size_t>(spec_.action_dim));
        ws.d1.resize(static_cast<std::size_t>(spec_.hidden));
        ws.d2.resize(static_cast<std::size_t>(spec_.hidden));
        ws.d3.resize(static_cast<std::size_t>(spec_.z_dim + spec_.n_tasks));
        return ws;
    }

    /// Single sample. task one-hot must be valid; only head `head` runs.
    void forward(Ws& ws, const T* z, int task_index, int head) const {
        if (head < 0 || head >= spec_.n_heads) throw std::invalid_argument("unknown head");
        if (task_index < 0 || task_index >= spec_.n_tasks)
            throw std::invalid_argument("unknown task index");
        std::copy(z, z + spec_.z_dim, ws.in.begin());
        std::fill(ws.in.begin() + spec_.z_dim, ws.in.end(), T(0));
        ws.in[static_cast<std::size_t>(spec_.z_dim + task_index)] = T(1);
        trunk1_->forward(1, ws.in.data(), ws.h1.data());
        nn::relu_forward(spec_.hidden, ws.h1.data(), ws.h1r.data());
        trunk2_->forward(1, ws.h1r.data(), ws.h2.data());
        nn::relu_forward(spec_.hidden, ws.h2.data(), ws.h2r.data());
        heads_[static_cast<std::size_t>(head)]->forward(1, ws.h2r.data(), ws.pre.data());
        nn::tanh_forward(spec_.action_dim, ws.pre.data(), ws.act.data());
    }

    /// daction for the same sample as the last forward on this ws; writes
    /// dz (z_dim) and accumulates parameter grads.
    void backward(Ws& ws, int head, const T* daction, T* dz) {
        std::vector<T> dpre(static_cast<std::size_t>(spec_.action_dim));
        nn::tanh_backward(spec_.action_dim, ws.act.data(), daction, dpre.data());
        heads_[static_cast<std::size_t>(head)]->backward(1, ws.h2r.data(), dpre.data(),
                                                         ws.d2.data());
        nn::relu_backward(spec_.hidden, ws.h2r.data(), ws.d2.data(), ws.d2.data());
        trunk2_->backward(1, ws.h1r.data(), ws.d2.data(), ws.d1.data());
        nn::relu_backward(spec_.hidden, ws.h1r.data(), ws.d1.data(), ws.d1.data());
        trunk1_->backward(1, ws.in.data(), ws.d1.data(), ws.d3.data());
        if (dz) std::copy(ws.d3.begin(), ws.d3.begin() + spec_.z_dim, dz);
    }

    std::vector<nn::ParamBlock<T>> params() {
        std::vector<nn::ParamBlock<T>> blocks;
        trunk1_->collect(blocks);
        trunk2_->collect(blocks);
        for (auto& h : heads_) h->collect(blocks);
        return blocks;
    }

private:
    DecoderSpec spec_;
    std::unique_ptr<nn::Dense<T>> trunk1_, trunk2_;
    std::vector<std::unique_ptr<nn::Dense<T>>> heads_;
};

// ---------------------------------------------------------------------------
// Image helpers and augmentation

inline void image_to_chw(const Image& img, float* dst) {
    for (int c = 0; c < Image::kC; ++c)
        for (int y = 0; y < Image::kH; ++y)
            for (int x = 0; x < Image::kW; ++x)
                *dst++ = img.at(x, y, c);
}

struct AugmentConfig {
    int pad = 4;
    double scale_lo = 0.8, scale_hi = 1.2;
    double shift_lo = -0.1, shift_hi = 0.1;
};

namespace detail {
inline int mirror_index(int i, int n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
}
} // namespace detail

/// Deterministic augmentation core: reflect-pad, crop at the given offset in
/// [0, 2*pad], then per-channel affine jitter, clamped to [0,1].
/// augment_at(img, pad, pad, pad, unit scale, zero shift) is the identity.
inline Image augment_at(const Image& img, int pad, int ox, int oy,
                        const std::array<float, 3>& scale, const std::array<float, 3>& shift) {
    Image out;
    for (int y = 0; y < Image::kH; ++y) {
        const int sy = detail::mirror_index(y + oy - pad, Image::kH);
        for (int x = 0; x < Image::kW; ++x) {
            const int sx = detail::mirror_index(x + ox - pad, Image::kW);
            const float r = img.at(sx, sy, 0) * scale[0] + shift[0];
            const float g = img.at(sx, sy, 1) * scale[1] + shift[1];
            const float b = img.at(sx, sy, 2) * scale[2] + shift[2];
            out.set(x, y, r, g, b);
        }
    }
    return out;
}

/// Random crop (offsets uniform over {0..2*pad}^2) plus color jitter.
inline Image augment(const Image& img, Rng& rng, const AugmentConfig& cfg) {
    const int ox = cfg.pad > 0 ? rng.uniform_int(0, 2 * cfg.pad) : 0;
    const int oy = cfg.pad > 0 ? rng.uniform_int(0, 2 * cfg.pad) : 0;
    std::array<float, 3> scale, shift;
    for (int c = 0; c < 3; ++c) {
        scale[static_cast<std::size_t>(c)] =
            static_cast<float>(rng.uniform(cfg.scale_lo, cfg.scale_hi));
        shift[static_cast<std::size_t>(c)] =
            static_cast<float>(rng.uniform(cfg.shift_lo, cfg.shift_hi));
    }
    return augment_at(img, cfg.pad, ox, oy, scale, shift);
}

// ---------------------------------------------------------------------------
// Losses

/// Mean squared error over batch and action dimensions; optional gradient.
template <typename T>
inline T mse_loss(const T* pred, const T* label, int batch, int dim, T* dpred = nullptr) {
    T loss = 0;
    const T scale = T(1) / (static_cast<T>(batch) * static_cast<T>(dim));
    for (int i = 0; i < batch * dim; ++i) {
        const T e = pred[i] - label[i];
        loss += e * e * scale;
        if (dpred) dpred[i] = T(2) * e * scale;
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Behavior-cloning policy and training

enum class CameraView { kWrist, kExterior };

/// Shared encoder plus task-conditioned multiheaded decoder, single-sample
/// action interface for rollouts.
class Policy {
public:
    Policy(const EncoderSpec& espec, const DecoderSpec& dspec, std::uint64_t seed)
        : encoder_(espec, Rng(mix64(seed ^ 0xE11C0DE0u))),
          decoder_(dspec, Rng(mix64(seed ^ 0xDEC0DE00u))), ws1_(encoder_.make_ws(1)),
          dws_(decoder_.make_ws()) {}

    Encoder<float>& encoder() { return encoder_; }
    Decoder<float>& decoder() { return decoder_; }
    const Decoder<float>& decoder() const { return decoder_; }

    std::vector<nn::ParamBlock<float>> all_params() {
        auto blocks = encoder_.params();
        auto d = decoder_.params();
        blocks.insert(blocks.end(), d.begin(), d.end());
        return blocks;
    }

    std::vector<float> encode(const Image& img) {
        std::vector<float> input(static_cast<std::size_t>(encoder_.input_size()));
        image_to_chw(img, input.data());
        const auto& z = encoder_.forward(ws1_, input.data(), 1);
        return {z.begin(), z.begin() + encoder_.z_dim()};
    }

    std::vector<double> act(const Image& img, int task_index, int head) {
        const std::vector<float> z = encode(img);
        decoder_.forward(dws_, z.data(), task_index, head);
        std::vector<double> a(static_cast<std::size_t>(decoder_.spec().action_dim));
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<double>(dws_.act[i]);
        return a;
    }

    void save(const std::filesystem::path& path) { nn::save_params(path, all_params()); }
    void load(const std::filesystem::path& path) { nn::load_params(path, all_params()); }

private:
    Encoder<float> encoder_;
    Decoder<float> decoder_;
    Encoder<float>::Ws ws1_;
    Decoder<float>::Ws dws_;
};

struct TrainConfig {
    int batch_size = 64;
    double learning_rate = 3e-4;
    int updates_per_epoch = 1000;
    int epochs = 1;
    bool augment_enabled = true;
    AugmentConfig aug;
    bool freeze_encoder = false;
    std::uint64_t seed = 0;

    void check() const {
        if (batch_size <= 0 || learning_rate <= 0.0 || updates_per_epoch < 0 || epochs < 0)
            throw std::invalid_argument("train config fields must be positive");
    }
};

struct TrainCurves {
    std::vector<double> epoch_mean_loss;
};

struct TrainSample {
    const TrajectoryRecord* rec;
    int step;
};

/// Mixed-batch behavior cloning across robots and tasks: records sampled
/// uniformly, each sample routed through its robot's head (head_map) with
/// its task index one-hot. Deterministic under the config seed.
inline TrainCurves train_bc(Policy& policy, const std::vector<const SharedBuffer*>& buffers,
                            CameraView view, const std::map<int, int>& head_map,
                            const TrainConfig& cfg) {
    cfg.check();
    std::vector<const TrajectoryRecord*> records;
    for (const SharedBuffer* b : buffers)
        for (const TrajectoryRecord& r : b->records())
            if (!r.steps.empty()) records.push_back(&r);
    if (records.empty()) throw std::invalid_argument("train_bc: no records");
    for (const TrajectoryRecord* r : records)
        if (!head_map.count(r->robot_id))
            throw std::invalid_argument("train_bc: no head for robot " +
                                        std::to_string(r->robot_id));

    Rng sample_rng(mix64(cfg.seed ^ 0xB0B1u));
    Rng aug_rng(mix64(cfg.seed ^ 0xA060u));

    const int B = cfg.batch_size;
    auto ws = policy.encoder().make_ws(B);
    auto dws = policy.decoder().make_ws();
    const int in_size = policy.encoder().input_size();
    const int zd = policy.encoder().z_dim();
    const int ad = policy.decoder().spec().action_dim;

    std::vector<nn::ParamBlock<float>> blocks =
        cfg.freeze_encoder ? policy.decoder().params() : policy.all_params();
    nn::Adam<float> opt(std::move(blocks), cfg.learning_rate);

    std::vector<float> input(static_cast<std::size_t>(B) * in_size);
    std::vector<float> dz(static_cast<std::size_t>(B) * zd);
    std::vector<float> labels(static_cast<std::size_t>(B) * ad);
    std::vector<const TrajectoryRecord*> recs(static_cast<std::size_t>(B));
    std::vector<int> steps(static_cast<std::size_t>(B));

    TrainCurves curves;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (int u = 0; u < cfg.updates_per_epoch; ++u) {
            for (int b = 0; b < B; ++b) {
                const TrajectoryRecord* rec =
                    records[static_cast<std::size_t>(sample_rng.uniform_int(
                        0, static_cast<int>(records.size()) - 1))];
                const int step = sample_rng.uniform_int(0, static_cast<int>(rec->steps.size()) - 1);
                recs[static_cast<std::size_t>(b)] = rec;
                steps[static_cast<std::size_t>(b)] = step;
                const Image& raw = view == CameraView::kWrist
                                       ? rec->wrist[static_cast<std::size_t>(rec->steps[static_cast<std::size_t>(step)].obs_ref)]
                                       : rec->exterior[static_cast<std::size_t>(rec->steps[static_cast<std::size_t>(step)].obs_ref)];
                const Image img = cfg.augment_enabled ? augment(raw, aug_rng, cfg.aug) : raw;
                image_to_chw(img, input.data() + static_cast<std::ptrdiff_t>(b) * in_size);
                for (int d = 0; d < ad; ++d)
                    labels[static_cast<std::size_t>(b * ad + d)] =
                        rec->steps[static_cast<std::size_t>(step)].action[static_cast<std::size_t>(d)];
            }
            const auto& z = policy.encoder().forward(ws, input.data(), B);

            double loss = 0.0;
            const float scale = 1.0f / (static_cast<float>(B) * static_cast<float>(ad));
            for (int b = 0; b < B; ++b) {
                const TrajectoryRecord* rec = recs[static_cast<std::size_t>(b)];
                const int head = head_map.at(rec->robot_id);
                policy.decoder().forward(dws, z.data() + static_cast<std::ptrdiff_t>(b) * zd,
                                         rec->task_id, head);
                std::vector<float> da(static_cast<std::size_t>(ad));
                for (int d = 0; d < ad; ++d) {
                    const float e = dws.act[static_cast<std::size_t>(d)] -
                                    labels[static_cast<std::size_t>(b * ad + d)];
                    loss += static_cast<double>(e) * e * scale;
                    da[static_cast<std::size_t>(d)] = 2.0f * e * scale;
                }
                policy.decoder().backward(dws, head, da.data(),
                                          dz.data() + static_cast<std::ptrdiff_t>(b) * zd);
            }
            if (!std::isfinite(loss)) throw std::runtime_error("train_bc: non-finite loss");
            if (!cfg.freeze_encoder) policy.encoder().backward(ws, dz.data());
            opt.step();
            epoch_loss += loss;
        }
        curves.epoch_mean_loss.push_back(
            cfg.updates_per_epoch > 0 ? epoch_loss / cfg.updates_per_epoch : 0.0);
    }
    return curves;
}

} // namespace polybot
