#pragma once

#include <cblas.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "polybot/binio.hpp"
#include "polybot/rng.hpp"

extern "C" void openblas_set_num_threads(int);

namespace polybot::nn {

inline void ensure_single_threaded_blas() {
    static const bool once = [] {
        openblas_set_num_threads(1);
        return true;
    }();
    (void)once;
}

// Row-major GEMM: C = alpha * op(A) op(B) + beta * C.
inline void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, int lda,
                 const float* b, int ldb, float beta, float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m,
                n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
inline void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda,
                 const double* b, int ldb, double beta, double* c, int ldc) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m,
                n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <typename T>
struct ParamBlock {
    std::string name;
    std::vector<T>* data;
    std::vector<T>* grad;
};

template <typename T>
inline void fanin_uniform_init(std::vector<T>& w, int fan_in, Rng& rng) {
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (T& v : w) v = static_cast<T>(rng.uniform(-s, s));
}

// ---------------------------------------------------------------------------
// Layers. Forward/backward operate on batch-major buffers; each layer owns
// its parameters and accumulates parameter gradients in backward.

template <typename T>
class Dense {
public:
    Dense(std::string name, int in, int out, Rng& rng)
        : name_(std::move(name)), in_(in), out_(out), w_(static_cast<std::size_t>(in) * out),
          b_(static_cast<std::size_t>(out)), gw_(w_.size(), T(0)), gb_(b_.size(), T(0)) {
        fanin_uniform_init(w_, in, rng);
        fanin_uniform_init(b_, in, rng);
    }

    int in() const { return in_; }
    int out() const { return out_; }

    // y[b, out] = x[b, in] W^T + b
    void forward(int batch, const T* x, T* y) const {
        ensure_single_threaded_blas();
        for (int b = 0; b < batch; ++b)
            for (int o = 0; o < out_; ++o) y[b * out_ + o] = b_[static_cast<std::size_t>(o)];
        gemm(false, true, batch, out_, in_, T(1), x, in_, w_.data(), in_, T(1), y, out_);
    }

    // accumulates gw, gb; writes dx if non-null
    void backward(int batch, const T* x, const T* dy, T* dx) {
        gemm(true, false, out_, in_, batch, T(1), dy, out_, x, in_, T(1), gw_.data(), in_);
        for (int b = 0; b < batch; ++b)
            for (int o = 0; o < out_; ++o) gb_[static_cast<std::size_t>(o)] += dy[b * out_ + o];
        if (dx) gemm(false, false, batch, in_, out_, T(1), dy, out_, w_.data(), in_, T(0), dx, in_);
    }

    void collect(std::vector<ParamBlock<T>>& blocks) {
        blocks.push_back({name_ + ".w", &w_, &gw_});
        blocks.push_back({name_ + ".b", &b_, &gb_});
    }

private:
    std::string name_;
    int in_, out_;
    std::vector<T> w_, b_, gw_, gb_;
};

/// 2D convolution via im2col + GEMM. Layout: [batch, channel, row, col].
template <typename T>
class Conv2d {
public:
    Conv2d(std::string name, int in_c, int in_h, int in_w, int out_c, int k, int stride, int pad,
           Rng& rng)
        : name_(std::move(name)), in_c_(in_c), in_h_(in_h), in_w_(in_w), out_c_(out_c), k_(k),
          stride_(stride), pad_(pad), out_h_((in_h + 2 * pad - k) / stride + 1),
          out_w_((in_w + 2 * pad - k) / stride + 1),
          w_(static_cast<std::size_t>(out_c) * in_c * k * k), b_(static_cast<std::size_t>(out_c)),
          gw_(w_.size(), T(0)), gb_(b_.size(), T(0)) {
        fanin_uniform_init(w_, in_c * k * k, rng);
        fanin_uniform_init(b_, in_c * k * k, rng);
    }

    int out_c() const { return out_c_; }
    int out_h() const { return out_h_; }
    int out_w() const { return out_w_; }
    int in_size() const { return in_c_ * in_h_ * in_w_; }
    int out_size() const { return out_c_ * out_h_ * out_w_; }
    int col_rows() const { return in_c_ * k_ * k_; }
    int col_cols() const { return out_h_ * out_w_; }

    void im2col(const T* x, T* col) const {
        const int oh = out_h_, ow = out_w_;
        for (int c = 0; c < in_c_; ++c)
            for (int ky = 0; ky < k_; ++ky)
                for (int kx = 0; kx < k_; ++kx) {
                    T* dst = col + ((c * k_ + ky) * k_ + kx) * oh * ow;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride_ + ky - pad_;
                        T* drow = dst + oy * ow;
                        if (iy < 0 || iy >= in_h_) {
                            std::fill(drow, drow + ow, T(0));
                            continue;
                        }
                        const T* xrow = x + (c * in_h_ + iy) * in_w_;
                        if (stride_ == 1) {
                            // contiguous span: ix = ox + kx - pad in [0, in_w)
                            const int o0 = std::max(0, pad_ - kx);
                            const int o1 = std::min(ow, in_w_ + pad_ - kx);
                            std::fill(drow, drow + o0, T(0));
                            if (o1 > o0)
                                std::copy(xrow + (o0 + kx - pad_), xrow + (o1 + kx - pad_),
                                          drow + o0);
                            std::fill(drow + std::max(o0, o1), drow + ow, T(0));
                        } else {
                            for (int ox = 0; ox < ow; ++ox) {
                                const int ix = ox * stride_ + kx - pad_;
                                drow[ox] = (ix >= 0 && ix < in_w_) ? xrow[ix] : T(0);
                            }
                        }
                    }
                }
    }

    // col buffer must hold batch * col_rows * col_cols; it is filled here
    // and reused by backward.
    void forward(int batch, const T* x, T* col, T* y) const {
        ensure_single_threaded_blas();
        const int cr = col_rows(), cc = col_cols();
        for (int b = 0; b < batch; ++b) {
            T* colb = col + static_cast<std::ptrdiff_t>(b) * cr * cc;
            im2col(x + static_cast<std::ptrdiff_t>(b) * in_size(), colb);
            T* yb = y + static_cast<std::ptrdiff_t>(b) * out_size();
            for (int o = 0; o < out_c_; ++o)
                for (int i = 0; i < cc; ++i) yb[o * cc + i] = b_[static_cast<std::size_t>(o)];
            gemm(false, false, out_c_, cc, cr, T(1), w_.data(), cr, colb, cc, T(1), yb, cc);
        }
    }

    void backward(int batch, const T* col, const T* dy, T* dx_col, T* dx) {
        const int cr = col_rows(), cc = col_cols();
        for (int b = 0; b < batch; ++b) {
            const T* colb = col + static_cast<std::ptrdiff_t>(b) * cr * cc;
            const T* dyb = dy + static_cast<std::ptrdiff_t>(b) * out_size();
            // dW += dY col^T
            gemm(false, true, out_c_, cr, cc, T(1), dyb, cc, colb, cc, T(1), gw_.data(), cr);
            for (int o = 0; o < out_c_; ++o) {
                T s = 0;
                for (int i = 0; i < cc; ++i) s += dyb[o * cc + i];
                gb_[static_cast<std::size_t>(o)] += s;
            }
            if (dx) {
                // dCol = W^T dY, then scatter back (col2im)
                gemm(true, false, cr, cc, out_c_, T(1), w_.data(), cr, dyb, cc, T(0), dx_col, cc);
                T* dxb = dx + static_cast<std::ptrdiff_t>(b) * in_size();
                for (int i = 0; i < in_size(); ++i) dxb[i] = T(0);
                col2im(dx_col, dxb);
            }
        }
    }

    void collect(std::vector<ParamBlock<T>>& blocks) {
        blocks.push_back({name_ + ".w", &w_, &gw_});
        blocks.push_back({name_ + ".b", &b_, &gb_});
    }

private:
    void col2im(const T* col, T* x) const {
        const int oh = out_h_, ow = out_w_;
        for (int c = 0; c < in_c_; ++c)
            for (int ky = 0; ky < k_; ++ky)
                for (int kx = 0; kx < k_; ++kx) {
                    const T* src = col + ((c * k_ + ky) * k_ + kx) * oh * ow;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride_ + ky - pad_;
                        if (iy < 0 || iy >= in_h_) continue;
                        T* xrow = x + (c * in_h_ + iy) * in_w_;
                        const T* srow = src + oy * ow;
                        if (stride_ == 1) {
                            const int o0 = std::max(0, pad_ - kx);
                            const int o1 = std::min(ow, in_w_ + pad_ - kx);
                            const int shift = kx - pad_;
                            for (int ox = o0; ox < o1; ++ox) xrow[ox + shift] += srow[ox];
                        } else {
                            for (int ox = 0; ox < ow; ++ox) {
                                const int ix = ox * stride_ + kx - pad_;
                                if (ix >= 0 && ix < in_w_) xrow[ix] += srow[ox];
                            }
                        }
                    }
                }
    }

    std::string name_;
    int in_c_, in_h_, in_w_, out_c_, k_, stride_, pad_, out_h_, out_w_;
    std::vector<T> w_, b_, gw_, gb_;
};

/// Max pooling; ties break to the first (lowest-index) element.
template <typename T>
class MaxPool {
public:
    MaxPool(int channels, int in_h, int in_w, int size, int stride, int pad)
        : c_(channels), in_h_(in_h), in_w_(in_w), size_(size), stride_(stride), pad_(pad),
          out_h_((in_h + 2 * pad - size) / stride + 1), out_w_((in_w + 2 * pad - size) / stride + 1) {}

    int out_h() const { return out_h_; }
    int out_w() const { return out_w_; }
    int in_size() const { return c_ * in_h_ * in_w_; }
    int out_size() const { return c_ * out_h_ * out_w_; }

    // argmax holds the flat input index chosen per output element
    void forward(int batch, const T* x, T* y, int* argmax) const {
        for (int b = 0; b < batch; ++b) {
            const T* xb = x + static_cast<std::ptrdiff_t>(b) * in_size();
            T* yb = y + static_cast<std::ptrdiff_t>(b) * out_size();
            int* ab = argmax + static_cast<std::ptrdiff_t>(b) * out_size();
            for (int c = 0; c < c_; ++c)
                for (int oy = 0; oy < out_h_; ++oy)
                    for (int ox = 0; ox < out_w_; ++ox) {
                        T best{};
                        int best_idx = -1;
                        for (int ky = 0; ky < size_; ++ky) {
                            const int iy = oy * stride_ + ky - pad_;
                            if (iy < 0 || iy >= in_h_) continue;
                            for (int kx = 0; kx < size_; ++kx) {
                                const int ix = ox * stride_ + kx - pad_;
                                if (ix < 0 || ix >= in_w_) continue;
                                const int idx = (c * in_h_ + iy) * in_w_ + ix;
                                if (best_idx < 0 || xb[idx] > best) {
                                    best = xb[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        const int o = (c * out_h_ + oy) * out_w_ + ox;
                        yb[o] = best_idx >= 0 ? best : T(0);
                        ab[o] = best_idx;
                    }
        }
    }

    void backward(int batch, const int* argmax, const T* dy, T* dx) const {
        for (int i = 0; i < batch * in_size(); ++i) dx[i] = T(0);
        for (int b = 0; b < batch; ++b) {
            const T* dyb = dy + static_cast<std::ptrdiff_t>(b) * out_size();
            const int* ab = argmax + static_cast<std::ptrdiff_t>(b) * out_size();
            T* dxb = dx + static_cast<std::ptrdiff_t>(b) * in_size();
            for (int o = 0; o < out_size(); ++o)
                if (ab[o] >= 0) dxb[ab[o]] += dyb[o];
        }
    }

private:
    int c_, in_h_, in_w_, size_, stride_, pad_, out_h_, out_w_;
};

template <typename T>
inline void relu_forward(int n, const T* x, T* y) {
    for (int i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}
template <typename T>
inline void relu_backward(int n, const T* y, const T* dy, T* dx) {
    for (int i = 0; i < n; ++i) dx[i] = y[i] > T(0) ? dy[i] : T(0);
}
template <typename T>
inline void tanh_forward(int n, const T* x, T* y) {
    for (int i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}
template <typename T>
inline void tanh_backward(int n, const T* y, const T* dy, T* dx) {
    for (int i = 0; i < n; ++i) dx[i] = dy[i] * (T(1) - y[i] * y[i]);
}

// ---------------------------------------------------------------------------
// Adam

template <typename T>
class Adam {
public:
    Adam(std::vector<ParamBlock<T>> blocks, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8)
        : blocks_(std::move(blocks)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
        for (const auto& blk : blocks_) {
            m_.emplace_back(blk.data->size(), T(0));
            v_.emplace_back(blk.data->size(), T(0));
        }
    }

    void zero_grad() {
        for (auto& blk : blocks_)
            for (T& g : *blk.grad) g = T(0);
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, t_);
        const double bc2 = 1.0 - std::pow(b2_, t_);
        for (std::size_t k = 0; k < blocks_.size(); ++k) {
            auto& data = *blocks_[k].data;
            auto& grad = *blocks_[k].grad;
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < data.size(); ++i) {
                const double g = static_cast<double>(grad[i]);
                m[i] = static_cast<T>(b1_ * m[i] + (1.0 - b1_) * g);
                v[i] = static_cast<T>(b2_ * v[i] + (1.0 - b2_) * g * g);
                const double mh = m[i] / bc1;
                const double vh = v[i] / bc2;
                data[i] -= static_cast<T>(lr_ * mh / (std::sqrt(vh) + eps_));
            }
            for (T& g : grad) g = T(0);
        }
    }

private:
    std::vector<ParamBlock<T>> blocks_;
    double lr_, b1_, b2_, eps_;
    std::vector<std::vector<T>> m_, v_;
    long t_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints: versioned binary, little-endian 32-bit floats with a shape
// manifest (block names and sizes).

inline constexpr std::uint32_t kCheckpointMagic = 0x5042434Bu;  // "PBCK"
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
inline void save_params(const std::filesystem::path& path,
                        const std::vector<ParamBlock<T>>& blocks) {
    io::ByteWriter w;
    w.u32(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(blocks.size()));
    for (const auto& b : blocks) {
        w.str(b.name);
        w.u32(static_cast<std::uint32_t>(b.data->size()));
    }
    for (const auto& b : blocks)
        for (const T v : *b.data) w.f32(static_cast<float>(v));
    const std::uint32_t crc = io::crc32(w.buf.data(), w.buf.size());
    w.u32(crc);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot write checkpoint " + path.string());
    f.write(reinterpret_cast<const char*>(w.buf.data()), static_cast<std::streamsize>(w.buf.size()));
}

template <typename T>
inline void load_params(const std::filesystem::path& path, std::vector<ParamBlock<T>> blocks) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("missing checkpoint " + path.string());
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
    if (buf.size() < 16) throw TruncatedError("checkpoint too small");
    const std::uint32_t stored_crc =
        static_cast<std::uint32_t>(buf[buf.size() - 4]) << 0 |
        static_cast<std::uint32_t>(buf[buf.size() - 3]) << 8 |
        static_cast<std::uint32_t>(buf[buf.size() - 2]) << 16 |
        static_cast<std::uint32_t>(buf[buf.size() - 1]) << 24;
    if (io::crc32(buf.data(), buf.size() - 4) != stored_crc)
        throw ChecksumError("checkpoint checksum mismatch");
    io::ByteReader r{buf.data(), buf.size() - 4};
    if (r.u32() != kCheckpointMagic) throw FormatError("bad checkpoint magic");
    const std::uint32_t ver = r.u32();
    if (ver != kCheckpointVersion)
        throw VersionMismatchError("checkpoint version " + std::to_string(ver));
    const std::uint32_t n = r.u32();
    if (n != blocks.size()) throw FormatError("checkpoint block count mismatch");
    for (auto& b : blocks) {
        const std::string name = r.str();
        const std::uint32_t size = r.u32();
        if (name != b.name || size != b.data->size())
            throw FormatError("checkpoint shape manifest mismatch at block " + name);
    }
    for (auto& b : blocks)
        for (T& v : *b.data) v = static_cast<T>(r.f32());
}

} // namespace polybot::nn
