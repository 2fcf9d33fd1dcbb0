#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "gradcheck_util.hpp"
#include "polybot/contrastive.hpp"
#include "polybot/policy.hpp"

using namespace polybot;
namespace fs = std::filesystem;

namespace {

std::vector<double> random_input(int n, Rng& rng) {
    std::vector<double> x(static_cast<std::size_t>(n));
    for (auto& v : x) v = rng.uniform();
    return x;
}

void zero_biases(std::vector<nn::ParamBlock<float>> blocks) {
    for (auto& b : blocks)
        if (b.name.ends_with(".b"))
            for (float& v : *b.data) v = 0.0f;
}

} // namespace

TEST_CASE("encoder output has the configured dimension and is deterministic") {
    const EncoderSpec spec;  // full-size: 64x64x3 -> z 128
    Encoder<float> enc(spec, Rng(3));
    auto ws = enc.make_ws(2);
    std::vector<float> img(static_cast<std::size_t>(2) * enc.input_size());
    Rng rng(4);
    for (auto& v : img) v = static_cast<float>(rng.uniform());
    const auto z1 = enc.forward(ws, img.data(), 2);
    REQUIRE(z1.size() == 2 * 128);
    const std::vector<float> snapshot(z1.begin(), z1.end());
    const auto& z2 = enc.forward(ws, img.data(), 2);
    for (std::size_t i = 0; i < snapshot.size(); ++i) REQUIRE(snapshot[i] == z2[i]);
}

TEST_CASE("all-zero image with zero biases encodes to z = 0") {
    Encoder<float> enc(EncoderSpec{}, Rng(5));
    zero_biases(enc.params());
    auto ws = enc.make_ws(1);
    std::vector<float> img(static_cast<std::size_t>(enc.input_size()), 0.0f);
    const auto& z = enc.forward(ws, img.data(), 1);
    for (int i = 0; i < enc.z_dim(); ++i) REQUIRE(z[static_cast<std::size_t>(i)] == 0.0f);
}

TEST_CASE("gradient check: MSE through encoder and decoder") {
    Rng rng(11);
    double worst = 0.0;
    for (int draw = 0; draw < 10; ++draw) {
        Encoder<double> enc(gradcheck::mini_encoder_spec(), Rng(100 + draw));
        Decoder<double> dec(gradcheck::mini_decoder_spec(), Rng(200 + draw));
        const int batch = 2;
        auto ws = enc.make_ws(batch);
        auto dws = dec.make_ws();
        const auto input = random_input(batch * enc.input_size(), rng);
        std::vector<double> labels(static_cast<std::size_t>(batch) * 7);
        for (auto& v : labels) v = rng.uniform(-0.8, 0.8);
        const int heads[2] = {0, 1};
        const int tasks[2] = {1, 0};

        auto blocks = enc.params();
        auto db = dec.params();
        blocks.insert(blocks.end(), db.begin(), db.end());

        auto loss_fn = [&](bool with_grad) {
            const auto& z = enc.forward(ws, input.data(), batch);
            double loss = 0.0;
            std::vector<double> dz(static_cast<std::size_t>(batch) * enc.z_dim(), 0.0);
            const double scale = 1.0 / (batch * 7.0);
            for (int b = 0; b < batch; ++b) {
                dec.forward(dws, z.data() + static_cast<std::ptrdiff_t>(b) * enc.z_dim(), tasks[b],
                            heads[b]);
                std::vector<double> da(7);
                for (int d = 0; d < 7; ++d) {
                    const double e = dws.act[static_cast<std::size_t>(d)] -
                                     labels[static_cast<std::size_t>(b * 7 + d)];
                    loss += e * e * scale;
                    da[static_cast<std::size_t>(d)] = 2.0 * e * scale;
                }
                if (with_grad)
                    dec.backward(dws, heads[b], da.data(),
                                 dz.data() + static_cast<std::ptrdiff_t>(b) * enc.z_dim());
            }
            if (with_grad) enc.backward(ws, dz.data());
            return loss;
        };
        const auto res = gradcheck::check(blocks, loss_fn);
        worst = std::max(worst, res.max_rel_err);
    }
    INFO("max rel err " << worst);
    REQUIRE(worst < 1e-4);
}

TEST_CASE("gradient check: triplet loss through the encoder") {
    Rng rng(21);
    double worst = 0.0;
    for (int draw = 0; draw < 10; ++draw) {
        Encoder<double> enc(gradcheck::mini_encoder_spec(), Rng(300 + draw));
        const int B = 2;
        auto ws = enc.make_ws(3 * B);
        const auto input = random_input(3 * B * enc.input_size(), rng);
        const int zd = enc.z_dim();

        auto loss_fn = [&](bool with_grad) {
            const auto& z = enc.forward(ws, input.data(), 3 * B);
            std::vector<double> dz(static_cast<std::size_t>(3 * B) * zd, 0.0);
            double loss = 0.0;
            for (int b = 0; b < B; ++b) {
                const double* za = z.data() + static_cast<std::ptrdiff_t>(b) * zd;
                const double* zp = z.data() + static_cast<std::ptrdiff_t>(B + b) * zd;
                const double* zn = z.data() + static_cast<std::ptrdiff_t>(2 * B + b) * zd;
                loss += triplet_loss(za, zp, zn, zd, 0.5,
                                     dz.data() + static_cast<std::ptrdiff_t>(b) * zd,
                                     dz.data() + static_cast<std::ptrdiff_t>(B + b) * zd,
                                     dz.data() + static_cast<std::ptrdiff_t>(2 * B + b) * zd) /
                        B;
            }
            for (auto& v : dz) v /= B;
            if (with_grad) enc.backward(ws, dz.data());
            return loss;
        };
        const auto res = gradcheck::check(enc.params(), loss_fn);
        worst = std::max(worst, res.max_rel_err);
    }
    INFO("max rel err " << worst);
    REQUIRE(worst < 1e-4);
}

TEST_CASE("max-pool ties break to the first element") {
    nn::MaxPool<double> pool(1, 4, 4, 2, 2, 0);
    std::vector<double> x(16, 1.0);  // all equal
    std::vector<double> y(4);
    std::vector<int> arg(4);
    pool.forward(1, x.data(), y.data(), arg.data());
    REQUIRE(arg[0] == 0);
    REQUIRE(arg[1] == 2);
    REQUIRE(arg[2] == 8);
    REQUIRE(arg[3] == 10);
    std::vector<double> dy{1, 1, 1, 1}, dx(16);
    pool.backward(1, arg.data(), dy.data(), dx.data());
    REQUIRE(dx[0] == 1.0);
    REQUIRE(dx[1] == 0.0);
}

TEST_CASE("augmentation identity and offset distribution") {
    // recognizable image
    Image img;
    Rng rng(31);
    for (int y = 0; y < Image::kH; ++y)
        for (int x = 0; x < Image::kW; ++x)
            img.set(x, y, static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()),
                    static_cast<float>(rng.uniform()));

    const std::array<float, 3> unit{1, 1, 1}, zero{0, 0, 0};
    REQUIRE(augment_at(img, 4, 4, 4, unit, zero) == img);

    // crop offsets uniform over {0..8}^2: chi-square over 10k draws, alpha
    // 0.01, chi2_{0.99, 80} = 112.329
    AugmentConfig cfg;
    Rng arng(32);
    std::array<int, 81> counts{};
    for (int i = 0; i < 10000; ++i) {
        const int ox = arng.uniform_int(0, 2 * cfg.pad);
        const int oy = arng.uniform_int(0, 2 * cfg.pad);
        counts[static_cast<std::size_t>(oy * 9 + ox)] += 1;
    }
    const double expect = 10000.0 / 81.0;
    double chi2 = 0.0;
    for (int c : counts) chi2 += (c - expect) * (c - expect) / expect;
    REQUIRE(chi2 < 112.329);

    // scale/shift stay clamped
    Rng jrng(33);
    const Image out = augment(img, jrng, cfg);
    for (std::uint8_t p : out.px) {
        REQUIRE(p <= 255);
    }
}

TEST_CASE("decoder output range, task sensitivity, head independence") {
    DecoderSpec spec;
    spec.z_dim = 16;
    spec.n_tasks = 4;
    spec.hidden = 32;
    spec.n_heads = 3;
    Decoder<float> dec(spec, Rng(41));
    auto ws = dec.make_ws();
    Rng rng(42);
    std::vector<float> z(16);
    for (auto& v : z) v = static_cast<float>(rng.normal());

    dec.forward(ws, z.data(), 0, 0);
    std::vector<float> a00(ws.act);
    for (float v : a00) {
        REQUIRE(v > -1.0f);
        REQUIRE(v < 1.0f);
    }
    dec.forward(ws, z.data(), 2, 0);
    const std::vector<float> a20(ws.act);
    bool task_changes = false;
    for (std::size_t i = 0; i < a00.size(); ++i)
        if (a00[i] != a20[i]) task_changes = true;
    REQUIRE(task_changes);

    dec.forward(ws, z.data(), 0, 1);
    const std::vector<float> a01(ws.act);
    bool head_changes = false;
    for (std::size_t i = 0; i < a00.size(); ++i)
        if (a00[i] != a01[i]) head_changes = true;
    REQUIRE(head_changes);

    REQUIRE_THROWS_AS(dec.forward(ws, z.data(), 0, 7), std::invalid_argument);
    REQUIRE_THROWS_AS(dec.forward(ws, z.data(), -1, 0), std::invalid_argument);
    REQUIRE_THROWS_AS(dec.forward(ws, z.data(), 4, 0), std::invalid_argument);
}

TEST_CASE("mse loss hand values") {
    const float pred[7] = {0, 0, 0, 0, 0, 0, 0};
    float label[7] = {0, 0, 0, 0, 0, 0, 0};
    REQUIRE(mse_loss(pred, label, 1, 7) == 0.0f);
    label[2] = 0.5f;
    REQUIRE(mse_loss(pred, label, 1, 7) == Catch::Approx(0.25 / 7.0));
    Rng rng(51);
    for (int i = 0; i < 100; ++i) {
        float p[7], l[7];
        for (int d = 0; d < 7; ++d) {
            p[d] = static_cast<float>(rng.normal());
            l[d] = static_cast<float>(rng.normal());
        }
        REQUIRE(mse_loss(p, l, 1, 7) >= 0.0f);
    }
}

TEST_CASE("triplet loss hand values and zero-gradient region") {
    const double za[2] = {0, 0};
    double zp[2] = {0, 0};
    double zn[2] = {1, 0};
    REQUIRE(triplet_loss(za, zp, zn, 2, 0.5) == 0.0);  // 0.5 - 1 < 0

    zn[0] = 0;
    REQUIRE(triplet_loss(za, zp, zn, 2, 0.5) == 0.5);  // all equal

    zp[0] = 0.3;
    zn[0] = 0.4;
    REQUIRE(triplet_loss(za, zp, zn, 2, 0.5) == Catch::Approx(0.43));

    // inactive region: loss 0 and all gradients 0
    double gza[2], gzp[2], gzn[2];
    zp[0] = 0.0;
    zn[0] = 2.0;
    const double l = triplet_loss(za, zp, zn, 2, 0.5, gza, gzp, gzn);
    REQUIRE(l == 0.0);
    for (int i = 0; i < 2; ++i) {
        REQUIRE(gza[i] == 0.0);
        REQUIRE(gzp[i] == 0.0);
        REQUIRE(gzn[i] == 0.0);
    }
}

TEST_CASE("head isolation: other heads receive zero gradient") {
    DecoderSpec spec;
    spec.z_dim = 8;
    spec.n_tasks = 2;
    spec.hidden = 8;
    spec.n_heads = 3;
    Decoder<float> dec(spec, Rng(61));
    auto ws = dec.make_ws();
    Rng rng(62);
    std::vector<float> z(8);
    for (auto& v : z) v = static_cast<float>(rng.normal());

    // route only through head 1
    dec.forward(ws, z.data(), 0, 1);
    std::vector<float> da(7, 0.3f);
    std::vector<float> dz(8);
    dec.backward(ws, 1, da.data(), dz.data());

    bool trunk_nonzero = false;
    for (auto& b : dec.params()) {
        double s = 0;
        for (float g : *b.grad) s += std::fabs(g);
        if (b.name.find("head0") != std::string::npos ||
            b.name.find("head2") != std::string::npos) {
            REQUIRE(s == 0.0);
        }
        if (b.name.find("trunk") != std::string::npos && s > 0) trunk_nonzero = true;
    }
    REQUIRE(trunk_nonzero);
}

TEST_CASE("checkpoint round trip and error kinds") {
    Encoder<float> enc(gradcheck::mini_encoder_spec(), Rng(71));
    const fs::path path = fs::temp_directory_path() / "polybot_ckpt_test.bin";
    fs::remove(path);
    nn::save_params(path, enc.params());

    Encoder<float> enc2(gradcheck::mini_encoder_spec(), Rng(999));
    nn::load_params(path, enc2.params());
    auto b1 = enc.params();
    auto b2 = enc2.params();
    for (std::size_t k = 0; k < b1.size(); ++k)
        for (std::size_t i = 0; i < b1[k].data->size(); ++i)
            REQUIRE((*b1[k].data)[i] == (*b2[k].data)[i]);

    // corrupt a byte
    {
        std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(40);
        f.put('\x7f');
    }
    REQUIRE_THROWS_AS(nn::load_params(path, enc2.params()), ChecksumError);

    // wrong shape
    fs::remove(path);
    nn::save_params(path, enc.params());
    Encoder<float> enc3(EncoderSpec{}, Rng(7));
    REQUIRE_THROWS_AS(nn::load_params(path, enc3.params()), FormatError);
}
