#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "sfcp/diffcomp/checkpoint.hpp"
#include "sfcp/diffcomp/layers.hpp"

using namespace sfcp;
using namespace sfcp::dc;

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

void zero(Linear& l) {
    l.w.value.setZero();
    l.b.value.setZero();
}

}  // namespace

TEST_CASE("softmax examples") {
    Mat x(1, 3);
    x << 0, 0, 0;
    Mat y = softmax_rows(x);
    for (int j = 0; j < 3; ++j) CHECK(y(0, j) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    Mat big(1, 2);
    big << 1000, 0;
    Mat yb = softmax_rows(big);
    CHECK(std::isfinite(yb(0, 0)));
    CHECK(yb(0, 0) == doctest::Approx(1.0));
    CHECK(yb(0, 1) < 1e-300);
}

TEST_CASE("softmax matches an extended-precision reference") {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 20; ++t) {
        Mat x = random_mat(1, 8, rng, 3.0);
        Mat y = softmax_rows(x);
        long double z = 0;
        for (int j = 0; j < 8; ++j) z += std::exp(static_cast<long double>(x(0, j)));
        double s = 0.0;
        for (int j = 0; j < 8; ++j) {
            const auto ref = static_cast<double>(std::exp(static_cast<long double>(x(0, j))) / z);
            CHECK(y(0, j) == doctest::Approx(ref).epsilon(1e-13));
            CHECK(y(0, j) > 0.0);
            s += y(0, j);
        }
        CHECK(std::abs(s - 1.0) < 1e-9);
    }
}

TEST_CASE("layer norm examples and statistics") {
    Mat g = Mat::Ones(1, 3), b = Mat::Zero(1, 3);
    Mat c(1, 3);
    c << 4, 4, 4;
    CHECK(layer_norm_rows(c, g, b).cwiseAbs().maxCoeff() == 0.0);
    Mat x(1, 3);
    x << 1, 2, 3;
    Mat y = layer_norm_rows(x, g, b);
    CHECK(y(0, 0) == doctest::Approx(-1.2247).epsilon(1e-4));
    CHECK(y(0, 1) == doctest::Approx(0.0));
    CHECK(y(0, 2) == doctest::Approx(1.2247).epsilon(1e-4));

    std::mt19937_64 rng(2);
    Mat r = random_mat(1, 64, rng, 5.0);
    Mat gain = Mat::Constant(1, 64, 1.7), bias = Mat::Constant(1, 64, -0.3);
    Mat out = layer_norm_rows(r, gain, bias);
    const double mean = out.mean();
    const double var = (out.array() - mean).square().mean();
    CHECK(std::abs(mean + 0.3) < 1e-6);
    CHECK(std::abs(var - 1.7 * 1.7) < 1e-3);  // eps in the denominator shifts variance slightly
    CHECK(out.isApprox(oracle::naive_layer_norm(r, gain, bias), 1e-12));
}

TEST_CASE("gelu values and asymptotes") {
    Mat x(1, 4);
    x << 0.0, 1.0, 30.0, -30.0;
    Mat y = gelu(x);
    CHECK(y(0, 0) == 0.0);
    CHECK(y(0, 1) == doctest::Approx(0.8412).epsilon(1e-4));
    CHECK(y(0, 2) == doctest::Approx(30.0));
    CHECK(std::abs(y(0, 3)) < 1e-12);
    Mat sweep(1, 401);
    for (int i = 0; i <= 400; ++i) sweep(0, i) = -0.7 + 0.01 * i;
    Mat gs = gelu(sweep);
    for (int i = 1; i <= 400; ++i) CHECK(gs(0, i) > gs(0, i - 1));
}

TEST_CASE("sinusoidal positional table") {
    Mat pe = sinusoidal_pe(4, 8);
    for (int j = 0; j < 8; j += 2) {
        CHECK(pe(0, j) == 0.0);
        CHECK(pe(0, j + 1) == 1.0);
    }
    CHECK(pe.cwiseAbs().maxCoeff() <= 1.0);
    CHECK(pe.isApprox(oracle::naive_pe(4, 8), 1e-14));
    CHECK_THROWS_AS(sinusoidal_pe(3, 7), UsageError);
}

TEST_CASE("attention on one token returns the output projection of its value") {
    Rng rng(3);
    MultiHeadAttention mha("a", 8, 2, rng);
    std::mt19937_64 g(4);
    Mat x = random_mat(1, 8, g);
    Tape t(false);
    Mat out = mha(t, t.constant(x), SeqLayout::single(1)).value();
    Mat expect = oracle::naive_linear(oracle::naive_linear(x, mha.wv), mha.wo);
    CHECK(out.isApprox(expect, 1e-12));
}

TEST_CASE("identical tokens produce identical attention rows") {
    Rng rng(5);
    MultiHeadAttention mha("a", 8, 4, rng);
    std::mt19937_64 g(6);
    Mat row = random_mat(1, 8, g);
    Mat x(3, 8);
    x << row, row, row;
    Tape t(false);
    Mat out = mha(t, t.constant(x), SeqLayout::single(3)).value();
    CHECK(out.row(0).isApprox(out.row(1), 1e-14));
    CHECK(out.row(1).isApprox(out.row(2), 1e-14));
}

TEST_CASE("fused attention equals the dense-loop oracle") {
    std::mt19937_64 g(7);
    for (std::size_t heads : {1u, 2u, 4u}) {
        Mat q = random_mat(3, 8, g), k = random_mat(3, 8, g), v = random_mat(3, 8, g);
        Tape t(false);
        Mat out = attention(t.constant(q), t.constant(k), t.constant(v), SeqLayout::single(3), heads).value();
        CHECK(out.isApprox(oracle::naive_attention(q, k, v, heads), 1e-12));
    }
}

TEST_CASE("attention weights sum to one over unmasked columns") {
    std::mt19937_64 g(8);
    auto layout = SeqLayout::padded({2, 4}, 5);
    Mat q = random_mat(10, 8, g), k = random_mat(10, 8, g);
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t h = 0; h < 2; ++h) {
            Mat w = attention_weights(q, k, layout, s, h, 2);
            const std::size_t valid = s == 0 ? 2 : 4;
            for (std::size_t i = 0; i < valid; ++i) {
                CHECK(w.row(static_cast<Eigen::Index>(i)).sum() == doctest::Approx(1.0).epsilon(1e-12));
                for (std::size_t j = valid; j < 5; ++j) CHECK(w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) == 0.0);
            }
        }
}

TEST_CASE("attention shape errors") {
    Tape t;
    Var a = t.constant(Mat::Zero(3, 8)), b = t.constant(Mat::Zero(3, 6));
    CHECK_THROWS_AS(attention(a, b, a, SeqLayout::single(3), 2), UsageError);
    CHECK_THROWS_AS(attention(a, a, a, SeqLayout::single(3), 3), UsageError);
    CHECK_THROWS_AS(attention(a, a, a, SeqLayout::single(4), 2), UsageError);
    Rng rng(1);
    CHECK_THROWS_AS(MultiHeadAttention("x", 8, 3, rng), UsageError);
}

TEST_CASE("pre-norm layer with zeroed sublayers is the identity") {
    Rng rng(9);
    EncoderLayer l("l", 8, 2, 16, NormPlacement::Pre, rng);
    zero(l.attn.wo);
    zero(l.fc2);
    std::mt19937_64 g(10);
    Mat x = random_mat(4, 8, g);
    Tape t(false);
    CHECK(l(t, t.constant(x), SeqLayout::single(4)).value().isApprox(x, 1e-15));
}

TEST_CASE("pre- and post-norm layers differ and match the composed oracle") {
    std::mt19937_64 g(11);
    Mat x = random_mat(5, 16, g);
    Rng r1(12), r2(12);
    EncoderLayer pre("l", 16, 2, 32, NormPlacement::Pre, r1);
    EncoderLayer post("l", 16, 2, 32, NormPlacement::Post, r2);
    Tape t(false);
    Mat a = pre(t, t.constant(x), SeqLayout::single(5)).value();
    Mat b = post(t, t.constant(x), SeqLayout::single(5)).value();
    CHECK(!a.isApprox(b, 1e-3));
    CHECK(a.isApprox(oracle::naive_encoder_layer(x, pre), 1e-11));
    CHECK(b.isApprox(oracle::naive_encoder_layer(x, post), 1e-11));
}

TEST_CASE("encoder equals projection plus positions plus composed layers") {
    Rng rng(13);
    Encoder enc("e", 7, EncoderShape{16, 2, 32, 3}, NormPlacement::Pre, rng);
    std::mt19937_64 g(14);
    Mat x = random_mat(6, 7, g);
    Tape t(false);
    Mat out = enc(t, t.constant(x), SeqLayout::single(6)).value();
    CHECK(out.rows() == 6);
    CHECK(out.cols() == 16);
    CHECK(out.isApprox(oracle::naive_encoder(x, enc), 1e-11));
}

TEST_CASE("mean pool") {
    Tape t;
    Mat one(1, 2);
    one << 3, -1;
    CHECK(mean_pool(t.constant(one), SeqLayout::single(1)).value() == one);
    Mat two(2, 1);
    two << 1, 3;
    CHECK(mean_pool(t.constant(two), SeqLayout::single(2)).value()(0, 0) == 2.0);
    SeqLayout empty = SeqLayout::padded({0}, 2);
    CHECK_THROWS_AS(mean_pool(t.constant(two), empty), UsageError);
}

TEST_CASE("padding never changes valid outputs, pooled vectors, or parameter gradients") {
    Rng rng(15);
    Encoder enc("e", 5, EncoderShape{8, 2, 16, 2}, NormPlacement::Pre, rng);
    ParamList ps;
    enc.collect(ps);
    std::mt19937_64 g(16);
    Mat a = random_mat(3, 5, g), b = random_mat(2, 5, g);

    auto run = [&](const Mat& x, const SeqLayout& layout) {
        zero_grads(ps);
        Tape t;
        Var h = enc(t, t.constant(x), layout);
        Var pooled = mean_pool(h, layout);
        t.backward(sum(pooled));
        std::vector<Mat> grads;
        for (Param* p : ps) grads.push_back(p->grad);
        return std::make_pair(pooled.value(), grads);
    };

    Mat packed(5, 5);
    packed << a, b;
    auto [pk, gk] = run(packed, SeqLayout::packed({3, 2}));
    Mat padded = Mat::Zero(8, 5);
    padded.topRows(3) = a;
    padded.block(4, 0, 2, 5) = b;
    padded.row(3).setConstant(9.0);  // garbage in padding rows
    padded.row(6).setConstant(-4.0);
    auto [pd, gd] = run(padded, SeqLayout::padded({3, 2}, 4));
    CHECK(pk.isApprox(pd, 1e-12));
    for (std::size_t i = 0; i < gk.size(); ++i) CHECK(gk[i].isApprox(gd[i], 1e-10));

    Tape t(false);
    Mat alone = enc(t, t.constant(a), SeqLayout::single(3)).value();
    Mat in_batch = enc(t, t.constant(padded), SeqLayout::padded({3, 2}, 4)).value();
    CHECK(alone.isApprox(in_batch.topRows(3), 1e-12));
    CHECK(in_batch.row(3).isZero(0.0));
}

TEST_CASE("backward examples") {
    Param w("w", Mat::Constant(1, 1, 3.0));
    Tape t;
    Var v = t.param(w);
    t.backward(sum(matmul(v, v)));
    CHECK(w.grad(0, 0) == doctest::Approx(6.0));

    Tape t2;
    Var x = t2.input(Mat::Random(2, 5));
    t2.backward(sum(softmax(x)));
    CHECK(x.grad().cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("backward misuse is a usage error") {
    Tape t;
    CHECK_THROWS_AS(t.backward(Var{}), UsageError);
    Var x = t.input(Mat::Ones(2, 2));
    CHECK_THROWS_AS(t.backward(x), UsageError);
    Var s = sum(x);
    t.backward(s);
    CHECK_THROWS_AS(t.backward(s), UsageError);
    Tape off(false);
    Var y = off.input(Mat::Ones(1, 1));
    CHECK_THROWS_AS(off.backward(y), UsageError);
}

TEST_CASE("every primitive passes a finite-difference check") {
    std::mt19937_64 g(17);
    Param a("a", random_mat(3, 4, g)), b("b", random_mat(4, 4, g)), bias("bias", random_mat(1, 4, g));
    Param gain("gain", random_mat(1, 4, g)), shift("shift", random_mat(1, 4, g)), extra("extra", random_mat(3, 2, g));
    ParamList ps{&a, &b, &bias, &gain, &shift, &extra};
    const Mat target = random_mat(3, 1, g);
    const Mat labels = (random_mat(3, 1, g).array() > 0).cast<double>();
    const std::vector<std::size_t> picks{0, 3, 2};
    const auto layout = SeqLayout::packed({1, 2});

    auto forward = [&](Tape& t) {
        Var x = affine(t.param(a), t.param(b), t.param(bias));
        x = layer_norm(gelu(x), t.param(gain), t.param(shift));
        Var att = attention(x, scale(x, 0.7), sub(x, t.constant(Mat::Constant(3, 4, 0.1))), layout, 2);
        Var y = add(softmax(att), sigmoid(x));
        Var wide = concat_cols(y, t.param(extra));
        Var pooled = mean_pool(mask_rows(wide, layout), layout);
        Var chosen = pick(y, picks);
        return add(add(mean(pooled), mse(chosen, target)), bce_with_logits(chosen, labels));
    };
    auto loss = [&] {
        Tape t(false);
        return forward(t).value()(0, 0);
    };
    zero_grads(ps);
    Tape t;
    t.backward(forward(t));
    // small step: this composite is curved enough that h = 1e-4 truncation reaches 2e-5
    auto res = oracle::finite_difference_check(ps, loss, 1000, g, 1e-5);
    CHECK(res.checked == 12 + 16 + 4 + 4 + 4 + 6);
    CHECK(res.worst < 1e-6);
}

TEST_CASE("freeze guard keeps parameters out of the sweep but passes input gradients") {
    Param w("w", Mat::Constant(2, 1, 2.0));
    Tape t;
    Var x = t.input(Mat::Ones(1, 2));
    Var wv;
    {
        Tape::FreezeGuard freeze(t);
        wv = t.param(w);
    }
    w.grad.setZero();
    t.backward(sum(matmul(x, wv)));
    CHECK(w.grad.isZero(0.0));
    CHECK(x.grad()(0, 0) == 2.0);
}

TEST_CASE("adamw examples") {
    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.0;
    Mat w = Mat::Constant(1, 1, 1.0);
    AdamMoments mo;
    adamw_step(w, Mat::Zero(1, 1), mo, 1, cfg);
    CHECK(w(0, 0) == 1.0);

    AdamMoments mo2;
    adamw_step(w, Mat::Ones(1, 1), mo2, 1, cfg);
    CHECK(w(0, 0) == doctest::Approx(0.9).epsilon(1e-6));

    cfg.weight_decay = 0.5;
    Mat s = Mat::Constant(2, 2, 4.0);
    AdamMoments mo3;
    adamw_step(s, Mat::Zero(2, 2), mo3, 1, cfg);
    CHECK(s(1, 1) == doctest::Approx(4.0 * (1.0 - 0.1 * 0.5)));

    AdamMoments bad{Mat::Zero(3, 3), Mat::Zero(3, 3)};
    CHECK_THROWS_AS(adamw_step(s, Mat::Zero(2, 2), bad, 1, cfg), UsageError);
    CHECK_THROWS_AS(adamw_step(s, Mat::Zero(1, 2), mo3, 2, cfg), UsageError);
}

TEST_CASE("polyak averaging is exact and tau one copies") {
    std::mt19937_64 g(18);
    Param on("p", random_mat(3, 3, g)), tg("p", random_mat(3, 3, g));
    const Mat old = tg.value;
    polyak_update({&tg}, {&on}, 1e-3);
    CHECK((tg.value - (1e-3 * on.value + (1.0 - 1e-3) * old)).cwiseAbs().maxCoeff() < 1e-15);
    polyak_update({&tg}, {&on}, 1.0);
    CHECK(tg.value == on.value);
}

TEST_CASE("checkpoint round trip is exact") {
    Rng rng(19);
    Encoder enc("e", 5, EncoderShape{8, 2, 16, 2}, NormPlacement::Pre, rng);
    ParamList ps;
    enc.collect(ps);
    const auto path = std::filesystem::temp_directory_path() / "sfcp_ckpt_test.json";
    save_checkpoint(path, ps, {{"note", 7}});
    Rng other(20);
    Encoder fresh("e", 5, EncoderShape{8, 2, 16, 2}, NormPlacement::Pre, other);
    ParamList qs;
    fresh.collect(qs);
    auto extra = load_checkpoint(path, qs);
    CHECK(extra["note"] == 7);
    for (std::size_t i = 0; i < ps.size(); ++i) CHECK(ps[i]->value == qs[i]->value);

    Rng third(21);
    Encoder wrong("e", 6, EncoderShape{8, 2, 16, 2}, NormPlacement::Pre, third);
    ParamList ws;
    wrong.collect(ws);
    CHECK_THROWS_AS(load_checkpoint(path, ws), GenerationError);
    std::filesystem::remove(path);
}
