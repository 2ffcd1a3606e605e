#include "sfcp/diffcomp/layers.hpp"

#include <cmath>
#include <random>

namespace sfcp::dc {

namespace {

Mat uniform(Eigen::Index r, Eigen::Index c, double bound, Rng& rng) {
    std::uniform_real_distribution<double> u(-bound, bound);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

void check_pairing(const ParamList& a, const ParamList& b) {
    if (a.size() != b.size()) throw UsageError("parameter lists differ in length");
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i]->value.rows() != b[i]->value.rows() || a[i]->value.cols() != b[i]->value.cols())
            throw UsageError("parameter shape mismatch: " + a[i]->name);
}

}  // namespace

Linear::Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool bias) : has_bias(bias) {
    if (in == 0 || out == 0) throw UsageError("linear layer needs positive sizes");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    const auto i = static_cast<Eigen::Index>(in), o = static_cast<Eigen::Index>(out);
    w = Param(name + ".w", uniform(i, o, bound, rng));
    b = Param(name + ".b", bias ? uniform(1, o, bound, rng) : Mat::Zero(1, o));
}

Var Linear::operator()(Tape& t, Var x) {
    if (x.cols() != w.value.rows()) throw UsageError("linear input width mismatch for " + w.name);
    if (!has_bias) return matmul(x, t.param(w));
    return affine(x, t.param(w), t.param(b));
}

void Linear::collect(ParamList& out) {
    out.push_back(&w);
    if (has_bias) out.push_back(&b);
}

LayerNorm::LayerNorm(const std::string& name, std::size_t d)
    : gain(name + ".gain", Mat::Ones(1, static_cast<Eigen::Index>(d))),
      bias(name + ".bias", Mat::Zero(1, static_cast<Eigen::Index>(d))) {}

Var LayerNorm::operator()(Tape& t, Var x) { return layer_norm(x, t.param(gain), t.param(bias)); }

void LayerNorm::collect(ParamList& out) {
    out.push_back(&gain);
    out.push_back(&bias);
}

MultiHeadAttention::MultiHeadAttention(const std::string& name, std::size_t d, std::size_t h, Rng& rng)
    : wq(name + ".q", d, d, rng, false),
      wk(name + ".k", d, d, rng, false),
      wv(name + ".v", d, d, rng, false),
      wo(name + ".o", d, d, rng),
      heads(h) {
    if (h == 0 || d % h != 0) throw UsageError("model width must be divisible by the head count");
}

Var MultiHeadAttention::operator()(Tape& t, Var x, const SeqLayout& layout) {
    Var q = wq(t, x), k = wk(t, x), v = wv(t, x);
    Var ctx = attention(q, k, v, layout, heads);
    return mask_rows(wo(t, ctx), layout);
}

void MultiHeadAttention::collect(ParamList& out) {
    wq.collect(out);
    wk.collect(out);
    wv.collect(out);
    wo.collect(out);
}

EncoderLayer::EncoderLayer(const std::string& name, std::size_t d, std::size_t heads, std::size_t mlp,
                           NormPlacement n, Rng& rng)
    : ln1(name + ".ln1", d),
      ln2(name + ".ln2", d),
      attn(name + ".attn", d, heads, rng),
      fc1(name + ".fc1", d, mlp, rng),
      fc2(name + ".fc2", mlp, d, rng),
      norm(n) {}

Var EncoderLayer::operator()(Tape& t, Var x, const SeqLayout& layout) {
    if (norm == NormPlacement::Pre) {
        Var h = add(x, attn(t, ln1(t, x), layout));
        return add(h, mask_rows(fc2(t, gelu(fc1(t, ln2(t, h)))), layout));
    }
    Var h = ln1(t, add(x, attn(t, x, layout)));
    return ln2(t, add(h, mask_rows(fc2(t, gelu(fc1(t, h))), layout)));
}

void EncoderLayer::collect(ParamList& out) {
    ln1.collect(out);
    attn.collect(out);
    ln2.collect(out);
    fc1.collect(out);
    fc2.collect(out);
}

Encoder::Encoder(const std::string& name, std::size_t d_in, const EncoderShape& s, NormPlacement norm, Rng& rng)
    : proj(name + ".proj", d_in, s.d_model, rng), shape(s) {
    for (std::size_t i = 0; i < s.layers; ++i)
        layers.emplace_back(name + ".layer" + std::to_string(i), s.d_model, s.heads, s.mlp, norm, rng);
}

Var Encoder::operator()(Tape& t, Var x, const SeqLayout& layout) {
    Var h = add(proj(t, x), t.constant(positional_rows(layout, shape.d_model)));
    for (auto& l : layers) h = l(t, h, layout);
    return mask_rows(h, layout);
}

void Encoder::collect(ParamList& out) {
    proj.collect(out);
    for (auto& l : layers) l.collect(out);
}

void zero_grads(const ParamList& ps) {
    for (Param* p : ps) p->zero_grad();
}

void polyak_update(const ParamList& target, const ParamList& online, double tau) {
    check_pairing(target, online);
    for (std::size_t i = 0; i < target.size(); ++i)
        target[i]->value = tau * online[i]->value + (1.0 - tau) * target[i]->value;
}

void copy_params(const ParamList& target, const ParamList& source) {
    check_pairing(target, source);
    for (std::size_t i = 0; i < target.size(); ++i) target[i]->value = source[i]->value;
}

std::size_t param_count(const ParamList& ps) {
    std::size_t n = 0;
    for (const Param* p : ps) n += static_cast<std::size_t>(p->value.size());
    return n;
}

void adamw_step(Mat& value, const Mat& grad, AdamMoments& mo, long t, const AdamWConfig& cfg) {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) throw UsageError("gradient shape mismatch");
    if (mo.m.size() == 0) mo.m = Mat::Zero(value.rows(), value.cols());
    if (mo.v.size() == 0) mo.v = Mat::Zero(value.rows(), value.cols());
    if (mo.m.rows() != value.rows() || mo.m.cols() != value.cols() || mo.v.rows() != value.rows() ||
        mo.v.cols() != value.cols())
        throw UsageError("moment shape mismatch");
    if (t < 1) throw UsageError("adam step count starts at 1");
    mo.m = cfg.beta1 * mo.m + (1.0 - cfg.beta1) * grad;
    mo.v = cfg.beta2 * mo.v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    value *= 1.0 - cfg.lr * cfg.weight_decay;
    value.array() -= cfg.lr * (mo.m.array() / c1) / ((mo.v.array() / c2).sqrt() + cfg.eps);
}

AdamW::AdamW(ParamList params, AdamWConfig cfg) : params_(std::move(params)), moments_(params_.size()), cfg_(cfg) {}

void AdamW::step() {
    ++t_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Param& p = *params_[i];
        if (p.grad.size() == 0) p.zero_grad();
        adamw_step(p.value, p.grad, moments_[i], t_, cfg_);
    }
}

}  // namespace sfcp::dc
