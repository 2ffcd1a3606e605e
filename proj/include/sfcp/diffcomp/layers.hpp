#pragma once

#include <string>
#include <vector>

#include "sfcp/diffcomp/ops.hpp"
#include "sfcp/random.hpp"

namespace sfcp::dc {

using ParamList = std::vector<Param*>;

/// y = x W + b, W in x out. Weights and bias start U(-1/sqrt(in), 1/sqrt(in)).
struct Linear {
    Linear() = default;
    Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool bias = true);

    Param w;
    Param b;
    bool has_bias = true;

    std::size_t in() const { return static_cast<std::size_t>(w.value.rows()); }
    std::size_t out() const { return static_cast<std::size_t>(w.value.cols()); }
    Var operator()(Tape& t, Var x);
    void collect(ParamList& out);
};

struct LayerNorm {
    LayerNorm() = default;
    LayerNorm(const std::string& name, std::size_t d);

    Param gain;
    Param bias;

    Var operator()(Tape& t, Var x);
    void collect(ParamList& out);
};

/// Per-head Q/K/V projections are stored side by side in d x d matrices
/// (head h owns columns [h*d_k, (h+1)*d_k)). No bias on Q/K/V; the output
/// projection has one.
struct MultiHeadAttention {
    MultiHeadAttention() = default;
    MultiHeadAttention(const std::string& name, std::size_t d, std::size_t heads, Rng& rng);

    Linear wq, wk, wv, wo;
    std::size_t heads = 1;

    Var operator()(Tape& t, Var x, const SeqLayout& layout);
    void collect(ParamList& out);
};

enum class NormPlacement { Pre, Post };

struct EncoderLayer {
    EncoderLayer() = default;
    EncoderLayer(const std::string& name, std::size_t d, std::size_t heads, std::size_t mlp, NormPlacement norm,
                 Rng& rng);

    LayerNorm ln1, ln2;
    MultiHeadAttention attn;
    Linear fc1, fc2;
    NormPlacement norm = NormPlacement::Pre;

    Var operator()(Tape& t, Var x, const SeqLayout& layout);
    void collect(ParamList& out);
};

struct EncoderShape {
    std::size_t d_model = 128;
    std::size_t heads = 8;
    std::size_t mlp = 512;
    std::size_t layers = 3;
};

/// Input projection, sinusoidal positions added after projection, then a
/// stack of encoder layers. Padding rows are zeroed on the way out.
struct Encoder {
    Encoder() = default;
    Encoder(const std::string& name, std::size_t d_in, const EncoderShape& shape, NormPlacement norm, Rng& rng);

    Linear proj;
    std::vector<EncoderLayer> layers;
    EncoderShape shape;

    Var operator()(Tape& t, Var x, const SeqLayout& layout);
    void collect(ParamList& out);
};

// Parameter set helpers.

void zero_grads(const ParamList& ps);
/// target <- tau * online + (1 - tau) * target, elementwise.
void polyak_update(const ParamList& target, const ParamList& online, double tau);
void copy_params(const ParamList& target, const ParamList& source);
std::size_t param_count(const ParamList& ps);

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// Moment state for one parameter.
struct AdamMoments {
    Mat m;
    Mat v;
};

/// One decoupled-weight-decay Adam update of `value` with bias correction at
/// step `t` (1-based).
void adamw_step(Mat& value, const Mat& grad, AdamMoments& moments, long t, const AdamWConfig& cfg);

class AdamW {
public:
    AdamW() = default;
    AdamW(ParamList params, AdamWConfig cfg);

    void step();
    long steps() const { return t_; }
    const AdamWConfig& config() const { return cfg_; }
    AdamWConfig& config() { return cfg_; }
    const std::vector<AdamMoments>& moments() const { return moments_; }
    std::vector<AdamMoments>& moments() { return moments_; }
    void set_steps(long t) { t_ = t; }

private:
    ParamList params_;
    std::vector<AdamMoments> moments_;
    AdamWConfig cfg_;
    long t_ = 0;
};

}  // namespace sfcp::dc
