#include "sfcp/diffcomp/ops.hpp"

#include <cmath>
#include <memory>
#include <numbers>

namespace sfcp::dc {

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

Tape& same_tape(Var a, Var b) {
    if (!a.valid() || a.tape() != b.tape()) throw UsageError("operands must live on the same tape");
    return *a.tape();
}

Tape& tape_of(Var a) {
    if (!a.valid()) throw UsageError("operand is not bound to a tape");
    return *a.tape();
}

// tanh(c * (x + a x^3)) through the vectorized exp; absolute error ~1e-16,
// which is all gelu needs since it uses 1 + tanh.
Mat gelu_tanh(const Mat& x) {
    Mat u = (kGeluC * (x.array() + kGeluA * x.array().cube())).matrix();
    u = (2.0 * u.array()).min(700.0).exp().matrix();
    return (1.0 - 2.0 / (u.array() + 1.0)).matrix();
}

void require_same_shape(const Mat& a, const Mat& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw UsageError(what);
}

}  // namespace

std::vector<std::size_t> SeqLayout::positions() const {
    std::vector<std::size_t> pos(rows(), 0);
    for (std::size_t s = 0; s < offsets.size(); ++s)
        for (std::size_t i = 0; i < lengths[s]; ++i) pos[offsets[s] + i] = i;
    return pos;
}

SeqLayout SeqLayout::single(std::size_t n) { return packed({n}); }

SeqLayout SeqLayout::packed(const std::vector<std::size_t>& lengths) {
    SeqLayout l;
    std::size_t off = 0;
    for (std::size_t n : lengths) {
        l.offsets.push_back(off);
        l.lengths.push_back(n);
        off += n;
    }
    l.valid.assign(off, 1);
    return l;
}

SeqLayout SeqLayout::padded(const std::vector<std::size_t>& lengths, std::size_t pad_to) {
    SeqLayout l;
    for (std::size_t s = 0; s < lengths.size(); ++s) {
        if (lengths[s] > pad_to) throw UsageError("sequence longer than pad length");
        l.offsets.push_back(s * pad_to);
        l.lengths.push_back(pad_to);
        for (std::size_t i = 0; i < pad_to; ++i) l.valid.push_back(i < lengths[s] ? 1 : 0);
    }
    return l;
}

Mat softmax_rows(const Mat& x) {
    Mat y(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double mx = x.row(i).maxCoeff();
        y.row(i) = (x.row(i).array() - mx).exp();
        y.row(i) /= y.row(i).sum();
    }
    return y;
}

Mat gelu(const Mat& x) { return (0.5 * x.array() * (1.0 + gelu_tanh(x).array())).matrix(); }

Mat layer_norm_rows(const Mat& x, const Mat& gain, const Mat& bias, double eps) {
    if (gain.cols() != x.cols() || bias.cols() != x.cols()) throw UsageError("layer norm gain/bias width mismatch");
    Mat y(x.rows(), x.cols());
    const double d = static_cast<double>(x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double mu = x.row(i).sum() / d;
        const double var = (x.row(i).array() - mu).square().sum() / d;
        const double inv = 1.0 / std::sqrt(var + eps);
        y.row(i) = ((x.row(i).array() - mu) * inv * gain.row(0).array() + bias.row(0).array()).matrix();
    }
    return y;
}

Mat sinusoidal_pe(std::size_t n, std::size_t d) {
    if (d % 2 != 0) throw UsageError("positional encoding width must be even");
    Mat pe(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (std::size_t pos = 0; pos < n; ++pos) {
        for (std::size_t i = 0; i < d; i += 2) {
            const double angle =
                static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
            pe(static_cast<Eigen::Index>(pos), static_cast<Eigen::Index>(i)) = std::sin(angle);
            pe(static_cast<Eigen::Index>(pos), static_cast<Eigen::Index>(i + 1)) = std::cos(angle);
        }
    }
    return pe;
}

Mat positional_rows(const SeqLayout& layout, std::size_t d) {
    const auto pos = layout.positions();
    std::size_t longest = 0;
    for (std::size_t p : pos) longest = std::max(longest, p + 1);
    const Mat table = sinusoidal_pe(longest, d);
    Mat out(static_cast<Eigen::Index>(pos.size()), static_cast<Eigen::Index>(d));
    for (std::size_t r = 0; r < pos.size(); ++r)
        out.row(static_cast<Eigen::Index>(r)) = table.row(static_cast<Eigen::Index>(pos[r]));
    return out;
}

Var matmul(Var a, Var b) {
    Tape& t = same_tape(a, b);
    if (a.cols() != b.rows()) throw UsageError("matmul inner dimensions differ");
    Mat out = a.value() * b.value();
    const auto ia = a.id(), ib = b.id();
    return t.push(std::move(out), a.needs_grad() || b.needs_grad(), [ia, ib](Tape& tp, const Mat& g) {
        if (tp.needs_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
        if (tp.needs_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
    });
}

Var affine(Var x, Var w, Var b) {
    Tape& t = same_tape(x, w);
    if (b.tape() != &t) throw UsageError("operands must live on the same tape");
    if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) throw UsageError("affine shape mismatch");
    Mat out(x.rows(), w.cols());
    out.noalias() = x.value() * w.value();
    out.rowwise() += b.value().row(0);
    const auto ix = x.id(), iw = w.id(), ib = b.id();
    const bool ng = x.needs_grad() || w.needs_grad() || b.needs_grad();
    return t.push(std::move(out), ng, [ix, iw, ib](Tape& tp, const Mat& g) {
        if (tp.needs_grad(ix)) tp.accumulate(ix, g * tp.value(iw).transpose());
        if (tp.needs_grad(iw)) tp.accumulate(iw, tp.value(ix).transpose() * g);
        if (tp.needs_grad(ib)) tp.accumulate(ib, g.colwise().sum());
    });
}

Var add(Var a, Var b) {
    Tape& t = same_tape(a, b);
    require_same_shape(a.value(), b.value(), "add shape mismatch");
    Mat out = a.value() + b.value();
    const auto ia = a.id(), ib = b.id();
    return t.push(std::move(out), a.needs_grad() || b.needs_grad(), [ia, ib](Tape& tp, const Mat& g) {
        tp.accumulate(ia, g);
        tp.accumulate(ib, g);
    });
}

Var sub(Var a, Var b) {
    Tape& t = same_tape(a, b);
    require_same_shape(a.value(), b.value(), "sub shape mismatch");
    Mat out = a.value() - b.value();
    const auto ia = a.id(), ib = b.id();
    return t.push(std::move(out), a.needs_grad() || b.needs_grad(), [ia, ib](Tape& tp, const Mat& g) {
        tp.accumulate(ia, g);
        tp.accumulate(ib, -g);
    });
}

Var scale(Var a, double s) {
    Tape& t = tape_of(a);
    Mat out = a.value() * s;
    const auto ia = a.id();
    return t.push(std::move(out), a.needs_grad(), [ia, s](Tape& tp, const Mat& g) { tp.accumulate(ia, g * s); });
}

Var gelu(Var x) {
    Tape& t = tape_of(x);
    auto th = std::make_shared<Mat>(gelu_tanh(x.value()));
    Mat out = (0.5 * x.value().array() * (1.0 + th->array())).matrix();
    const auto ix = x.id();
    return t.push(std::move(out), x.needs_grad(), [ix, th](Tape& tp, const Mat& g) {
        const auto xv = tp.value(ix).array();
        const auto tv = th->array();
        tp.accumulate(ix, (g.array() * (0.5 * (1.0 + tv) + 0.5 * xv * (1.0 - tv.square()) * kGeluC *
                                                             (1.0 + 3.0 * kGeluA * xv.square())))
                              .matrix());
    });
}

Var sigmoid(Var x) {
    Tape& t = tape_of(x);
    Mat out = x.value().unaryExpr([](double v) {
        return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    });
    auto y = std::make_shared<Mat>(out);
    const auto ix = x.id();
    return t.push(std::move(out), x.needs_grad(), [ix, y](Tape& tp, const Mat& g) {
        tp.accumulate(ix, g.cwiseProduct(y->cwiseProduct((1.0 - y->array()).matrix())));
    });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    Tape& t = same_tape(x, gain);
    if (bias.tape() != &t) throw UsageError("operands must live on the same tape");
    const Mat& xv = x.value();
    const Mat& gv = gain.value();
    if (gv.rows() != 1 || gv.cols() != xv.cols() || bias.cols() != xv.cols() || bias.rows() != 1)
        throw UsageError("layer norm gain/bias must be 1 x d");
    const Eigen::Index n = xv.rows(), d = xv.cols();
    auto xhat = std::make_shared<Mat>(n, d);
    auto inv = std::make_shared<Eigen::VectorXd>(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mu = xv.row(i).sum() / static_cast<double>(d);
        const double var = (xv.row(i).array() - mu).square().sum() / static_cast<double>(d);
        (*inv)(i) = 1.0 / std::sqrt(var + eps);
        xhat->row(i) = (xv.row(i).array() - mu) * (*inv)(i);
    }
    Mat out = *xhat;
    out.array().rowwise() *= gv.row(0).array();
    out.rowwise() += bias.value().row(0);
    const auto ix = x.id(), ig = gain.id(), ib = bias.id();
    const bool ng = x.needs_grad() || gain.needs_grad() || bias.needs_grad();
    return t.push(std::move(out), ng, [ix, ig, ib, xhat, inv](Tape& tp, const Mat& g) {
        if (tp.needs_grad(ig)) tp.accumulate(ig, g.cwiseProduct(*xhat).colwise().sum());
        if (tp.needs_grad(ib)) tp.accumulate(ib, g.colwise().sum());
        if (tp.needs_grad(ix)) {
            Mat dxhat = g;
            dxhat.array().rowwise() *= tp.value(ig).row(0).array();
            const double dd = static_cast<double>(dxhat.cols());
            Mat dx(dxhat.rows(), dxhat.cols());
            for (Eigen::Index i = 0; i < dxhat.rows(); ++i) {
                const double m1 = dxhat.row(i).sum() / dd;
                const double m2 = dxhat.row(i).dot(xhat->row(i)) / dd;
                dx.row(i) = ((dxhat.row(i).array() - m1 - xhat->row(i).array() * m2) * (*inv)(i)).matrix();
            }
            tp.accumulate(ix, dx);
        }
    });
}

Var softmax(Var x) {
    Tape& t = tape_of(x);
    Mat out = softmax_rows(x.value());
    auto y = std::make_shared<Mat>(out);
    const auto ix = x.id();
    return t.push(std::move(out), x.needs_grad(), [ix, y](Tape& tp, const Mat& g) {
        Mat gy = g.cwiseProduct(*y);
        Eigen::VectorXd dots = gy.rowwise().sum();
        Mat dx = gy;
        for (Eigen::Index i = 0; i < dx.rows(); ++i) dx.row(i) -= dots(i) * y->row(i);
        tp.accumulate(ix, dx);
    });
}

Var concat_cols(Var a, Var b) {
    Tape& t = same_tape(a, b);
    if (a.rows() != b.rows()) throw UsageError("concat_cols needs equal row counts");
    const Eigen::Index ca = a.cols(), cb = b.cols();
    Mat out(a.rows(), ca + cb);
    out.leftCols(ca) = a.value();
    out.rightCols(cb) = b.value();
    const auto ia = a.id(), ib = b.id();
    return t.push(std::move(out), a.needs_grad() || b.needs_grad(), [ia, ib, ca, cb](Tape& tp, const Mat& g) {
        if (tp.needs_grad(ia)) tp.accumulate(ia, g.leftCols(ca));
        if (tp.needs_grad(ib)) tp.accumulate(ib, g.rightCols(cb));
    });
}

Var mask_rows(Var x, const SeqLayout& layout) {
    Tape& t = tape_of(x);
    if (static_cast<std::size_t>(x.rows()) != layout.rows()) throw UsageError("layout rows differ from input rows");
    Mat out = x.value();
    for (std::size_t r = 0; r < layout.rows(); ++r)
        if (!layout.valid[r]) out.row(static_cast<Eigen::Index>(r)).setZero();
    const auto ix = x.id();
    auto valid = layout.valid;
    return t.push(std::move(out), x.needs_grad(), [ix, valid](Tape& tp, const Mat& g) {
        Mat dx = g;
        for (std::size_t r = 0; r < valid.size(); ++r)
            if (!valid[r]) dx.row(static_cast<Eigen::Index>(r)).setZero();
        tp.accumulate(ix, dx);
    });
}

namespace {

// Masked scaled scores -> probabilities for one (sequence, head) block.
Mat block_probs(const Mat& q, const Mat& k, const SeqLayout& layout, std::size_t s, std::size_t h, std::size_t dk) {
    const auto off = static_cast<Eigen::Index>(layout.offsets[s]);
    const auto len = static_cast<Eigen::Index>(layout.lengths[s]);
    const auto col = static_cast<Eigen::Index>(h * dk);
    const auto w = static_cast<Eigen::Index>(dk);
    const double sc = 1.0 / std::sqrt(static_cast<double>(dk));
    Mat p(len, len);
    p.noalias() = q.block(off, col, len, w) * k.block(off, col, len, w).transpose();
    for (Eigen::Index i = 0; i < len; ++i) {
        if (!layout.valid[static_cast<std::size_t>(off + i)]) {
            p.row(i).setZero();
            continue;
        }
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < len; ++j)
            if (layout.valid[static_cast<std::size_t>(off + j)]) mx = std::max(mx, p(i, j) * sc);
        double z = 0.0;
        for (Eigen::Index j = 0; j < len; ++j) {
            if (layout.valid[static_cast<std::size_t>(off + j)]) {
                p(i, j) = std::exp(p(i, j) * sc - mx);
                z += p(i, j);
            } else {
                p(i, j) = 0.0;
            }
        }
        p.row(i) /= z;
    }
    return p;
}

}  // namespace

Mat attention_weights(const Mat& q, const Mat& k, const SeqLayout& layout, std::size_t seq, std::size_t head,
                      std::size_t heads) {
    if (heads == 0 || q.cols() % static_cast<Eigen::Index>(heads) != 0) throw UsageError("bad head count");
    return block_probs(q, k, layout, seq, head, static_cast<std::size_t>(q.cols()) / heads);
}

Var attention(Var q, Var k, Var v, const SeqLayout& layout, std::size_t heads) {
    Tape& t = same_tape(q, k);
    if (v.tape() != &t) throw UsageError("operands must live on the same tape");
    const Mat& Q = q.value();
    const Mat& K = k.value();
    const Mat& V = v.value();
    require_same_shape(Q, K, "attention Q/K shape mismatch");
    require_same_shape(Q, V, "attention Q/V shape mismatch");
    if (heads == 0 || Q.cols() % static_cast<Eigen::Index>(heads) != 0)
        throw UsageError("model width must be divisible by the head count");
    if (static_cast<std::size_t>(Q.rows()) != layout.rows()) throw UsageError("layout rows differ from input rows");
    const std::size_t dk = static_cast<std::size_t>(Q.cols()) / heads;
    const auto w = static_cast<Eigen::Index>(dk);
    const bool ng = q.needs_grad() || k.needs_grad() || v.needs_grad();

    Mat out = Mat::Zero(Q.rows(), Q.cols());
    auto probs = std::make_shared<std::vector<Mat>>();
    if (ng) probs->reserve(layout.sequences() * heads);
    for (std::size_t s = 0; s < layout.sequences(); ++s) {
        const auto off = static_cast<Eigen::Index>(layout.offsets[s]);
        const auto len = static_cast<Eigen::Index>(layout.lengths[s]);
        if (len == 0) continue;
        for (std::size_t h = 0; h < heads; ++h) {
            const auto col = static_cast<Eigen::Index>(h * dk);
            Mat p = block_probs(Q, K, layout, s, h, dk);
            out.block(off, col, len, w).noalias() = p * V.block(off, col, len, w);
            if (ng) probs->push_back(std::move(p));
        }
    }

    const auto iq = q.id(), ik = k.id(), iv = v.id();
    auto lay = std::make_shared<SeqLayout>(layout);
    return t.push(std::move(out), ng, [iq, ik, iv, lay, probs, heads, dk](Tape& tp, const Mat& g) {
        const Mat& Qv = tp.value(iq);
        const Mat& Kv = tp.value(ik);
        const Mat& Vv = tp.value(iv);
        Mat dq = Mat::Zero(Qv.rows(), Qv.cols());
        Mat dk_ = Mat::Zero(Qv.rows(), Qv.cols());
        Mat dv = Mat::Zero(Qv.rows(), Qv.cols());
        const double sc = 1.0 / std::sqrt(static_cast<double>(dk));
        const auto w = static_cast<Eigen::Index>(dk);
        std::size_t idx = 0;
        for (std::size_t s = 0; s < lay->sequences(); ++s) {
            const auto off = static_cast<Eigen::Index>(lay->offsets[s]);
            const auto len = static_cast<Eigen::Index>(lay->lengths[s]);
            if (len == 0) continue;
            for (std::size_t h = 0; h < heads; ++h, ++idx) {
                const Mat& p = (*probs)[idx];
                const auto col = static_cast<Eigen::Index>(h * dk);
                const auto go = g.block(off, col, len, w);
                dv.block(off, col, len, w).noalias() += p.transpose() * go;
                Mat dp = go * Vv.block(off, col, len, w).transpose();
                Mat ds = p.cwiseProduct(dp);
                Eigen::VectorXd rs = ds.rowwise().sum();
                for (Eigen::Index i = 0; i < len; ++i) ds.row(i) -= rs(i) * p.row(i);
                dq.block(off, col, len, w).noalias() += sc * ds * Kv.block(off, col, len, w);
                dk_.block(off, col, len, w).noalias() += sc * ds.transpose() * Qv.block(off, col, len, w);
            }
        }
        tp.accumulate(iq, dq);
        tp.accumulate(ik, dk_);
        tp.accumulate(iv, dv);
    });
}

Var mean_pool(Var x, const SeqLayout& layout) {
    Tape& t = tape_of(x);
    if (static_cast<std::size_t>(x.rows()) != layout.rows()) throw UsageError("layout rows differ from input rows");
    const Mat& xv = x.value();
    const auto nseq = static_cast<Eigen::Index>(layout.sequences());
    Mat out = Mat::Zero(nseq, xv.cols());
    std::vector<double> counts(layout.sequences(), 0.0);
    for (std::size_t s = 0; s < layout.sequences(); ++s) {
        for (std::size_t i = 0; i < layout.lengths[s]; ++i) {
            const std::size_t r = layout.offsets[s] + i;
            if (!layout.valid[r]) continue;
            out.row(static_cast<Eigen::Index>(s)) += xv.row(static_cast<Eigen::Index>(r));
            counts[s] += 1.0;
        }
        if (counts[s] == 0.0) throw UsageError("mean_pool over a sequence with no valid rows");
        out.row(static_cast<Eigen::Index>(s)) /= counts[s];
    }
    const auto ix = x.id();
    auto lay = std::make_shared<SeqLayout>(layout);
    return t.push(std::move(out), x.needs_grad(), [ix, lay, counts](Tape& tp, const Mat& g) {
        const Mat& xv2 = tp.value(ix);
        Mat dx = Mat::Zero(xv2.rows(), xv2.cols());
        for (std::size_t s = 0; s < lay->sequences(); ++s)
            for (std::size_t i = 0; i < lay->lengths[s]; ++i) {
                const std::size_t r = lay->offsets[s] + i;
                if (lay->valid[r])
                    dx.row(static_cast<Eigen::Index>(r)) = g.row(static_cast<Eigen::Index>(s)) / counts[s];
            }
        tp.accumulate(ix, dx);
    });
}

Var pick(Var x, std::span<const std::size_t> index) {
    Tape& t = tape_of(x);
    const Mat& xv = x.value();
    if (static_cast<std::size_t>(xv.rows()) != index.size()) throw UsageError("pick needs one index per row");
    Mat out(xv.rows(), 1);
    for (Eigen::Index i = 0; i < xv.rows(); ++i) {
        if (index[static_cast<std::size_t>(i)] >= static_cast<std::size_t>(xv.cols()))
            throw UsageError("pick index out of range");
        out(i, 0) = xv(i, static_cast<Eigen::Index>(index[static_cast<std::size_t>(i)]));
    }
    const auto ix = x.id();
    std::vector<std::size_t> idx(index.begin(), index.end());
    return t.push(std::move(out), x.needs_grad(), [ix, idx](Tape& tp, const Mat& g) {
        Mat dx = Mat::Zero(tp.value(ix).rows(), tp.value(ix).cols());
        for (std::size_t i = 0; i < idx.size(); ++i)
            dx(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(idx[i])) = g(static_cast<Eigen::Index>(i), 0);
        tp.accumulate(ix, dx);
    });
}

Var sum(Var x) {
    Tape& t = tape_of(x);
    Mat out(1, 1);
    out(0, 0) = x.value().sum();
    const auto ix = x.id();
    return t.push(std::move(out), x.needs_grad(), [ix](Tape& tp, const Mat& g) {
        tp.accumulate(ix, Mat::Constant(tp.value(ix).rows(), tp.value(ix).cols(), g(0, 0)));
    });
}

Var mean(Var x) {
    if (x.value().size() == 0) throw UsageError("mean of an empty matrix");
    return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

Var mse(Var pred, const Mat& target) {
    Tape& t = tape_of(pred);
    require_same_shape(pred.value(), target, "mse target shape mismatch");
    if (target.size() == 0) throw UsageError("mse of an empty batch");
    auto diff = std::make_shared<Mat>(pred.value() - target);
    Mat out(1, 1);
    const double n = static_cast<double>(target.size());
    out(0, 0) = diff->squaredNorm() / n;
    const auto ip = pred.id();
    return t.push(std::move(out), pred.needs_grad(), [ip, diff, n](Tape& tp, const Mat& g) {
        tp.accumulate(ip, (*diff) * (2.0 * g(0, 0) / n));
    });
}

Var bce_with_logits(Var logits, const Mat& labels) {
    Tape& t = tape_of(logits);
    const Mat& z = logits.value();
    require_same_shape(z, labels, "bce label shape mismatch");
    if (labels.size() == 0) throw UsageError("bce of an empty batch");
    const double n = static_cast<double>(labels.size());
    double loss = 0.0;
    for (Eigen::Index i = 0; i < z.rows(); ++i)
        for (Eigen::Index j = 0; j < z.cols(); ++j) {
            const double v = z(i, j);
            loss += std::max(v, 0.0) - v * labels(i, j) + std::log1p(std::exp(-std::abs(v)));
        }
    Mat out(1, 1);
    out(0, 0) = loss / n;
    const auto iz = logits.id();
    Mat y = labels;
    return t.push(std::move(out), logits.needs_grad(), [iz, y, n](Tape& tp, const Mat& g) {
        Mat s = tp.value(iz).unaryExpr([](double v) {
            return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        });
        tp.accumulate(iz, (s - y) * (g(0, 0) / n));
    });
}

}  // namespace sfcp::dc
