#pragma once

#include <deque>
#include <functional>

#include "sfcp/common.hpp"
#include "sfcp/diffcomp/tensor.hpp"

namespace sfcp::dc {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    const Mat& value() const;
    /// Gradient after Tape::backward; empty if the node needs no gradient.
    const Mat& grad() const;
    bool needs_grad() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }

    Tape* tape() const { return tape_; }
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Matrix-level reverse-mode tape. Each op records its output value and, when
/// any input needs a gradient, a closure that pushes the output gradient back
/// to its inputs. Parameter gradients accumulate into Param::grad.
class Tape {
public:
    explicit Tape(bool record = true) : record_(record) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return record_; }

    Var constant(Mat value);
    /// Leaf that collects a gradient (e.g. an action matrix fed to a critic).
    Var input(Mat value);
    /// Leaf bound to a parameter; its gradient accumulates into p.grad unless
    /// the tape is currently freezing parameters.
    Var param(Param& p);

    /// Parameters bound while a FreezeGuard is alive act as constants.
    class FreezeGuard {
    public:
        explicit FreezeGuard(Tape& t) : t_(t), prev_(t.frozen_) { t_.frozen_ = true; }
        ~FreezeGuard() { t_.frozen_ = prev_; }
        FreezeGuard(const FreezeGuard&) = delete;
        FreezeGuard& operator=(const FreezeGuard&) = delete;

    private:
        Tape& t_;
        bool prev_;
    };

    /// Reverse sweep from a 1x1 output.
    void backward(Var scalar_output);

    std::size_t size() const { return nodes_.size(); }

    // op-construction interface
    using Backprop = std::function<void(Tape&, const Mat& out_grad)>;
    Var push(Mat value, bool needs_grad, Backprop backprop);
    const Mat& value(std::size_t id) const;
    bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
    /// Adds g into the gradient of node id (no-op if it needs none).
    template <typename Expr>
    void accumulate(std::size_t id, const Expr& g) {
        Node& n = nodes_[id];
        if (!n.needs_grad) return;
        Mat& target = n.param != nullptr ? n.param->grad : n.grad;
        if (target.size() == 0) target = Mat::Zero(value(id).rows(), value(id).cols());
        target += g;
    }
    const Mat& grad_of(std::size_t id) const;

private:
    struct Node {
        Mat value;
        const Mat* ref = nullptr;  // parameter storage, when bound to a Param
        Param* param = nullptr;    // trainable parameter receiving gradients
        Mat grad;
        bool needs_grad = false;
        Backprop backprop;
    };

    std::deque<Node> nodes_;
    bool record_ = true;
    bool frozen_ = false;
    bool swept_ = false;
    static const Mat kEmpty;
};

}  // namespace sfcp::dc
