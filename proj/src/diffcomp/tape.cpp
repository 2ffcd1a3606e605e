#include "sfcp/diffcomp/tape.hpp"

namespace sfcp::dc {

const Mat Tape::kEmpty{};

const Mat& Var::value() const {
    if (tape_ == nullptr) throw UsageError("value of an unbound Var");
    return tape_->value(id_);
}

const Mat& Var::grad() const {
    if (tape_ == nullptr) throw UsageError("grad of an unbound Var");
    return tape_->grad_of(id_);
}

bool Var::needs_grad() const { return tape_ != nullptr && tape_->needs_grad(id_); }

Var Tape::constant(Mat value) { return push(std::move(value), false, nullptr); }

Var Tape::input(Mat value) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = record_;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Tape::param(Param& p) {
    Node n;
    n.ref = &p.value;
    if (record_ && !frozen_) {
        n.param = &p;
        n.needs_grad = true;
        if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) p.zero_grad();
    }
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Tape::push(Mat value, bool needs_grad, Backprop backprop) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad && record_;
    if (n.needs_grad) n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

const Mat& Tape::value(std::size_t id) const {
    if (id >= nodes_.size()) throw UsageError("Var does not belong to this tape");
    const Node& n = nodes_[id];
    return n.ref != nullptr ? *n.ref : n.value;
}

const Mat& Tape::grad_of(std::size_t id) const {
    if (id >= nodes_.size()) throw UsageError("Var does not belong to this tape");
    const Node& n = nodes_[id];
    if (n.param != nullptr) return n.param->grad;
    return n.grad.size() == 0 ? kEmpty : n.grad;
}

void Tape::backward(Var out) {
    if (nodes_.empty() || out.tape() != this || out.id() >= nodes_.size())
        throw UsageError("backward called without a recorded forward pass");
    if (!record_) throw UsageError("backward on a non-recording tape");
    if (swept_) throw UsageError("backward may run only once per tape");
    const Mat& v = value(out.id());
    if (v.rows() != 1 || v.cols() != 1) throw UsageError("backward needs a 1x1 output");
    swept_ = true;
    if (!nodes_[out.id()].needs_grad) return;
    accumulate(out.id(), Mat::Ones(1, 1));
    for (std::size_t i = out.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.backprop || n.grad.size() == 0) continue;
        n.backprop(*this, n.grad);
    }
}

}  // namespace sfcp::dc
