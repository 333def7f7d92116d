#include "matprobe/numerics/tape.hpp"

#include "matprobe/error.hpp"

namespace matprobe::numerics {

const Tensor& Var::value() const {
    return tape_->value(id_);
}

const Tensor& Tape::Context::input(std::size_t slot) const {
    return tape_->nodes_[tape_->nodes_[node_].inputs[slot]].value;
}

const Tensor& Tape::Context::output() const {
    return tape_->nodes_[node_].value;
}

bool Tape::Context::wants(std::size_t slot) const {
    return tape_->nodes_[tape_->nodes_[node_].inputs[slot]].requires_grad;
}

Tensor& Tape::Context::grad(std::size_t slot) {
    const std::size_t id = tape_->nodes_[node_].inputs[slot];
    Tensor& g = (*grads_)[id];
    if (g.empty() && !tape_->nodes_[id].value.empty()) g = Tensor::zeros_like(tape_->nodes_[id].value);
    return g;
}

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
    return {this, nodes_.size() - 1};
}

Var Tape::parameter(Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
    nodes_.push_back(Node{p.value, {}, {}, &p, true});
    param_nodes_.emplace(&p, nodes_.size() - 1);
    return {this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
    bool needs = false;
    for (std::size_t i : inputs) needs |= nodes_.at(i).requires_grad;
    nodes_.push_back(Node{std::move(value), std::move(inputs), needs ? std::move(backward) : BackwardFn{},
                          nullptr, needs});
    return {this, nodes_.size() - 1};
}

void Tape::run_backward(Var loss, const std::function<void(Parameter&, const Tensor&)>& deliver) {
    if (&loss.tape() != this) throw NumericError("backward: loss belongs to a different tape");
    const Tensor& lv = nodes_.at(loss.id()).value;
    if (lv.size() != 1) throw NumericError("backward: loss must be a scalar, got shape " + shape_string(lv.shape()));

    std::vector<Tensor> grads(nodes_.size());
    grads[loss.id()] = Tensor(lv.shape(), 1.0);
    Context ctx;
    ctx.tape_ = this;
    ctx.grads_ = &grads;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || grads[i].empty()) continue;
        if (n.param != nullptr) {
            deliver(*n.param, grads[i]);
        } else if (n.backward) {
            ctx.node_ = i;
            ctx.grad_out_ = &grads[i];
            n.backward(ctx);
        }
        if (n.param == nullptr) grads[i] = Tensor{};
    }
}

void Tape::backward(Var loss) {
    run_backward(loss, [](Parameter& p, const Tensor& g) {
        if (p.grad.size() != p.value.size()) p.zero_grad();
        p.grad += g;
    });
}

void Tape::backward(Var loss, GradientBuffer& sink) {
    run_backward(loss, [&sink](Parameter& p, const Tensor& g) {
        auto [it, inserted] = sink.try_emplace(&p, g);
        if (!inserted) it->second += g;
    });
}

}  // namespace matprobe::numerics
