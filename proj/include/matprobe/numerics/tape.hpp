#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "matprobe/numerics/tensor.hpp"

namespace matprobe::numerics {

class Tape;

/// Handle to a value recorded on a tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    [[nodiscard]] const Tensor& value() const;
    [[nodiscard]] Tape& tape() const { return *tape_; }
    [[nodiscard]] std::size_t id() const { return id_; }
    [[nodiscard]] bool valid() const { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Gradient sink keyed by parameter; lets independent tapes run side by side
/// and be reduced afterwards.
using GradientBuffer = std::unordered_map<const Parameter*, Tensor>;

/*
 * Reverse-mode tape. Nodes are appended in evaluation order, which is a
 * topological order; backward() walks it once in reverse. The tape is
 * rebuilt for every forward pass.
 */
class Tape {
public:
    class Context {
    public:
        [[nodiscard]] const Tensor& grad_output() const { return *grad_out_; }
        [[nodiscard]] const Tensor& input(std::size_t slot) const;
        [[nodiscard]] const Tensor& output() const;
        [[nodiscard]] bool wants(std::size_t slot) const;
        /// Accumulator for the gradient of input `slot`, zero-initialized on first use.
        Tensor& grad(std::size_t slot);

    private:
        friend class Tape;
        Tape* tape_ = nullptr;
        std::size_t node_ = 0;
        const Tensor* grad_out_ = nullptr;
        std::vector<Tensor>* grads_ = nullptr;
    };
    using BackwardFn = std::function<void(Context&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    /// Leaf bound to a parameter; the same parameter always maps to one leaf.
    Var parameter(Parameter& p);

    Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

    /// Accumulates d(loss)/d(parameter) into each Parameter::grad.
    void backward(Var loss);
    /// Same, but accumulates into `sink` instead of the parameters.
    void backward(Var loss, GradientBuffer& sink);

    [[nodiscard]] const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    [[nodiscard]] std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        Parameter* param = nullptr;
        bool requires_grad = false;
    };

    void run_backward(Var loss, const std::function<void(Parameter&, const Tensor&)>& deliver);

    std::deque<Node> nodes_;  // stable references across record()
    std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

}  // namespace matprobe::numerics
