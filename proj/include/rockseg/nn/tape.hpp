#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "rockseg/nn/tensor.hpp"

namespace rockseg::nn {

// Reverse-mode autodiff tape. Forward calls (ops.hpp) record values and a
// backward closure per op; backward() replays the closures in reverse.
// Gradient buffers are allocated lazily, so branches no gradient reaches
// cost nothing on the way back.
template <typename T>
class Tape {
public:
    using Id = std::int32_t;
    using BackFn = std::function<void(Tape&, Id)>;

    Id constant(Tensor<T> value) { return record(std::move(value), false, nullptr); }

    // One leaf per parameter per tape; repeated requests share the node so
    // gradient contributions from every use accumulate in one place.
    Id leaf(Parameter<T>& p) {
        auto it = leaves_.find(&p);
        if (it != leaves_.end()) return it->second;
        Id id = record(p.value, p.trainable, nullptr);
        leaves_[&p] = id;
        return id;
    }

    const Tensor<T>& value(Id id) const { return nodes_[id].value; }
    bool needs_grad(Id id) const { return nodes_[id].needs_grad; }

    bool has_grad(Id id) const { return !nodes_[id].grad.v.empty(); }
    // Gradient buffer, zero-initialized to the value's shape on first touch.
    Tensor<T>& grad(Id id) {
        auto& n = nodes_[id];
        if (n.grad.v.empty()) {
            n.grad.shape = n.value.shape;
            n.grad.v.assign(n.value.numel(), T(0));
        }
        return n.grad;
    }

    // Record an op output. `backward(tape, out_id)` runs during the reverse
    // sweep; pass nullptr when no input needs gradients.
    Id record(Tensor<T> value, bool needs_grad, BackFn backward) {
        nodes_.push_back(Node{std::move(value), {}, needs_grad});
        const Id id = static_cast<Id>(nodes_.size() - 1);
        if (needs_grad && backward) steps_.push_back(Step{id, std::move(backward)});
        return id;
    }

    void backward(Id root) {
        require(nodes_[root].value.numel() == 1, ErrorKind::validation,
                "backward root must be scalar");
        grad(root).v[0] = T(1);
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it)
            if (has_grad(it->out)) it->fn(*this, it->out);
        // fold leaf gradients into their parameters
        for (auto& [param, id] : leaves_)
            if (param->trainable && has_grad(id)) {
                auto& g = grad(id);
                if (param->grad.v.empty()) param->zero_grad();
                for (std::size_t i = 0; i < g.v.size(); ++i) param->grad.v[i] += g.v[i];
            }
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool needs_grad = false;
    };
    struct Step {
        Id out;
        BackFn fn;
    };

    std::vector<Node> nodes_;
    std::vector<Step> steps_;
    std::unordered_map<Parameter<T>*, Id> leaves_;
};

} // namespace rockseg::nn
