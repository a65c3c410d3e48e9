#pragma once

#include <cmath>
#include <vector>

#include "rockseg/nn/tensor.hpp"

namespace rockseg::nn {

// Adam with bias correction; moments (0.9, 0.999), no weight decay.
template <typename T>
class AdamOptimizer {
public:
    explicit AdamOptimizer(ParameterStore<T>& store, double beta1 = 0.9, double beta2 = 0.999,
                           double eps = 1e-8)
        : store_(&store), beta1_(beta1), beta2_(beta2), eps_(eps) {
        slots_.resize(store.size());
        for (std::size_t i = 0; i < store.size(); ++i) {
            slots_[i].m = Tensor<T>(store[i].value.shape);
            slots_[i].v = Tensor<T>(store[i].value.shape);
        }
    }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t i = 0; i < store_->size(); ++i) {
            auto& p = (*store_)[i];
            if (!p.trainable) continue;
            auto& slot = slots_[i];
            for (std::size_t j = 0; j < p.value.v.size(); ++j) {
                const double g = static_cast<double>(p.grad.v[j]);
                const double m = beta1_ * slot.m.v[j] + (1.0 - beta1_) * g;
                const double v = beta2_ * slot.v.v[j] + (1.0 - beta2_) * g * g;
                slot.m.v[j] = static_cast<T>(m);
                slot.v.v[j] = static_cast<T>(v);
                p.value.v[j] -= static_cast<T>(lr * (m / bc1) / (std::sqrt(v / bc2) + eps_));
            }
        }
    }

    void zero_grad() { store_->zero_grads(); }

    std::int64_t steps_taken() const { return t_; }

private:
    struct Slot {
        Tensor<T> m, v;
    };
    ParameterStore<T>* store_;
    double beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::vector<Slot> slots_;
};

} // namespace rockseg::nn
