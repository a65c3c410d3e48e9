#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "rockseg/core/error.hpp"
#include "rockseg/core/rng.hpp"

namespace rockseg::nn {

// Dense row-major tensor, rank <= 4 in practice.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        v.assign(numel_of(shape), T(0));
    }
    Tensor(std::vector<int> s, std::vector<T> data) : shape(std::move(s)), v(std::move(data)) {
        require(v.size() == numel_of(shape), ErrorKind::validation, "tensor data/shape mismatch");
    }

    static std::size_t numel_of(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            require(d >= 1, ErrorKind::validation, "tensor dims must be >= 1");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::size_t numel() const { return v.size(); }
    int dim(std::size_t i) const { return shape[i]; }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void fill(T x) { std::fill(v.begin(), v.end(), x); }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.v.resize(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

// Named weight tensor with its gradient accumulator. `buffer` marks tensors
// that are never trainable (fixed positional tables and the like);
// freeze/unfreeze leaves them alone.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;
    bool buffer = false;

    void zero_grad() {
        grad.shape = value.shape;
        grad.v.assign(value.v.size(), T(0));
    }
};

// Creation-ordered parameter registry; iteration order is deterministic.
template <typename T>
class ParameterStore {
public:
    // Gradient buffers stay unallocated until the first zero_grad(), so
    // structurally built models (weight inspection, counting) stay lean.
    Parameter<T>& create(const std::string& name, std::vector<int> shape, bool buffer = false) {
        require(!index_.contains(name), ErrorKind::validation, "duplicate parameter: " + name);
        auto p = std::make_unique<Parameter<T>>();
        p->name = name;
        p->value = Tensor<T>(std::move(shape));
        p->trainable = !buffer;
        p->buffer = buffer;
        index_[name] = params_.size();
        params_.push_back(std::move(p));
        return *params_.back();
    }

    Parameter<T>& at(const std::string& name) {
        auto it = index_.find(name);
        require(it != index_.end(), ErrorKind::validation, "unknown parameter: " + name);
        return *params_[it->second];
    }
    const Parameter<T>& at(const std::string& name) const {
        auto it = index_.find(name);
        require(it != index_.end(), ErrorKind::validation, "unknown parameter: " + name);
        return *params_[it->second];
    }
    bool contains(const std::string& name) const { return index_.contains(name); }

    std::size_t size() const { return params_.size(); }
    Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
    const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

    void zero_grads() {
        for (auto& p : params_) p->zero_grad();
    }

    ParameterStore clone() const {
        ParameterStore out;
        for (const auto& p : params_) {
            auto& q = out.create(p->name, p->value.shape, p->buffer);
            q.value = p->value;
            q.grad = p->grad;
            q.trainable = p->trainable;
        }
        return out;
    }

private:
    std::vector<std::unique_ptr<Parameter<T>>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Weight initializers. Hand-rolled normal keeps initialization identical
// across standard libraries.
template <typename T>
void init_normal(Tensor<T>& t, Rng& rng, double stddev) {
    for (auto& x : t.v) x = static_cast<T>(rng.next_normal() * stddev);
}

template <typename T>
void init_uniform(Tensor<T>& t, Rng& rng, double lo, double hi) {
    for (auto& x : t.v) x = static_cast<T>(lo + rng.next_double() * (hi - lo));
}

} // namespace rockseg::nn
