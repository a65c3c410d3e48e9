#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "rockseg/core/error.hpp"
#include "rockseg/core/image.hpp"
#include "rockseg/nn/ops.hpp"

namespace rockseg {

// Soft-Dice + binary cross-entropy on raw logits. p = sigmoid(logits),
//   dice term = 1 - (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps)
//   ce term   = mean over pixels of -t*log(p) - (1-t)*log(1-p)
// Cross-entropy is evaluated in the numerically stable logit form.
inline constexpr double dice_loss_epsilon = 1e-5;

template <typename T>
T dice_ce_loss(std::span<const T> logits, std::span<const std::uint8_t> target) {
    require(logits.size() == target.size() && !logits.empty(), ErrorKind::validation,
            "dice_ce_loss: shape mismatch");
    const std::size_t n = logits.size();
    double inter = 0.0, psum = 0.0, tsum = 0.0, ce = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double l = static_cast<double>(logits[i]);
        const double t = target[i] ? 1.0 : 0.0;
        const double p = 1.0 / (1.0 + std::exp(-l));
        inter += p * t;
        psum += p;
        tsum += t;
        ce += std::max(l, 0.0) - l * t + std::log1p(std::exp(-std::fabs(l)));
    }
    const double dice_term = 1.0 - (2.0 * inter + dice_loss_epsilon) / (psum + tsum + dice_loss_epsilon);
    return static_cast<T>(dice_term + ce / static_cast<double>(n));
}

// Analytic gradient; returns the loss and accumulates dL/dlogit into grad.
template <typename T>
T dice_ce_loss_grad(std::span<const T> logits, std::span<const std::uint8_t> target,
                    std::span<T> grad, T upstream = T(1)) {
    require(logits.size() == target.size() && logits.size() == grad.size() && !logits.empty(),
            ErrorKind::validation, "dice_ce_loss_grad: shape mismatch");
    const std::size_t n = logits.size();
    std::vector<double> p(n);
    double inter = 0.0, psum = 0.0, tsum = 0.0, ce = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double l = static_cast<double>(logits[i]);
        const double t = target[i] ? 1.0 : 0.0;
        p[i] = 1.0 / (1.0 + std::exp(-l));
        inter += p[i] * t;
        psum += p[i];
        tsum += t;
        ce += std::max(l, 0.0) - l * t + std::log1p(std::exp(-std::fabs(l)));
    }
    const double numer = 2.0 * inter + dice_loss_epsilon;
    const double denom = psum + tsum + dice_loss_epsilon;
    const double dice_term = 1.0 - numer / denom;
    // d(dice)/dp_i = (numer - 2*t_i*denom) / denom^2 ; d(ce)/dl_i = (p_i - t_i)/n
    for (std::size_t i = 0; i < n; ++i) {
        const double t = target[i] ? 1.0 : 0.0;
        const double dd_dp = (numer - 2.0 * t * denom) / (denom * denom);
        const double dl = dd_dp * p[i] * (1.0 - p[i]) + (p[i] - t) / static_cast<double>(n);
        grad[i] += static_cast<T>(static_cast<double>(upstream) * dl);
    }
    return static_cast<T>(dice_term + ce / static_cast<double>(n));
}

template <typename T>
T dice_ce_loss(const nn::Tensor<T>& logits, const BinaryMask& target) {
    require(logits.numel() == target.size(), ErrorKind::validation, "dice_ce_loss: shape mismatch");
    return dice_ce_loss(std::span<const T>(logits.v),
                        std::span<const std::uint8_t>(target.data(), target.size()));
}

namespace nn {

// Tape op: scalar DiceCE loss of a logits node against a fixed binary target.
template <typename T>
TapeId dice_ce(Tape<T>& tape, TapeId logits, std::vector<std::uint8_t> target) {
    const auto& lv = tape.value(logits);
    require(lv.numel() == target.size(), ErrorKind::validation, "dice_ce: shape mismatch");
    Tensor<T> out({1});
    out.v[0] = rockseg::dice_ce_loss(std::span<const T>(lv.v),
                                     std::span<const std::uint8_t>(target));
    const bool ng = tape.needs_grad(logits);
    return tape.record(std::move(out), ng, !ng ? typename Tape<T>::BackFn{} : [logits, target = std::move(target)](Tape<T>& t, TapeId o) {
        const T upstream = t.grad(o).v[0];
        auto& gl = t.grad(logits);
        const auto& lv = t.value(logits);
        rockseg::dice_ce_loss_grad(std::span<const T>(lv.v), std::span<const std::uint8_t>(target),
                                   std::span<T>(gl.v), upstream);
    });
}

} // namespace nn
} // namespace rockseg
