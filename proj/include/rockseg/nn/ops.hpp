#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "rockseg/nn/tape.hpp"

namespace rockseg::nn {

using TapeId = std::int32_t;

// ---- elementwise and structural -------------------------------------------

template <typename T>
TapeId add(Tape<T>& tape, TapeId a, TapeId b) {
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    require(av.same_shape(bv), ErrorKind::validation, "add: shape mismatch");
    Tensor<T> out = av;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += bv.v[i];
    const bool ng = tape.needs_grad(a) || tape.needs_grad(b);
    return tape.record(std::move(out), ng, !ng ? typename Tape<T>::BackFn{} : [a, b](Tape<T>& t, TapeId o) {
        const auto& g = t.grad(o);
        for (TapeId in : {a, b})
            if (t.needs_grad(in)) {
                auto& gi = t.grad(in);
                for (std::size_t i = 0; i < g.v.size(); ++i) gi.v[i] += g.v[i];
            }
    });
}

template <typename T>
TapeId scale(Tape<T>& tape, TapeId a, T factor) {
    Tensor<T> out = tape.value(a);
    for (auto& x : out.v) x *= factor;
    const bool ng = tape.needs_grad(a);
    return tape.record(std::move(out), ng, !ng ? typename Tape<T>::BackFn{} : [a, factor](Tape<T>& t, TapeId o) {
        const auto& g = t.grad(o);
        auto& gi = t.grad(a);
        for (std::size_t i = 0; i < g.v.size(); ++i) gi.v[i] += factor * g.v[i];
    });
}

// scale * (x0 + x1 + ...); used to average per-sample losses over a batch.
template <typename T>
TapeId sum_scaled(Tape<T>& tape, const std::vector<TapeId>& xs, T factor) {
    require(!xs.empty(), ErrorKind::validation, "sum_scaled: empty input list");
    Tensor<T> out = tape.value(xs[0]);
    for (std::size_t j = 1; j < xs.size(); ++j) {
        const auto& xv = tape.value(xs[j]);
        require(xv.same_shape(out), ErrorKind::validation, "sum_scaled: shape mismatch");
        for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += xv.v[i];
    }
    for (auto& x : out.v) x *= factor;
    bool ng = false;
    for (auto x : xs) ng = ng || tape.needs_grad(x);
    return tape.record(std::move(out), ng, !ng ? typename Tape<T>::BackFn{} : [xs, factor](Tape<T>& t, TapeId o) {
        const auto& g = t.grad(o);
        for (TapeId in : xs)
            if (t.needs_grad(in)) {
                auto& gi = t.grad(in);
                for (std::size_t i = 0; i < g.v.size(); ++i) gi.v[i] += factor * g.v[i];
            }
    });
}

// x:[N,C] plus a broadcast row vector b:[C] (or [1,C]).
template <typename T>
TapeId add_rowvec(Tape<T>& tape, TapeId x, TapeId b) {
    const auto& xv = tape.value(x);
    const auto& bv = tape.value(b);
    require(xv.shape.size() == 2 && static_cast<int>(bv.numel()) == xv.shape[1],
            ErrorKind::validation, "add_rowvec: shape mismatch");
    const int N = xv.shape[0], C = xv.shape[1];
    Tensor<T> out = xv;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) out.v[static_cast<std::size_t>(n) * C + c] += bv.v[c];
    const bool ng = tape.needs_grad(x) || tape.needs_grad(b);
    return tape.record(std::move(out), ng, !ng ? typename Tape<T>::BackFn{} : [x, b, N, C](Tape<T>& t, TapeId o) {
        const auto& g = t.grad(o);
        if (t.needs_grad(x)) {
            auto& gx = t.grad(x);
            for (std::size_t i = 0; i < g.v.size(); ++i) gx.v[i] += g.v[i];
        }
        if (t.needs_grad(b)) {
            auto& gb = t.grad(b);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) gb.v[c] += g.v[static_cast<std::size_t>(n) * C + c];
        }
    });
}

template <typename T>
TapeId reshape(Tape<T>& tape, TapeId a, std::vector<int> shape) {
    Tensor<T> out(std::move(shape), tape.value(a).v);
    const bool ng = tape.needs_grad(a);
    return tape.record(std::move(out), ng, !ng ? typename Tape<T>::BackFn{} : [a](Tape<T>& t, TapeId o) {
        const auto& g = t.grad(o);
        auto& gi = t.grad(a);
        for (std::size_t i = 0; i < g.v.size(); ++i) gi.v[i] += g.v[i];
    });
}

template <typename T>
TapeId concat_rows(Tape<T>& tape, TapeId a, TapeId b) {
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    require(av.shape.size() == 2 && bv.shape.size() == 2 && av.shape[1] == bv.shape[1],
            ErrorKind::validation, "concat_rows: incompatible shapes");
    Tensor<T> out({av.shape[0] + bv.shape[0], av.shape[1]});
    std::copy(av.v.begin(), av.v.end(), out.v.begin());
    std::copy(bv.v.begin(), bv.v.end(), out.v.begin() + av.v.size());
    const bool ng = tape.needs_grad(a) || tape.needs_grad(b);
    return tape.record(std::move(out), ng, !ng ? typename Tape<T>::BackFn{} : [a, b](Tape<T>& t, TapeId o) {
        const auto& g = t.grad(o);
        const std::size_t na = t.value(a).v.size();
        if (t.needs_grad(a)) {
            auto& gi = t.grad(a);
            for (std::size_t i = 0; i < na; ++i) gi.v[i] += g.v[i];
        }
        if (t.needs_grad(b)) {
            auto& gi = t.grad(b);
            for (std::size_t i = 0; i < gi.v.size(); ++i) gi.v[i] += g.v[na + i];
        }
    });
}

template <typename T>
TapeId slice_rows(Tape<T>& tape, TapeId x, int r0, int r1) {
    const auto& xv = tape.value(x);
    require(xv.shape.size() == 2 && 0 <= r0 && r0 < r1 && r1 <= xv.shape[0],
            ErrorKind::validation, "slice_rows: bad range");
    const int C = xv.shape[1];
    Tensor<T> out({r1 - r0, C});
    std::copy(xv.v.begin() + static_cast<std::size_t>(r0) * C,
              xv.v.begin() + static_cast<std::size_t>(r1) * C, out.v.begin());
    const bool ng = tape.needs_grad(x);
    return tape.record(std::move(out), ng, !ng ? typename Tape<T>::BackFn{} : [x, r0, C](Tape<T>& t, TapeId o) {
        const auto& g = t.grad(o);
        auto& gi = t.grad(x);
        for (std::size_t i = 0; i < g.v.size(); ++i) gi.v[static_cast<std::size_t>(r0) * C + i] += g.v[i];
    });
}

template <typename T>
TapeId slice_cols(Tape<T>& tape, TapeId x, int c0, int c1) {
    const auto& xv = tape.value(x);
    require(xv.shape.size() == 2 && 0 <= c0 && c0 < c1 && c1 <= xv.shape[1],
            ErrorKind::validation, "slice_cols: bad range");
    const int N = xv.shape[0], C = xv.shape[1], W = c1 - c0;
    Tensor<T> out({N, W});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < W; ++c)
            out.v[static_cast<std::size_t>(n) * W + c] = xv.v[static_cast<std::size_t>(n) * C + c0 + c];
    const bool ng = tape.needs_grad(x);
    return tape.record(std::move(out), ng, !ng ? typename Tape<T>::BackFn{} : [x, c0, C, W](Tape<T>& t, TapeId o) {
        const auto& g = t.grad(o);
        auto& gi = t.grad(x);
        const int N = g.shape[0];
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < W; ++c)
                gi.v[static_cast<std::size_t>(n) * C + c0 + c] += g.v[static_cast<std::size_t>(n) * W + c];
    });
}

// ---- activations ------------------------------------------------------------

template <typename T>
TapeId relu(Tape<T>& tape, TapeId x) {
    Tensor<T> out = tape.value(x);
    for (auto& v : out.v) v = v > T(0) ? v : T(0);
    const bool ng = tape.needs_grad(x);
    return tape.record(std::move(out), ng, !ng ? typename Tape<T>::BackFn{} : [x](Tape<T>& t, TapeId o) {
        const auto& g = t.grad(o);
        const auto& xv = t.value(x);
        auto& gi = t.grad(x);
        for (std::size_t i = 0; i < g.v.size(); ++i)
            if (xv.v[i] > T(0)) gi.v[i] += g.v[i];
    });
}

template <typename T>
TapeId gelu(Tape<T>& tape, TapeId x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    Tensor<T> out = tape.value(x);
    for (auto& v : out.v) {
        const double z = static_cast<double>(v);
        v = static_cast<T>(0.5 * z * (1.0 + std::erf(z * inv_sqrt2)));
    }
    const bool ng = tape.needs_grad(x);
    return tape.record(std::move(out), ng, !ng ? typename Tape<T>::BackFn{} : [x](Tape<T>& t, TapeId o) {
        const auto& g = t.grad(o);
        const auto& xv = t.value(x);
        auto& gi = t.grad(x);
        for (std::size_t i = 0; i < g.v.size(); ++i) {
            const double z = static_cast<double>(xv.v[i]);
            const double d = 0.5 * (1.0 + std::erf(z * inv_sqrt2)) + z * inv_sqrt2pi * std::exp(-0.5 * z * z);
            gi.v[i] += static_cast<T>(d) * g.v[i];
        }
    });
}

// ---- linear algebra ---------------------------------------------------------

// y = x W^T (+ bias); W is [out_features, in_features].
template <typename T>
TapeId linear(Tape<T>& tape, TapeId x, TapeId W, TapeId bias = -1) {
    const auto& xv = tape.value(x);
    const auto& wv = tape.value(W);
    require(xv.shape.size() == 2 && wv.shape.size() == 2 && xv.shape[1] == wv.shape[1],
            ErrorKind::validation, "linear: shape mismatch");
    const int N = xv.shape[0], C = xv.shape[1], O = wv.shape[0];
    Tensor<T> out({N, O});
    const T* bptr = nullptr;
    if (bias >= 0) {
        const auto& bv = tape.value(bias);
        require(static_cast<int>(bv.numel()) == O, ErrorKind::validation, "linear: bad bias size");
        bptr = bv.v.data();
    }
    for (int n = 0; n < N; ++n) {
        const T* xr = xv.v.data() + static_cast<std::size_t>(n) * C;
        T* yr = out.v.data() + static_cast<std::size_t>(n) * O;
        for (int o = 0; o < O; ++o) {
            const T* wr = wv.v.data() + static_cast<std::size_t>(o) * C;
            T acc = bptr ? bptr[o] : T(0);
            for (int c = 0; c < C; ++c) acc += xr[c] * wr[c];
            yr[o] = acc;
        }
    }
    const bool ng = tape.needs_grad(x) || tape.needs_grad(W) || (bias >= 0 && tape.needs_grad(bias));
    return tape.record(std::move(out), ng, !ng ? typename Tape<T>::BackFn{} : [x, W, bias, N, C, O](Tape<T>& t, TapeId o) {
        const auto& g = t.grad(o);
        const auto& xv = t.value(x);
        const auto& wv = t.value(W);
        if (t.needs_grad(x)) {
            auto& gx = t.grad(x);
            for (int n = 0; n < N; ++n)
                for (int oo = 0; oo < O; ++oo) {
                    const T gv = g.v[static_cast<std::size_t>(n) * O + oo];
                    if (gv == T(0)) continue;
                    const T* wr = wv.v.data() + static_cast<std::size_t>(oo) * C;
                    T* gxr = gx.v.data() + static_cast<std::size_t>(n) * C;
                    for (int c = 0; c < C; ++c) gxr[c] += gv * wr[c];
                }
        }
        if (t.needs_grad(W)) {
            auto& gw = t.grad(W);
            for (int n = 0; n < N; ++n)
                for (int oo = 0; oo < O; ++oo) {
                    const T gv = g.v[static_cast<std::size_t>(n) * O + oo];
                    if (gv == T(0)) continue;
                    const T* xr = xv.v.data() + static_cast<std::size_t>(n) * C;
                    T* gwr = gw.v.data() + static_cast<std::size_t>(oo) * C;
                    for (int c = 0; c < C; ++c) gwr[c] += gv * xr[c];
                }
        }
        if (bias >= 0 && t.needs_grad(bias)) {
            auto& gb = t.grad(bias);
            for (int n = 0; n < N; ++n)
                for (int oo = 0; oo < O; ++oo) gb.v[oo] += g.v[static_cast<std::size_t>(n) * O + oo];
        }
    });
}

template <typename T>
TapeId matmul(Tape<T>& tape, TapeId a, TapeId b) {
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    require(av.shape.size() == 2 && bv.shape.size() == 2 && av.shape[1] == bv.shape[0],
            ErrorKind::validation, "matmul: shape mismatch");
    const int N = av.shape[0], K = av.shape[1], M = bv.shape[1];
    Tensor<T> out({N, M});
    for (int n = 0; n < N; ++n)
        for (int k = 0; k < K; ++k) {
            const T x = av.v[static_cast<std::size_t>(n) * K + k];
            if (x == T(0)) continue;
            const T* br = bv.v.data() + static_cast<std::size_t>(k) * M;
            T* yr = out.v.data() + static_cast<std::size_t>(n) * M;
            for (int m = 0; m < M; ++m) yr[m] += x * br[m];
        }
    const bool ng = tape.needs_grad(a) || tape.needs_grad(b);
    return tape.record(std::move(out), ng, !ng ? typename Tape<T>::BackFn{} : [a, b, N, K, M](Tape<T>& t, TapeId o) {
        const auto& g = t.grad(o);
        const auto& av = t.value(a);
        const auto& bv = t.value(b);
        if (t.needs_grad(a)) {
            auto& ga = t.grad(a);
            for (int n = 0; n < N; ++n)
                for (int k = 0; k < K; ++k) {
                    T acc = T(0);
                    const T* br = bv.v.data() + static_cast<std::size_t>(k) * M;
                    const T* gr = g.v.data() + static_cast<std::size_t>(n) * M;
                    for (int m = 0; m < M; ++m) acc += gr[m] * br[m];
                    ga.v[static_cast<std::size_t>(n) * K + k] += acc;
                }
        }
        if (t.needs_grad(b)) {
            auto& gb = t.grad(b);
            for (int n = 0; n < N; ++n)
                for (int k = 0; k < K; ++k) {
                    const T x = av.v[static_cast<std::size_t>(n) * K + k];
                    if (x == T(0)) continue;
                    T* gbr = gb.v.data() + static_cast<std::size_t>(k) * M;
                    const T* gr = g.v.data() + static_cast<std::size_t>(n) * M;
                    for (int m = 0; m < M; ++m) gbr[m] += x * gr[m];
                }
        }
    });
}

// ---- normalization ----------------------------------------------------------

namespace detail {

// Shared layer-norm forward/backward over rows of length C with row stride.
template <typename T>
struct NormStats {
    std::vector<T> mean, inv_std;
};

} // namespace detail

template <typename T>
TapeId layer_norm(Tape<T>& tape, TapeId x, TapeId gamma, TapeId beta, double eps = 1e-6) {
    const auto& xv = tape.value(x);
    require(xv.shape.size() == 2, ErrorKind::validation, "layer_norm: expect 2D input");
    const int N = xv.shape[0], C = xv.shape[1];
    const auto& gv = tape.value(gamma);
    const auto& bv = tape.value(beta);
    require(static_cast<int>(gv.numel()) == C && static_cast<int>(bv.numel()) == C,
            ErrorKind::validation, "layer_norm: bad affine size");

    Tensor<T> out({N, C});
    detail::NormStats<T> st;
    st.mean.resize(N);
    st.inv_std.resize(N);
    for (int n = 0; n < N; ++n) {
        const T* xr = xv.v.data() + static_cast<std::size_t>(n) * C;
        T mu = T(0);
        for (int c = 0; c < C; ++c) mu += xr[c];
        mu /= static_cast<T>(C);
        T var = T(0);
        for (int c = 0; c < C; ++c) var += (xr[c] - mu) * (xr[c] - mu);
        var /= static_cast<T>(C);
        const T istd = T(1) / std::sqrt(var + static_cast<T>(eps));
        st.mean[n] = mu;
        st.inv_std[n] = istd;
        T* yr = out.v.data() + static_cast<std::size_t>(n) * C;
        for (int c = 0; c < C; ++c) yr[c] = gv.v[c] * (xr[c] - mu) * istd + bv.v[c];
    }
    const bool ng = tape.needs_grad(x) || tape.needs_grad(gamma) || tape.needs_grad(beta);
    return tape.record(std::move(out), ng, !ng ? typename Tape<T>::BackFn{} : [x, gamma, beta, N, C, st](Tape<T>& t, TapeId o) {
        const auto& g = t.grad(o);
        const auto& xv = t.value(x);
        const auto& gv = t.value(gamma);
        for (int n = 0; n < N; ++n) {
            const T* xr = xv.v.data() + static_cast<std::size_t>(n) * C;
            const T* gr = g.v.data() + static_cast<std::size_t>(n) * C;
            const T mu = st.mean[n], istd = st.inv_std[n];
            if (t.needs_grad(gamma) || t.needs_grad(beta)) {
                auto& gg = t.grad(gamma);
                auto& gb = t.grad(beta);
                for (int c = 0; c < C; ++c) {
                    gg.v[c] += gr[c] * (xr[c] - mu) * istd;
                    gb.v[c] += gr[c];
                }
            }
            if (t.needs_grad(x)) {
                auto& gx = t.grad(x);
                T sum_d = T(0), sum_dx = T(0);
                for (int c = 0; c < C; ++c) {
                    const T d = gr[c] * gv.v[c];
                    sum_d += d;
                    sum_dx += d * (xr[c] - mu) * istd;
                }
                T* gxr = gx.v.data() + static_cast<std::size_t>(n) * C;
                for (int c = 0; c < C; ++c) {
                    const T d = gr[c] * gv.v[c];
                    const T xhat = (xr[c] - mu) * istd;
                    gxr[c] += istd * (d - sum_d / static_cast<T>(C) - xhat * sum_dx / static_cast<T>(C));
                }
            }
        }
    });
}

// Channel-wise layer norm for [C,H,W] maps: normalizes across C at every
// spatial position.
template <typename T>
TapeId layer_norm_chw(Tape<T>& tape, TapeId x, TapeId gamma, TapeId beta, double eps = 1e-6) {
    const auto& xv = tape.value(x);
    require(xv.shape.size() == 3, ErrorKind::validation, "layer_norm_chw: expect [C,H,W]");
    const int C = xv.shape[0], H = xv.shape[1], W = xv.shape[2];
    const int HW = H * W;
    const auto& gv = tape.value(gamma);
    const auto& bv = tape.value(beta);
    require(static_cast<int>(gv.numel()) == C && static_cast<int>(bv.numel()) == C,
            ErrorKind::validation, "layer_norm_chw: bad affine size");

    Tensor<T> out({C, H, W});
    std::vector<T> mean(HW), inv_std(HW);
    for (int p = 0; p < HW; ++p) {
        T mu = T(0);
        for (int c = 0; c < C; ++c) mu += xv.v[static_cast<std::size_t>(c) * HW + p];
        mu /= static_cast<T>(C);
        T var = T(0);
        for (int c = 0; c < C; ++c) {
            const T d = xv.v[static_cast<std::size_t>(c) * HW + p] - mu;
            var += d * d;
        }
        var /= static_cast<T>(C);
        const T istd = T(1) / std::sqrt(var + static_cast<T>(eps));
        mean[p] = mu;
        inv_std[p] = istd;
        for (int c = 0; c < C; ++c)
            out.v[static_cast<std::size_t>(c) * HW + p] =
                gv.v[c] * (xv.v[static_cast<std::size_t>(c) * HW + p] - mu) * istd + bv.v[c];
    }
    const bool ng = tape.needs_grad(x) || tape.needs_grad(gamma) || tape.needs_grad(beta);
    return tape.record(std::move(out), ng, !ng ? typename Tape<T>::BackFn{} : [x, gamma, beta, C, HW, mean, inv_std](Tape<T>& t, TapeId o) {
        const auto& g = t.grad(o);
        const auto& xv = t.value(x);
        const auto& gv = t.value(gamma);
        for (int p = 0; p < HW; ++p) {
            const T mu = mean[p], istd = inv_std[p];
            if (t.needs_grad(gamma) || t.needs_grad(beta)) {
                auto& gg = t.grad(gamma);
                auto& gb = t.grad(beta);
                for (int c = 0; c < C; ++c) {
                    const T gr = g.v[static_cast<std::size_t>(c) * HW + p];
                    gg.v[c] += gr * (xv.v[static_cast<std::size_t>(c) * HW + p] - mu) * istd;
                    gb.v[c] += gr;
                }
            }
            if (t.needs_grad(x)) {
                auto& gx = t.grad(x);
                T sum_d = T(0), sum_dx = T(0);
                for (int c = 0; c < C; ++c) {
                    const T d = g.v[static_cast<std::size_t>(c) * HW + p] * gv.v[c];
                    sum_d += d;
                    sum_dx += d * (xv.v[static_cast<std::size_t>(c) * HW + p] - mu) * istd;
                }
                for (int c = 0; c < C; ++c) {
                    const T d = g.v[static_cast<std::size_t>(c) * HW + p] * gv.v[c];
                    const T xhat = (xv.v[static_cast<std::size_t>(c) * HW + p] - mu) * istd;
                    gx.v[static_cast<std::size_t>(c) * HW + p] +=
                        istd * (d - sum_d / static_cast<T>(C) - xhat * sum_dx / static_cast<T>(C));
                }
            }
        }
    });
}

// ---- attention ----------------------------------------------------------------

// Multi-head scaled dot-product attention over token rows; q:[Nq,C],
// k/v:[Nk,C]. Used by the mask decoder (self and cross attention).
template <typename T>
TapeId attention(Tape<T>& tape, TapeId q, TapeId k, TapeId v, int heads) {
    const auto& qv = tape.value(q);
    const auto& kv = tape.value(k);
    const auto& vv = tape.value(v);
    require(qv.shape.size() == 2 && kv.shape.size() == 2 && vv.shape.size() == 2,
            ErrorKind::validation, "attention: expect 2D inputs");
    const int Nq = qv.shape[0], C = qv.shape[1], Nk = kv.shape[0];
    require(kv.shape[1] == C && vv.shape[0] == Nk && vv.shape[1] == C && C % heads == 0,
            ErrorKind::validation, "attention: shape mismatch");
    const int dh = C / heads;
    const T inv_scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh)));

    Tensor<T> out({Nq, C});
    const bool ng = tape.needs_grad(q) || tape.needs_grad(k) || tape.needs_grad(v);
    std::vector<T> probs;
    if (ng) probs.resize(static_cast<std::size_t>(heads) * Nq * Nk);

    std::vector<T> row(Nk);
    for (int h = 0; h < heads; ++h) {
        const int c0 = h * dh;
        for (int i = 0; i < Nq; ++i) {
            const T* qi = qv.v.data() + static_cast<std::size_t>(i) * C + c0;
            T mx = -std::numeric_limits<T>::infinity();
            for (int j = 0; j < Nk; ++j) {
                const T* kj = kv.v.data() + static_cast<std::size_t>(j) * C + c0;
                T s = T(0);
                for (int d = 0; d < dh; ++d) s += qi[d] * kj[d];
                row[j] = s * inv_scale;
                mx = std::max(mx, row[j]);
            }
            T sum = T(0);
            for (int j = 0; j < Nk; ++j) {
                row[j] = std::exp(row[j] - mx);
                sum += row[j];
            }
            T* yr = out.v.data() + static_cast<std::size_t>(i) * C + c0;
            for (int j = 0; j < Nk; ++j) {
                const T p = row[j] / sum;
                if (ng) probs[(static_cast<std::size_t>(h) * Nq + i) * Nk + j] = p;
                const T* vj = vv.v.data() + static_cast<std::size_t>(j) * C + c0;
                for (int d = 0; d < dh; ++d) yr[d] += p * vj[d];
            }
        }
    }
    return tape.record(std::move(out), ng, !ng ? typename Tape<T>::BackFn{} : [q, k, v, heads, Nq, Nk, C, dh, inv_scale, probs](Tape<T>& t, TapeId o) {
        const auto& g = t.grad(o);
        const auto& qv = t.value(q);
        const auto& kv = t.value(k);
        const auto& vv = t.value(v);
        const bool nq = t.needs_grad(q), nk = t.needs_grad(k), nv = t.needs_grad(v);
        auto* gq = nq ? &t.grad(q) : nullptr;
        auto* gk = nk ? &t.grad(k) : nullptr;
        auto* gv = nv ? &t.grad(v) : nullptr;
        std::vector<T> dp(Nk), ds(Nk);
        for (int h = 0; h < heads; ++h) {
            const int c0 = h * dh;
            for (int i = 0; i < Nq; ++i) {
                const T* gi = g.v.data() + static_cast<std::size_t>(i) * C + c0;
                const T* pr = probs.data() + (static_cast<std::size_t>(h) * Nq + i) * Nk;
                T dot = T(0);
                for (int j = 0; j < Nk; ++j) {
                    const T* vj = vv.v.data() + static_cast<std::size_t>(j) * C + c0;
                    T acc = T(0);
                    for (int d = 0; d < dh; ++d) acc += gi[d] * vj[d];
                    dp[j] = acc;
                    dot += pr[j] * acc;
                }
                for (int j = 0; j < Nk; ++j) ds[j] = pr[j] * (dp[j] - dot) * inv_scale;
                const T* qi = qv.v.data() + static_cast<std::size_t>(i) * C + c0;
                for (int j = 0; j < Nk; ++j) {
                    const T* kj = kv.v.data() + static_cast<std::size_t>(j) * C + c0;
                    if (nq) {
                        T* gqi = gq->v.data() + static_cast<std::size_t>(i) * C + c0;
                        for (int d = 0; d < dh; ++d) gqi[d] += ds[j] * kj[d];
                    }
                    if (nk) {
                        T* gkj = gk->v.data() + static_cast<std::size_t>(j) * C + c0;
                        for (int d = 0; d < dh; ++d) gkj[d] += ds[j] * qi[d];
                    }
                    if (nv) {
                        T* gvj = gv->v.data() + static_cast<std::size_t>(j) * C + c0;
                        for (int d = 0; d < dh; ++d) gvj[d] += pr[j] * gi[d];
                    }
                }
            }
        }
    });
}

// ---- convolution family ---------------------------------------------------------

// Non-overlapping patch embedding: conv with kernel == stride.
// x:[Cin,H,W], W:[E,Cin,k,k] -> [E,H/k,W/k].
template <typename T>
TapeId patch_embed(Tape<T>& tape, TapeId x, TapeId W, TapeId bias) {
    const auto& xv = tape.value(x);
    const auto& wv = tape.value(W);
    require(xv.shape.size() == 3 && wv.shape.size() == 4 && wv.shape[1] == xv.shape[0] &&
                wv.shape[2] == wv.shape[3],
            ErrorKind::validation, "patch_embed: shape mismatch");
    const int Cin = xv.shape[0], H = xv.shape[1], Wd = xv.shape[2];
    const int E = wv.shape[0], K = wv.shape[2];
    require(H % K == 0 && Wd % K == 0, ErrorKind::validation, "patch_embed: input not divisible");
    const int Gh = H / K, Gw = Wd / K;
    const auto& bv = tape.value(bias);
    require(static_cast<int>(bv.numel()) == E, ErrorKind::validation, "patch_embed: bad bias");

    Tensor<T> out({E, Gh, Gw});
    for (int e = 0; e < E; ++e)
        for (int gr = 0; gr < Gh; ++gr)
            for (int gc = 0; gc < Gw; ++gc) {
                T acc = bv.v[e];
                for (int ci = 0; ci < Cin; ++ci)
                    for (int i = 0; i < K; ++i) {
                        const T* xr = xv.v.data() +
                                      (static_cast<std::size_t>(ci) * H + gr * K + i) * Wd + gc * K;
                        const T* wr = wv.v.data() +
                                      ((static_cast<std::size_t>(e) * Cin + ci) * K + i) * K;
                        for (int j = 0; j < K; ++j) acc += xr[j] * wr[j];
                    }
                out.v[(static_cast<std::size_t>(e) * Gh + gr) * Gw + gc] = acc;
            }
    const bool ng = tape.needs_grad(x) || tape.needs_grad(W) || tape.needs_grad(bias);
    return tape.record(std::move(out), ng, !ng ? typename Tape<T>::BackFn{} : [x, W, bias, Cin, H, Wd, E, K, Gh, Gw](Tape<T>& t, TapeId o) {
        const auto& g = t.grad(o);
        const auto& xv = t.value(x);
        const auto& wv = t.value(W);
        const bool nx = t.needs_grad(x), nw = t.needs_grad(W), nb = t.needs_grad(bias);
        auto* gx = nx ? &t.grad(x) : nullptr;
        auto* gw = nw ? &t.grad(W) : nullptr;
        auto* gb = nb ? &t.grad(bias) : nullptr;
        for (int e = 0; e < E; ++e)
            for (int gr = 0; gr < Gh; ++gr)
                for (int gc = 0; gc < Gw; ++gc) {
                    const T gv = g.v[(static_cast<std::size_t>(e) * Gh + gr) * Gw + gc];
                    if (gv == T(0)) continue;
                    if (nb) gb->v[e] += gv;
                    for (int ci = 0; ci < Cin; ++ci)
                        for (int i = 0; i < K; ++i)
                            for (int j = 0; j < K; ++j) {
                                const std::size_t xi =
                                    (static_cast<std::size_t>(ci) * H + gr * K + i) * Wd + gc * K + j;
                                const std::size_t wi =
                                    ((static_cast<std::size_t>(e) * Cin + ci) * K + i) * K + j;
                                if (nw) gw->v[wi] += gv * xv.v[xi];
                                if (nx) gx->v[xi] += gv * wv.v[wi];
                            }
                }
    });
}

// Plain conv2d; x:[Cin,H,W], W:[Cout,Cin,kh,kw], optional bias.
template <typename T>
TapeId conv2d(Tape<T>& tape, TapeId x, TapeId W, TapeId bias, int stride, int pad) {
    const auto& xv = tape.value(x);
    const auto& wv = tape.value(W);
    require(xv.shape.size() == 3 && wv.shape.size() == 4 && wv.shape[1] == xv.shape[0],
            ErrorKind::validation, "conv2d: shape mismatch");
    const int Cin = xv.shape[0], H = xv.shape[1], Wd = xv.shape[2];
    const int Cout = wv.shape[0], Kh = wv.shape[2], Kw = wv.shape[3];
    const int Ho = (H + 2 * pad - Kh) / stride + 1;
    const int Wo = (Wd + 2 * pad - Kw) / stride + 1;
    require(Ho >= 1 && Wo >= 1, ErrorKind::validation, "conv2d: empty output");
    const T* bptr = nullptr;
    if (bias >= 0) bptr = tape.value(bias).v.data();

    Tensor<T> out({Cout, Ho, Wo});
    for (int co = 0; co < Cout; ++co)
        for (int r = 0; r < Ho; ++r)
            for (int c = 0; c < Wo; ++c) {
                T acc = bptr ? bptr[co] : T(0);
                for (int ci = 0; ci < Cin; ++ci)
                    for (int i = 0; i < Kh; ++i) {
                        const int sr = r * stride + i - pad;
                        if (sr < 0 || sr >= H) continue;
                        for (int j = 0; j < Kw; ++j) {
                            const int sc = c * stride + j - pad;
                            if (sc < 0 || sc >= Wd) continue;
                            acc += xv.v[(static_cast<std::size_t>(ci) * H + sr) * Wd + sc] *
                                   wv.v[((static_cast<std::size_t>(co) * Cin + ci) * Kh + i) * Kw + j];
                        }
                    }
                out.v[(static_cast<std::size_t>(co) * Ho + r) * Wo + c] = acc;
            }
    const bool ng = tape.needs_grad(x) || tape.needs_grad(W) || (bias >= 0 && tape.needs_grad(bias));
    return tape.record(std::move(out), ng, !ng ? typename Tape<T>::BackFn{} : [x, W, bias, stride, pad, Cin, H, Wd, Cout, Kh, Kw, Ho, Wo](Tape<T>& t, TapeId o) {
        const auto& g = t.grad(o);
        const auto& xv = t.value(x);
        const auto& wv = t.value(W);
        const bool nx = t.needs_grad(x), nw = t.needs_grad(W);
        const bool nb = bias >= 0 && t.needs_grad(bias);
        auto* gx = nx ? &t.grad(x) : nullptr;
        auto* gw = nw ? &t.grad(W) : nullptr;
        auto* gb = nb ? &t.grad(bias) : nullptr;
        for (int co = 0; co < Cout; ++co)
            for (int r = 0; r < Ho; ++r)
                for (int c = 0; c < Wo; ++c) {
                    const T gv = g.v[(static_cast<std::size_t>(co) * Ho + r) * Wo + c];
                    if (gv == T(0)) continue;
                    if (gb) gb->v[co] += gv;
                    for (int ci = 0; ci < Cin; ++ci)
                        for (int i = 0; i < Kh; ++i) {
                            const int sr = r * stride + i - pad;
                            if (sr < 0 || sr >= H) continue;
                            for (int j = 0; j < Kw; ++j) {
                                const int sc = c * stride + j - pad;
                                if (sc < 0 || sc >= Wd) continue;
                                const std::size_t xi = (static_cast<std::size_t>(ci) * H + sr) * Wd + sc;
                                const std::size_t wi =
                                    ((static_cast<std::size_t>(co) * Cin + ci) * Kh + i) * Kw + j;
                                if (gw) gw->v[wi] += gv * xv.v[xi];
                                if (gx) gx->v[xi] += gv * wv.v[wi];
                            }
                        }
                }
    });
}

// 2x upsampling transposed conv (kernel 2, stride 2).
// x:[Cin,H,W], W:[Cin,Cout,2,2] -> [Cout,2H,2W].
template <typename T>
TapeId conv_transpose2x(Tape<T>& tape, TapeId x, TapeId W, TapeId bias) {
    const auto& xv = tape.value(x);
    const auto& wv = tape.value(W);
    require(xv.shape.size() == 3 && wv.shape.size() == 4 && wv.shape[0] == xv.shape[0] &&
                wv.shape[2] == 2 && wv.shape[3] == 2,
            ErrorKind::validation, "conv_transpose2x: shape mismatch");
    const int Cin = xv.shape[0], H = xv.shape[1], Wd = xv.shape[2], Cout = wv.shape[1];
    const auto& bv = tape.value(bias);
    require(static_cast<int>(bv.numel()) == Cout, ErrorKind::validation, "conv_transpose2x: bad bias");

    Tensor<T> out({Cout, 2 * H, 2 * Wd});
    for (int co = 0; co < Cout; ++co) {
        T* plane = out.v.data() + static_cast<std::size_t>(co) * 4 * H * Wd;
        for (int i = 0; i < 4 * H * Wd; ++i) plane[i] = bv.v[co];
    }
    for (int ci = 0; ci < Cin; ++ci)
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < Wd; ++c) {
                const T xvv = xv.v[(static_cast<std::size_t>(ci) * H + r) * Wd + c];
                if (xvv == T(0)) continue;
                for (int co = 0; co < Cout; ++co) {
                    const T* wr = wv.v.data() + (static_cast<std::size_t>(ci) * Cout + co) * 4;
                    T* yr = out.v.data() + (static_cast<std::size_t>(co) * 2 * H + 2 * r) * 2 * Wd + 2 * c;
                    yr[0] += xvv * wr[0];
                    yr[1] += xvv * wr[1];
                    yr[2 * Wd] += xvv * wr[2];
                    yr[2 * Wd + 1] += xvv * wr[3];
                }
            }
    const bool ng = tape.needs_grad(x) || tape.needs_grad(W) || tape.needs_grad(bias);
    return tape.record(std::move(out), ng, !ng ? typename Tape<T>::BackFn{} : [x, W, bias, Cin, H, Wd, Cout](Tape<T>& t, TapeId o) {
        const auto& g = t.grad(o);
        const auto& xv = t.value(x);
        const auto& wv = t.value(W);
        const bool nx = t.needs_grad(x), nw = t.needs_grad(W), nb = t.needs_grad(bias);
        auto* gx = nx ? &t.grad(x) : nullptr;
        auto* gw = nw ? &t.grad(W) : nullptr;
        auto* gb = nb ? &t.grad(bias) : nullptr;
        if (nb)
            for (int co = 0; co < Cout; ++co) {
                const T* plane = g.v.data() + static_cast<std::size_t>(co) * 4 * H * Wd;
                T acc = T(0);
                for (int i = 0; i < 4 * H * Wd; ++i) acc += plane[i];
                gb->v[co] += acc;
            }
        for (int ci = 0; ci < Cin; ++ci)
            for (int r = 0; r < H; ++r)
                for (int c = 0; c < Wd; ++c) {
                    const std::size_t xi = (static_cast<std::size_t>(ci) * H + r) * Wd + c;
                    const T xvv = xv.v[xi];
                    for (int co = 0; co < Cout; ++co) {
                        const std::size_t wbase = (static_cast<std::size_t>(ci) * Cout + co) * 4;
                        const T* gr = g.v.data() + (static_cast<std::size_t>(co) * 2 * H + 2 * r) * 2 * Wd + 2 * c;
                        const T g00 = gr[0], g01 = gr[1], g10 = gr[2 * Wd], g11 = gr[2 * Wd + 1];
                        if (nx)
                            gx->v[xi] += g00 * wv.v[wbase] + g01 * wv.v[wbase + 1] +
                                         g10 * wv.v[wbase + 2] + g11 * wv.v[wbase + 3];
                        if (nw) {
                            gw->v[wbase] += g00 * xvv;
                            gw->v[wbase + 1] += g01 * xvv;
                            gw->v[wbase + 2] += g10 * xvv;
                            gw->v[wbase + 3] += g11 * xvv;
                        }
                    }
                }
    });
}

// ---- resampling and layout --------------------------------------------------

// Bilinear resize of a [C,H,W] map (half-pixel centers, edges clamped).
template <typename T>
TapeId bilinear_upsample(Tape<T>& tape, TapeId x, int out_h, int out_w) {
    const auto& xv = tape.value(x);
    require(xv.shape.size() == 3, ErrorKind::validation, "bilinear_upsample: expect [C,H,W]");
    const int C = xv.shape[0], H = xv.shape[1], W = xv.shape[2];

    struct Samp {
        int i0, i1;
        T f;
    };
    std::vector<Samp> ys(out_h), xs(out_w);
    auto make = [](int out_n, int in_n, std::vector<Samp>& s) {
        for (int i = 0; i < out_n; ++i) {
            const double src = (i + 0.5) * static_cast<double>(in_n) / out_n - 0.5;
            const double clamped = src < 0 ? 0 : (src > in_n - 1 ? in_n - 1 : src);
            const int i0 = static_cast<int>(clamped);
            s[i] = {i0, std::min(i0 + 1, in_n - 1), static_cast<T>(clamped - i0)};
        }
    };
    make(out_h, H, ys);
    make(out_w, W, xs);

    Tensor<T> out({C, out_h, out_w});
    for (int c = 0; c < C; ++c) {
        const T* plane = xv.v.data() + static_cast<std::size_t>(c) * H * W;
        T* oplane = out.v.data() + static_cast<std::size_t>(c) * out_h * out_w;
        for (int r = 0; r < out_h; ++r) {
            const auto [y0, y1, fy] = ys[r];
            for (int cc = 0; cc < out_w; ++cc) {
                const auto [x0, x1, fx] = xs[cc];
                const T v00 = plane[static_cast<std::size_t>(y0) * W + x0];
                const T v01 = plane[static_cast<std::size_t>(y0) * W + x1];
                const T v10 = plane[static_cast<std::size_t>(y1) * W + x0];
                const T v11 = plane[static_cast<std::size_t>(y1) * W + x1];
                oplane[static_cast<std::size_t>(r) * out_w + cc] =
                    (T(1) - fy) * ((T(1) - fx) * v00 + fx * v01) + fy * ((T(1) - fx) * v10 + fx * v11);
            }
        }
    }
    const bool ng = tape.needs_grad(x);
    return tape.record(std::move(out), ng, !ng ? typename Tape<T>::BackFn{} : [x, C, H, W, out_h, out_w, ys, xs](Tape<T>& t, TapeId o) {
        const auto& g = t.grad(o);
        auto& gx = t.grad(x);
        for (int c = 0; c < C; ++c) {
            T* gplane = gx.v.data() + static_cast<std::size_t>(c) * H * W;
            const T* goplane = g.v.data() + static_cast<std::size_t>(c) * out_h * out_w;
            for (int r = 0; r < out_h; ++r) {
                const auto [y0, y1, fy] = ys[r];
                for (int cc = 0; cc < out_w; ++cc) {
                    const auto [x0, x1, fx] = xs[cc];
                    const T gv = goplane[static_cast<std::size_t>(r) * out_w + cc];
                    gplane[static_cast<std::size_t>(y0) * W + x0] += gv * (T(1) - fy) * (T(1) - fx);
                    gplane[static_cast<std::size_t>(y0) * W + x1] += gv * (T(1) - fy) * fx;
                    gplane[static_cast<std::size_t>(y1) * W + x0] += gv * fy * (T(1) - fx);
                    gplane[static_cast<std::size_t>(y1) * W + x1] += gv * fy * fx;
                }
            }
        }
    });
}

// [C,H,W] -> [H*W, C] token rows.
template <typename T>
TapeId chw_to_rows(Tape<T>& tape, TapeId x) {
    const auto& xv = tape.value(x);
    require(xv.shape.size() == 3, ErrorKind::validation, "chw_to_rows: expect [C,H,W]");
    const int C = xv.shape[0], HW = xv.shape[1] * xv.shape[2];
    Tensor<T> out({HW, C});
    for (int c = 0; c < C; ++c)
        for (int p = 0; p < HW; ++p)
            out.v[static_cast<std::size_t>(p) * C + c] = xv.v[static_cast<std::size_t>(c) * HW + p];
    const bool ng = tape.needs_grad(x);
    return tape.record(std::move(out), ng, !ng ? typename Tape<T>::BackFn{} : [x, C, HW](Tape<T>& t, TapeId o) {
        const auto& g = t.grad(o);
        auto& gx = t.grad(x);
        for (int c = 0; c < C; ++c)
            for (int p = 0; p < HW; ++p)
                gx.v[static_cast<std::size_t>(c) * HW + p] += g.v[static_cast<std::size_t>(p) * C + c];
    });
}

// [H*W, C] token rows -> [C,H,W].
template <typename T>
TapeId rows_to_chw(Tape<T>& tape, TapeId x, int h, int w) {
    const auto& xv = tape.value(x);
    require(xv.shape.size() == 2 && xv.shape[0] == h * w, ErrorKind::validation,
            "rows_to_chw: shape mismatch");
    const int C = xv.shape[1], HW = h * w;
    Tensor<T> out({C, h, w});
    for (int p = 0; p < HW; ++p)
        for (int c = 0; c < C; ++c)
            out.v[static_cast<std::size_t>(c) * HW + p] = xv.v[static_cast<std::size_t>(p) * C + c];
    const bool ng = tape.needs_grad(x);
    return tape.record(std::move(out), ng, !ng ? typename Tape<T>::BackFn{} : [x, C, HW](Tape<T>& t, TapeId o) {
        const auto& g = t.grad(o);
        auto& gx = t.grad(x);
        for (int p = 0; p < HW; ++p)
            for (int c = 0; c < C; ++c)
                gx.v[static_cast<std::size_t>(p) * C + c] += g.v[static_cast<std::size_t>(c) * HW + p];
    });
}

} // namespace rockseg::nn
