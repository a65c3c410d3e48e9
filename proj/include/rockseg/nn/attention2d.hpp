#pragma once

#include <vector>

#include "rockseg/nn/ops.hpp"

namespace rockseg::nn {

// Multi-head attention over a (grid_h, grid_w) token grid, as used inside
// the image encoder blocks. window == 0 attends globally; otherwise the
// grid is zero-padded to window multiples and attention runs per window.
// rel_h/rel_w (optional, pass -1) are decomposed relative-position tables
// of shape [2*side-1, head_dim] shared across heads; they add
// q_i . rel[d_row] + q_i . rel[d_col] to the attention scores.
template <typename T>
TapeId attention_2d(Tape<T>& tape, TapeId q, TapeId k, TapeId v, int grid_h, int grid_w, int heads,
                    int window, TapeId rel_h = -1, TapeId rel_w = -1) {
    const auto& qv = tape.value(q);
    const auto& kv = tape.value(k);
    const auto& vv = tape.value(v);
    const int N = grid_h * grid_w;
    require(qv.shape.size() == 2 && qv.shape[0] == N && kv.same_shape(qv) && vv.same_shape(qv),
            ErrorKind::validation, "attention_2d: shape mismatch");
    const int C = qv.shape[1];
    require(C % heads == 0, ErrorKind::validation, "attention_2d: heads must divide channels");
    const int dh = C / heads;
    const bool use_rel = rel_h >= 0 && rel_w >= 0;
    const int side_h = window > 0 ? window : grid_h;
    const int side_w = window > 0 ? window : grid_w;
    if (use_rel) {
        require(tape.value(rel_h).shape == std::vector<int>{2 * side_h - 1, dh} &&
                    tape.value(rel_w).shape == std::vector<int>{2 * side_w - 1, dh},
                ErrorKind::validation, "attention_2d: bad relative-position table shape");
    }
    const T inv_scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh)));

    // window layout over the (possibly padded) grid
    const int wins_r = (grid_h + side_h - 1) / side_h;
    const int wins_c = (grid_w + side_w - 1) / side_w;
    const int wn = side_h * side_w; // tokens per window (pads included)

    auto token_index = [&](int wr, int wc, int local) {
        const int r = wr * side_h + local / side_w;
        const int c = wc * side_w + local % side_w;
        return (r < grid_h && c < grid_w) ? r * grid_w + c : -1;
    };

    const bool ng = tape.needs_grad(q) || tape.needs_grad(k) || tape.needs_grad(v) ||
                    (use_rel && (tape.needs_grad(rel_h) || tape.needs_grad(rel_w)));
    std::vector<T> probs;
    if (ng) probs.resize(static_cast<std::size_t>(wins_r) * wins_c * heads * wn * wn);

    const T* relh_ptr = use_rel ? tape.value(rel_h).v.data() : nullptr;
    const T* relw_ptr = use_rel ? tape.value(rel_w).v.data() : nullptr;

    Tensor<T> out({N, C});
    std::vector<T> srow(wn);
    for (int wr = 0; wr < wins_r; ++wr)
        for (int wc = 0; wc < wins_c; ++wc) {
            const std::size_t win_idx = static_cast<std::size_t>(wr) * wins_c + wc;
            for (int h = 0; h < heads; ++h) {
                const int c0 = h * dh;
                for (int i = 0; i < wn; ++i) {
                    const int gi = token_index(wr, wc, i);
                    const T* qi = gi >= 0 ? qv.v.data() + static_cast<std::size_t>(gi) * C + c0 : nullptr;
                    const int ri = i / side_w, ci = i % side_w;
                    T mx = -std::numeric_limits<T>::infinity();
                    for (int j = 0; j < wn; ++j) {
                        const int gj = token_index(wr, wc, j);
                        T s = T(0);
                        if (qi) {
                            if (gj >= 0) {
                                const T* kj = kv.v.data() + static_cast<std::size_t>(gj) * C + c0;
                                for (int d = 0; d < dh; ++d) s += qi[d] * kj[d];
                                s *= inv_scale;
                            }
                            if (use_rel) {
                                const int rj = j / side_w, cj = j % side_w;
                                const T* rh = relh_ptr + static_cast<std::size_t>(ri - rj + side_h - 1) * dh;
                                const T* rw = relw_ptr + static_cast<std::size_t>(ci - cj + side_w - 1) * dh;
                                for (int d = 0; d < dh; ++d) s += qi[d] * (rh[d] + rw[d]);
                            }
                        }
                        srow[j] = s;
                        mx = std::max(mx, s);
                    }
                    T sum = T(0);
                    for (int j = 0; j < wn; ++j) {
                        srow[j] = std::exp(srow[j] - mx);
                        sum += srow[j];
                    }
                    T* op = gi >= 0 ? out.v.data() + static_cast<std::size_t>(gi) * C + c0 : nullptr;
                    for (int j = 0; j < wn; ++j) {
                        const T p = srow[j] / sum;
                        if (ng) probs[((win_idx * heads + h) * wn + i) * wn + j] = p;
                        if (!op) continue;
                        const int gj = token_index(wr, wc, j);
                        if (gj < 0) continue;
                        const T* vj = vv.v.data() + static_cast<std::size_t>(gj) * C + c0;
                        for (int d = 0; d < dh; ++d) op[d] += p * vj[d];
                    }
                }
            }
        }

    if (!ng) return tape.record(std::move(out), false, nullptr);
    return tape.record(
        std::move(out), true,
        [q, k, v, rel_h, rel_w, grid_h, grid_w, heads, use_rel, side_h, side_w, wins_r,
         wins_c, wn, dh, C, inv_scale, probs = std::move(probs)](Tape<T>& t, TapeId o) {
            const auto& g = t.grad(o);
            const auto& qv = t.value(q);
            const auto& kv = t.value(k);
            const auto& vv = t.value(v);
            const bool nq = t.needs_grad(q), nk = t.needs_grad(k), nv = t.needs_grad(v);
            const bool nrh = use_rel && t.needs_grad(rel_h);
            const bool nrw = use_rel && t.needs_grad(rel_w);
            auto* gq = nq ? &t.grad(q) : nullptr;
            auto* gk = nk ? &t.grad(k) : nullptr;
            auto* gv = nv ? &t.grad(v) : nullptr;
            auto* grh = nrh ? &t.grad(rel_h) : nullptr;
            auto* grw = nrw ? &t.grad(rel_w) : nullptr;
            const T* relh_ptr = use_rel ? t.value(rel_h).v.data() : nullptr;
            const T* relw_ptr = use_rel ? t.value(rel_w).v.data() : nullptr;

            auto token_index = [&](int wr, int wc, int local) {
                const int r = wr * side_h + local / side_w;
                const int c = wc * side_w + local % side_w;
                return (r < grid_h && c < grid_w) ? r * grid_w + c : -1;
            };

            std::vector<T> dp(wn), ds(wn);
            for (int wr = 0; wr < wins_r; ++wr)
                for (int wc = 0; wc < wins_c; ++wc) {
                    const std::size_t win_idx = static_cast<std::size_t>(wr) * wins_c + wc;
                    for (int h = 0; h < heads; ++h) {
                        const int c0 = h * dh;
                        for (int i = 0; i < wn; ++i) {
                            const int gi = token_index(wr, wc, i);
                            if (gi < 0) continue; // padded queries produced no output
                            const T* go = g.v.data() + static_cast<std::size_t>(gi) * C + c0;
                            const T* pr = probs.data() + ((win_idx * heads + h) * wn + i) * wn;
                            const int ri = i / side_w, ci = i % side_w;
                            T dot = T(0);
                            for (int j = 0; j < wn; ++j) {
                                const int gj = token_index(wr, wc, j);
                                T acc = T(0);
                                if (gj >= 0) {
                                    const T* vj = vv.v.data() + static_cast<std::size_t>(gj) * C + c0;
                                    for (int d = 0; d < dh; ++d) acc += go[d] * vj[d];
                                }
                                dp[j] = acc;
                                dot += pr[j] * acc;
                            }
                            for (int j = 0; j < wn; ++j) ds[j] = pr[j] * (dp[j] - dot);
                            const T* qi = qv.v.data() + static_cast<std::size_t>(gi) * C + c0;
                            for (int j = 0; j < wn; ++j) {
                                const int gj = token_index(wr, wc, j);
                                const int rj = j / side_w, cj = j % side_w;
                                const T dsj = ds[j];
                                if (gj >= 0) {
                                    const T* kj = kv.v.data() + static_cast<std::size_t>(gj) * C + c0;
                                    if (nq) {
                                        T* gqi = gq->v.data() + static_cast<std::size_t>(gi) * C + c0;
                                        for (int d = 0; d < dh; ++d) gqi[d] += dsj * inv_scale * kj[d];
                                    }
                                    if (nk) {
                                        T* gkj = gk->v.data() + static_cast<std::size_t>(gj) * C + c0;
                                        for (int d = 0; d < dh; ++d) gkj[d] += dsj * inv_scale * qi[d];
                                    }
                                    if (nv) {
                                        T* gvj = gv->v.data() + static_cast<std::size_t>(gj) * C + c0;
                                        for (int d = 0; d < dh; ++d) gvj[d] += pr[j] * go[d];
                                    }
                                }
                                if (use_rel && dsj != T(0)) {
                                    const std::size_t ih = static_cast<std::size_t>(ri - rj + side_h - 1) * dh;
                                    const std::size_t iw = static_cast<std::size_t>(ci - cj + side_w - 1) * dh;
                                    if (nq) {
                                        T* gqi = gq->v.data() + static_cast<std::size_t>(gi) * C + c0;
                                        for (int d = 0; d < dh; ++d)
                                            gqi[d] += dsj * (relh_ptr[ih + d] + relw_ptr[iw + d]);
                                    }
                                    if (nrh)
                                        for (int d = 0; d < dh; ++d) grh->v[ih + d] += dsj * qi[d];
                                    if (nrw)
                                        for (int d = 0; d < dh; ++d) grw->v[iw + d] += dsj * qi[d];
                                }
                            }
                        }
                    }
                }
        });
}

} // namespace rockseg::nn
