#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "rockseg/core/io.hpp"
#include "rockseg/train/loop.hpp"

namespace rockseg {

namespace detail {

// 5x7 bitmap glyphs for the handful of characters figures need.
inline const std::uint8_t* glyph5x7(char c) {
    static const struct {
        char c;
        std::uint8_t rows[7];
    } table[] = {
        {'0', {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e}},
        {'1', {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e}},
        {'2', {0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f}},
        {'3', {0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e}},
        {'4', {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02}},
        {'5', {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e}},
        {'6', {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e}},
        {'7', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
        {'8', {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e}},
        {'9', {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c}},
        {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c}},
        {'-', {0x00, 0x00, 0x00, 0x1f, 0x00, 0x00, 0x00}},
        {'+', {0x00, 0x04, 0x04, 0x1f, 0x04, 0x04, 0x00}},
        {'e', {0x00, 0x00, 0x0e, 0x11, 0x1f, 0x10, 0x0e}},
        {'t', {0x08, 0x08, 0x1e, 0x08, 0x08, 0x09, 0x06}},
        {'r', {0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10}},
        {'a', {0x00, 0x00, 0x0e, 0x01, 0x0f, 0x11, 0x0f}},
        {'i', {0x04, 0x00, 0x0c, 0x04, 0x04, 0x04, 0x0e}},
        {'n', {0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11}},
        {'v', {0x00, 0x00, 0x11, 0x11, 0x11, 0x0a, 0x04}},
        {'l', {0x0c, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0e}},
        {'o', {0x00, 0x00, 0x0e, 0x11, 0x11, 0x11, 0x0e}},
        {'s', {0x00, 0x00, 0x0f, 0x10, 0x0e, 0x01, 0x1e}},
        {'p', {0x00, 0x00, 0x1e, 0x11, 0x1e, 0x10, 0x10}},
        {'c', {0x00, 0x00, 0x0e, 0x11, 0x10, 0x11, 0x0e}},
        {'h', {0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x11}},
        {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
    };
    for (const auto& g : table)
        if (g.c == c) return g.rows;
    return table[sizeof(table) / sizeof(table[0]) - 1].rows; // blank for unknown
}

inline void draw_text(RgbImage& img, int x, int y, const std::string& text, Rgb color) {
    for (std::size_t i = 0; i < text.size(); ++i) {
        const std::uint8_t* rows = glyph5x7(text[i]);
        for (int r = 0; r < 7; ++r)
            for (int c = 0; c < 5; ++c)
                if (rows[r] & (1 << (4 - c))) {
                    const int px = x + static_cast<int>(i) * 6 + c, py = y + r;
                    if (px >= 0 && px < img.width() && py >= 0 && py < img.height())
                        img.at(py, px) = color;
                }
    }
}

inline void draw_line(RgbImage& img, double x0, double y0, double x1, double y1, Rgb color) {
    const double dx = x1 - x0, dy = y1 - y0;
    const int steps = std::max(2, static_cast<int>(std::ceil(std::max(std::fabs(dx), std::fabs(dy)))) + 1);
    for (int i = 0; i < steps; ++i) {
        const double t = static_cast<double>(i) / (steps - 1);
        const int px = static_cast<int>(std::lround(x0 + t * dx));
        const int py = static_cast<int>(std::lround(y0 + t * dy));
        for (int oy = 0; oy <= 1; ++oy)
            for (int ox = 0; ox <= 1; ++ox) {
                const int qx = px + ox, qy = py + oy;
                if (qx >= 0 && qx < img.width() && qy >= 0 && qy < img.height())
                    img.at(qy, qx) = color;
            }
    }
}

inline std::string format_tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

} // namespace detail

// Training/validation loss versus epoch, rendered to a PNG.
inline void save_loss_curve_png(const std::vector<EpochStats>& history,
                                const std::filesystem::path& path) {
    require(!history.empty(), ErrorKind::validation, "loss curve needs at least one epoch");
    const int W = 640, H = 420, ml = 64, mr = 20, mt = 20, mb = 44;
    RgbImage img(H, W, Rgb{255, 255, 255});
    const Rgb axis{70, 70, 70}, gridc{225, 225, 225};
    const Rgb train_c{31, 119, 180}, val_c{255, 127, 14};

    double lo = history[0].train_loss, hi = lo;
    for (const auto& e : history) {
        lo = std::min({lo, e.train_loss, e.val_loss});
        hi = std::max({hi, e.train_loss, e.val_loss});
    }
    if (hi - lo < 1e-12) hi = lo + 1.0;
    lo = std::max(0.0, lo - 0.05 * (hi - lo));
    hi = hi + 0.05 * (hi - lo);

    const int n = static_cast<int>(history.size());
    auto px = [&](double epoch) {
        return ml + (W - ml - mr - 1) * (n == 1 ? 0.5 : (epoch - 1) / (n - 1));
    };
    auto py = [&](double v) { return mt + (H - mt - mb - 1) * (1.0 - (v - lo) / (hi - lo)); };

    for (int k = 0; k <= 4; ++k) { // horizontal grid + y labels
        const double v = lo + (hi - lo) * k / 4.0;
        const double y = py(v);
        detail::draw_line(img, ml, y, W - mr - 1, y, gridc);
        detail::draw_text(img, 4, static_cast<int>(y) - 3, detail::format_tick(v), axis);
    }
    const int xticks = std::min(n, 10);
    for (int k = 0; k < xticks; ++k) {
        const int epoch = 1 + (n - 1) * k / std::max(1, xticks - 1);
        const double x = px(epoch);
        detail::draw_line(img, x, H - mb, x, H - mb + 4, axis);
        detail::draw_text(img, static_cast<int>(x) - 4, H - mb + 8, std::to_string(epoch), axis);
    }
    detail::draw_line(img, ml, mt, ml, H - mb, axis);
    detail::draw_line(img, ml, H - mb, W - mr - 1, H - mb, axis);
    detail::draw_text(img, (W - 30) / 2, H - 14, "epoch", axis);
    detail::draw_text(img, 4, 4, "loss", axis);

    for (int i = 0; i + 1 < n; ++i) {
        detail::draw_line(img, px(i + 1), py(history[i].train_loss), px(i + 2),
                          py(history[i + 1].train_loss), train_c);
        detail::draw_line(img, px(i + 1), py(history[i].val_loss), px(i + 2),
                          py(history[i + 1].val_loss), val_c);
    }
    if (n == 1) {
        detail::draw_line(img, px(1) - 2, py(history[0].train_loss), px(1) + 2,
                          py(history[0].train_loss), train_c);
        detail::draw_line(img, px(1) - 2, py(history[0].val_loss), px(1) + 2,
                          py(history[0].val_loss), val_c);
    }
    detail::draw_line(img, W - mr - 90, mt + 8, W - mr - 70, mt + 8, train_c);
    detail::draw_text(img, W - mr - 64, mt + 4, "train loss", axis);
    detail::draw_line(img, W - mr - 90, mt + 22, W - mr - 70, mt + 22, val_c);
    detail::draw_text(img, W - mr - 64, mt + 18, "val loss", axis);

    save_png_rgb8(path, img);
}

// Original | probability map | binary prediction, side by side.
inline void save_panel_png(const GrayImage& original, const ProbabilityMap& probability,
                           const BinaryMask& mask, const std::filesystem::path& path) {
    require(original.same_shape(mask) && original.height() == probability.height() &&
                original.width() == probability.width(),
            ErrorKind::validation, "panel inputs differ in shape");
    const int gap = 4;
    const int h = original.height(), w = original.width();
    RgbImage img(h, 3 * w + 2 * gap, Rgb{255, 255, 255});
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const std::uint8_t g = original.at(r, c);
            img.at(r, c) = {g, g, g};
            const float p = probability.at(r, c);
            const auto pv = static_cast<std::uint8_t>(
                std::lround((p < 0.f ? 0.f : (p > 1.f ? 1.f : p)) * 255.0f));
            img.at(r, w + gap + c) = {pv, pv, pv};
            const std::uint8_t m = mask.at(r, c) ? 255 : 0;
            img.at(r, 2 * (w + gap) + c) = {m, m, m};
        }
    save_png_rgb8(path, img);
}

} // namespace rockseg
