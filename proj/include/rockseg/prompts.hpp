#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "rockseg/core/error.hpp"
#include "rockseg/core/image.hpp"
#include "rockseg/core/rng.hpp"

namespace rockseg {

// Box prompt in pixel coordinates, inclusive on all sides. x is the column
// axis, y the row axis.
struct BoundingBox {
    int x_min = 0;
    int y_min = 0;
    int x_max = 0;
    int y_max = 0;

    bool operator==(const BoundingBox&) const = default;

    bool valid_for(int height, int width) const {
        return 0 <= x_min && x_min <= x_max && x_max < width && 0 <= y_min && y_min <= y_max &&
               y_max < height;
    }
    int box_width() const { return x_max - x_min + 1; }
    int box_height() const { return y_max - y_min + 1; }
};

// Prompt covering the whole patch, used at inference time when no ground
// truth exists to derive a tight box from.
inline BoundingBox full_patch_box(int height, int width) {
    require(height >= 1 && width >= 1, ErrorKind::validation, "patch dimensions must be >= 1");
    return {0, 0, width - 1, height - 1};
}

namespace detail {

inline BoundingBox jitter_box(BoundingBox box, int height, int width, int jitter, Rng& rng) {
    if (jitter > 0) {
        // each side displaced outward independently, then clamped to the patch
        box.x_min = std::max(0, box.x_min - rng.next_int(0, jitter));
        box.y_min = std::max(0, box.y_min - rng.next_int(0, jitter));
        box.x_max = std::min(width - 1, box.x_max + rng.next_int(0, jitter));
        box.y_max = std::min(height - 1, box.y_max + rng.next_int(0, jitter));
    }
    return box;
}

} // namespace detail

// Tight box over all foreground pixels of the mask, optionally enlarged by a
// random outward jitter of at most `jitter` pixels per side.
inline BoundingBox bounding_box_from_mask(const BinaryMask& mask, int jitter = 0,
                                          std::uint64_t seed = 0) {
    require(jitter >= 0, ErrorKind::validation, "jitter must be >= 0");
    int x_min = mask.width(), x_max = -1, y_min = mask.height(), y_max = -1;
    for (int r = 0; r < mask.height(); ++r) {
        const auto* row = mask.row(r);
        for (int c = 0; c < mask.width(); ++c) {
            if (row[c] != 0) {
                x_min = std::min(x_min, c);
                x_max = std::max(x_max, c);
                y_min = std::min(y_min, r);
                y_max = std::max(y_max, r);
            }
        }
    }
    require(x_max >= 0, ErrorKind::empty_mask, "mask has no foreground pixels");
    Rng rng(seed);
    return detail::jitter_box({x_min, y_min, x_max, y_max}, mask.height(), mask.width(), jitter, rng);
}

// One box per 4-connected foreground component, in discovery (scanline)
// order. The "one prompt per object" alternative to the union box above.
inline std::vector<BoundingBox> component_bounding_boxes(const BinaryMask& mask, int jitter = 0,
                                                         std::uint64_t seed = 0) {
    require(jitter >= 0, ErrorKind::validation, "jitter must be >= 0");
    const int h = mask.height(), w = mask.width();
    std::vector<std::int32_t> label(mask.size(), -1);
    std::vector<BoundingBox> boxes;
    std::vector<std::pair<int, int>> stack;
    Rng rng(seed);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const std::size_t idx = static_cast<std::size_t>(r) * w + c;
            if (mask.at(r, c) == 0 || label[idx] >= 0) continue;
            const auto id = static_cast<std::int32_t>(boxes.size());
            BoundingBox box{c, r, c, r};
            label[idx] = id;
            stack.push_back({r, c});
            while (!stack.empty()) {
                auto [cr, cc] = stack.back();
                stack.pop_back();
                box.x_min = std::min(box.x_min, cc);
                box.x_max = std::max(box.x_max, cc);
                box.y_min = std::min(box.y_min, cr);
                box.y_max = std::max(box.y_max, cr);
                constexpr int dr[4] = {-1, 1, 0, 0};
                constexpr int dc[4] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    const int nr = cr + dr[k], nc = cc + dc[k];
                    if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
                    const std::size_t nidx = static_cast<std::size_t>(nr) * w + nc;
                    if (mask.at(nr, nc) != 0 && label[nidx] < 0) {
                        label[nidx] = id;
                        stack.push_back({nr, nc});
                    }
                }
            }
            boxes.push_back(detail::jitter_box(box, h, w, jitter, rng));
        }
    }
    require(!boxes.empty(), ErrorKind::empty_mask, "mask has no foreground pixels");
    return boxes;
}

// Mask restricted to the component whose label matches; used by the
// one-prompt-per-object training mode.
inline std::vector<std::pair<BoundingBox, BinaryMask>>
component_prompts(const BinaryMask& mask, int jitter = 0, std::uint64_t seed = 0) {
    const int h = mask.height(), w = mask.width();
    std::vector<std::int32_t> label(mask.size(), -1);
    std::vector<std::pair<BoundingBox, BinaryMask>> out;
    std::vector<std::pair<int, int>> stack;
    Rng rng(seed);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const std::size_t idx = static_cast<std::size_t>(r) * w + c;
            if (mask.at(r, c) == 0 || label[idx] >= 0) continue;
            const auto id = static_cast<std::int32_t>(out.size());
            BoundingBox box{c, r, c, r};
            BinaryMask comp(h, w, 0);
            label[idx] = id;
            stack.push_back({r, c});
            while (!stack.empty()) {
                auto [cr, cc] = stack.back();
                stack.pop_back();
                comp.at(cr, cc) = 1;
                box.x_min = std::min(box.x_min, cc);
                box.x_max = std::max(box.x_max, cc);
                box.y_min = std::min(box.y_min, cr);
                box.y_max = std::max(box.y_max, cr);
                constexpr int dr[4] = {-1, 1, 0, 0};
                constexpr int dc[4] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    const int nr = cr + dr[k], nc = cc + dc[k];
                    if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
                    const std::size_t nidx = static_cast<std::size_t>(nr) * w + nc;
                    if (mask.at(nr, nc) != 0 && label[nidx] < 0) {
                        label[nidx] = id;
                        stack.push_back({nr, nc});
                    }
                }
            }
            out.emplace_back(detail::jitter_box(box, h, w, jitter, rng), std::move(comp));
        }
    }
    require(!out.empty(), ErrorKind::empty_mask, "mask has no foreground pixels");
    return out;
}

} // namespace rockseg
