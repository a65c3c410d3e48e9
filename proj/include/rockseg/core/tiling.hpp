#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "rockseg/core/error.hpp"
#include "rockseg/core/image.hpp"

namespace rockseg {

// Regular tiling geometry over a padded image. Origins are row-major
// (row, col) top-left anchors; the union of patch footprints covers the
// padded extent exactly.
struct PatchGrid {
    int patch_size = 0;
    int stride = 0;
    int padded_height = 0;
    int padded_width = 0;
    int pad_bottom = 0;
    int pad_right = 0;
    std::vector<std::pair<int, int>> origins;

    int original_height() const { return padded_height - pad_bottom; }
    int original_width() const { return padded_width - pad_right; }
};

enum class BlendWindow { unit, hann_squared };

inline PatchGrid make_patch_grid(int padded_height, int padded_width, int patch_size, int stride,
                                 int pad_bottom = 0, int pad_right = 0) {
    require(patch_size >= 1, ErrorKind::validation, "patch size must be >= 1");
    require(stride >= 1, ErrorKind::validation, "stride must be >= 1");
    require(stride <= patch_size, ErrorKind::validation, "stride > patch size would leave gaps");
    require(padded_height >= patch_size && padded_width >= patch_size, ErrorKind::validation,
            "image smaller than one patch");
    require((padded_height - patch_size) % stride == 0 && (padded_width - patch_size) % stride == 0,
            ErrorKind::validation, "stride does not tile the padded extent");

    PatchGrid grid;
    grid.patch_size = patch_size;
    grid.stride = stride;
    grid.padded_height = padded_height;
    grid.padded_width = padded_width;
    grid.pad_bottom = pad_bottom;
    grid.pad_right = pad_right;
    for (int r = 0; r + patch_size <= padded_height; r += stride)
        for (int c = 0; c + patch_size <= padded_width; c += stride)
            grid.origins.emplace_back(r, c);
    return grid;
}

// Reflect-pad bottom/right so both dimensions are multiples of patch_size.
// Reflection excludes the edge pixel (abcd -> abcd|cba), which keeps padded
// content statistically continuous with the interior.
template <typename T>
std::pair<Image<T>, std::pair<int, int>> pad_to_multiple(const Image<T>& image, int patch_size) {
    require(patch_size >= 1, ErrorKind::validation, "patch size must be >= 1");
    auto round_up = [patch_size](int v) { return ((v + patch_size - 1) / patch_size) * patch_size; };
    const int out_h = round_up(image.height());
    const int out_w = round_up(image.width());
    const int pad_b = out_h - image.height();
    const int pad_r = out_w - image.width();
    if (pad_b == 0 && pad_r == 0) return {image, {0, 0}};

    auto reflect = [](int i, int n) {
        if (n == 1) return 0;
        const int period = 2 * n - 2;
        i %= period;
        return i < n ? i : period - i;
    };
    Image<T> out(out_h, out_w);
    for (int r = 0; r < out_h; ++r) {
        const int sr = reflect(r, image.height());
        for (int c = 0; c < out_w; ++c) out.at(r, c) = image.at(sr, reflect(c, image.width()));
    }
    return {out, {pad_b, pad_r}};
}

template <typename T>
std::pair<std::vector<Image<T>>, PatchGrid> extract_patches(const Image<T>& image, int patch_size,
                                                            int stride, int pad_bottom = 0,
                                                            int pad_right = 0) {
    PatchGrid grid =
        make_patch_grid(image.height(), image.width(), patch_size, stride, pad_bottom, pad_right);
    std::vector<Image<T>> patches;
    patches.reserve(grid.origins.size());
    for (auto [r0, c0] : grid.origins) {
        Image<T> p(patch_size, patch_size);
        for (int r = 0; r < patch_size; ++r)
            for (int c = 0; c < patch_size; ++c) p.at(r, c) = image.at(r0 + r, c0 + c);
        patches.push_back(std::move(p));
    }
    return {std::move(patches), std::move(grid)};
}

// Intensities to [0,1].
inline Image<float> normalize_patch(const GrayImage& patch) {
    return patch.map<float>([](std::uint8_t v) { return static_cast<float>(v) / 255.0f; });
}

// Mask values to exact {0,1}; tolerant of 0/255 and 0/1 source encodings.
inline BinaryMask normalize_mask(const GrayImage& patch) {
    return patch.map<std::uint8_t>([](std::uint8_t v) { return static_cast<std::uint8_t>(v > 0 ? 1 : 0); });
}

// Indices of mask patches whose foreground fraction lies in
// [min_fraction, 1 - min_fraction]; order preserving.
inline std::vector<std::size_t> select_training_indices(const std::vector<BinaryMask>& masks,
                                                        double min_foreground_fraction) {
    require(min_foreground_fraction >= 0.0 && min_foreground_fraction <= 0.5, ErrorKind::validation,
            "min foreground fraction must be in [0, 0.5]");
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < masks.size(); ++i) {
        const double f = foreground_fraction(masks[i]);
        if (f >= min_foreground_fraction && f <= 1.0 - min_foreground_fraction) kept.push_back(i);
    }
    return kept;
}

template <typename T>
std::pair<std::vector<Image<T>>, std::vector<BinaryMask>>
select_training_patches(const std::vector<Image<T>>& image_patches,
                        const std::vector<BinaryMask>& mask_patches, double min_foreground_fraction) {
    require(image_patches.size() == mask_patches.size(), ErrorKind::validation,
            "image/mask patch lists differ in length");
    auto kept = select_training_indices(mask_patches, min_foreground_fraction);
    std::pair<std::vector<Image<T>>, std::vector<BinaryMask>> out;
    out.first.reserve(kept.size());
    out.second.reserve(kept.size());
    for (auto i : kept) {
        out.first.push_back(image_patches[i]);
        out.second.push_back(mask_patches[i]);
    }
    return out;
}

// 1D blend profile for a given window kind. The shifted-by-half-a-pixel Hann
// bump is strictly positive, so border pixels always receive weight.
inline std::vector<double> blend_profile(BlendWindow window, int n) {
    constexpr double pi = 3.14159265358979323846;
    std::vector<double> w(n, 1.0);
    if (window == BlendWindow::hann_squared) {
        for (int i = 0; i < n; ++i) {
            const double s = std::sin(pi * (i + 0.5) / n);
            w[i] = (s * s) * (s * s);
        }
    }
    return w;
}

// Weighted overlap-add of per-patch maps back onto the padded extent,
// normalized by the accumulated window weight, then cropped by the grid's
// pad amounts. Unit window with stride == patch_size reproduces inputs
// exactly (each pixel is covered once with weight 1).
inline ProbabilityMap stitch_patches(const std::vector<ProbabilityMap>& patch_maps,
                                     const PatchGrid& grid, BlendWindow window) {
    require(patch_maps.size() == grid.origins.size(), ErrorKind::validation,
            "patch map count does not match grid origins");
    const int p = grid.patch_size;
    for (const auto& m : patch_maps)
        require(m.height() == p && m.width() == p, ErrorKind::validation,
                "patch map shape does not match grid patch size");

    const auto profile = blend_profile(window, p);
    Image<double> acc(grid.padded_height, grid.padded_width, 0.0);
    Image<double> wsum(grid.padded_height, grid.padded_width, 0.0);
    for (std::size_t i = 0; i < patch_maps.size(); ++i) {
        const auto [r0, c0] = grid.origins[i];
        const auto& m = patch_maps[i];
        for (int r = 0; r < p; ++r) {
            const double wr = profile[r];
            for (int c = 0; c < p; ++c) {
                const double w = wr * profile[c];
                acc.at(r0 + r, c0 + c) += w * m.at(r, c);
                wsum.at(r0 + r, c0 + c) += w;
            }
        }
    }

    ProbabilityMap out(grid.original_height(), grid.original_width());
    for (int r = 0; r < out.height(); ++r)
        for (int c = 0; c < out.width(); ++c) {
            const double w = wsum.at(r, c);
            require(w > 0.0, ErrorKind::coverage, "pixel received zero blend weight");
            out.at(r, c) = static_cast<float>(acc.at(r, c) / w);
        }
    return out;
}

} // namespace rockseg
