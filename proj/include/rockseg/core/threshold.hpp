#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "rockseg/core/error.hpp"
#include "rockseg/core/image.hpp"

namespace rockseg {

using Histogram256 = std::array<std::uint64_t, 256>;

inline Histogram256 intensity_histogram(const GrayImage& image) {
    Histogram256 h{};
    for (auto v : image) ++h[v];
    return h;
}

namespace detail {

// Mean of histogram mass in bins [lo, hi]; caller guarantees nonzero mass.
inline double bin_mean(const Histogram256& h, int lo, int hi) {
    double count = 0.0, sum = 0.0;
    for (int i = lo; i <= hi; ++i) {
        count += static_cast<double>(h[i]);
        sum += static_cast<double>(h[i]) * i;
    }
    return sum / count;
}

} // namespace detail

// Iterative intensity threshold: t converges to the midpoint of the class
// means below/at t and above t. Starts from the global mean, stops when the
// level no longer moves (< 0.5 after rounding to integer levels), capped at
// 100 iterations. Pixels <= t are background, > t foreground.
inline int isodata_threshold(const Histogram256& hist) {
    int min_v = -1, max_v = -1;
    for (int i = 0; i < 256; ++i) {
        if (hist[i] != 0) {
            if (min_v < 0) min_v = i;
            max_v = i;
        }
    }
    require(min_v >= 0, ErrorKind::degenerate_input, "isodata: empty histogram");
    require(min_v != max_v, ErrorKind::degenerate_input,
            "isodata: constant image has no separable classes");

    auto clamp_level = [&](long t) {
        // keep both classes nonempty: t in [min_v, max_v - 1]
        if (t < min_v) return min_v;
        if (t > max_v - 1) return max_v - 1;
        return static_cast<int>(t);
    };

    int t = clamp_level(std::lround(detail::bin_mean(hist, 0, 255)));
    int prev2 = -1;
    for (int iter = 0; iter < 100; ++iter) {
        double below = detail::bin_mean(hist, 0, t);
        double above = detail::bin_mean(hist, t + 1, 255);
        int next = clamp_level(std::lround((below + above) / 2.0));
        if (next == t) return t;
        if (next == prev2) {
            // two-cycle between adjacent levels; keep the one closer to its midpoint
            double mid_t = (detail::bin_mean(hist, 0, t) + detail::bin_mean(hist, t + 1, 255)) / 2.0;
            double mid_n = (detail::bin_mean(hist, 0, next) + detail::bin_mean(hist, next + 1, 255)) / 2.0;
            return std::fabs(mid_t - t) <= std::fabs(mid_n - next) ? t : next;
        }
        prev2 = t;
        t = next;
    }
    return t;
}

inline int isodata_threshold(const GrayImage& image) {
    return isodata_threshold(intensity_histogram(image));
}

// Hard classification of a grayscale image at level t.
inline BinaryMask binarize_grayscale(const GrayImage& image, int threshold) {
    return image.map<std::uint8_t>(
        [threshold](std::uint8_t v) { return static_cast<std::uint8_t>(v > threshold ? 1 : 0); });
}

} // namespace rockseg
