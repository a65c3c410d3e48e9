#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "rockseg/core/error.hpp"

namespace rockseg {

// Dense row-major 2D raster. The one container every stage of the pipeline
// passes around; pixel type selects the role (see aliases below).
template <typename T>
class Image {
public:
    Image() = default;
    Image(int height, int width, T fill = T{})
        : height_(height), width_(width), pixels_(static_cast<std::size_t>(height) * width, fill) {
        require(height >= 1 && width >= 1, ErrorKind::validation, "image dimensions must be >= 1");
    }

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t size() const noexcept { return pixels_.size(); }
    bool empty() const noexcept { return pixels_.empty(); }

    T& at(int r, int c) { return pixels_[static_cast<std::size_t>(r) * width_ + c]; }
    const T& at(int r, int c) const { return pixels_[static_cast<std::size_t>(r) * width_ + c]; }

    T* row(int r) { return pixels_.data() + static_cast<std::size_t>(r) * width_; }
    const T* row(int r) const { return pixels_.data() + static_cast<std::size_t>(r) * width_; }

    T* data() noexcept { return pixels_.data(); }
    const T* data() const noexcept { return pixels_.data(); }

    auto begin() noexcept { return pixels_.begin(); }
    auto end() noexcept { return pixels_.end(); }
    auto begin() const noexcept { return pixels_.begin(); }
    auto end() const noexcept { return pixels_.end(); }

    bool same_shape(const Image& other) const noexcept {
        return height_ == other.height_ && width_ == other.width_;
    }

    bool operator==(const Image& other) const = default;

    template <typename U, typename F>
    Image<U> map(F&& f) const {
        Image<U> out(height_, width_);
        std::transform(begin(), end(), out.begin(), std::forward<F>(f));
        return out;
    }

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<T> pixels_;
};

// 8-bit intensities in [0,255].
using GrayImage = Image<std::uint8_t>;
// Values restricted to {0,1}.
using BinaryMask = Image<std::uint8_t>;
// Per-pixel foreground likelihood in [0,1].
using ProbabilityMap = Image<float>;

inline bool is_binary(const BinaryMask& mask) {
    return std::all_of(mask.begin(), mask.end(), [](std::uint8_t v) { return v <= 1; });
}

inline std::size_t foreground_count(const BinaryMask& mask) {
    std::size_t n = 0;
    for (auto v : mask)
        if (v != 0) ++n;
    return n;
}

inline double foreground_fraction(const BinaryMask& mask) {
    return static_cast<double>(foreground_count(mask)) / static_cast<double>(mask.size());
}

} // namespace rockseg
