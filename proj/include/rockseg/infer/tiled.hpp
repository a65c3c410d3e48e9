#pragma once

#include <cmath>
#include <thread>
#include <vector>

#include "rockseg/core/tiling.hpp"
#include "rockseg/model/model.hpp"

namespace rockseg {

struct TilingConfig {
    int patch_size = 256;
    int stride = 128;
    BlendWindow window = BlendWindow::hann_squared;
    double threshold = 0.5;

    void validate() const {
        require(patch_size >= 1 && stride >= 1 && stride <= patch_size, ErrorKind::validation,
                "tiling: need 1 <= stride <= patch_size");
        require(threshold > 0.0 && threshold < 1.0, ErrorKind::validation,
                "tiling: threshold must be in (0,1)");
    }
};

inline BlendWindow blend_window_from_name(const std::string& s) {
    if (s == "unit") return BlendWindow::unit;
    if (s == "hann_squared" || s == "hann2") return BlendWindow::hann_squared;
    raise(ErrorKind::validation, "unknown blend window: " + s);
}

inline const char* blend_window_name(BlendWindow w) {
    return w == BlendWindow::unit ? "unit" : "hann_squared";
}

// Foreground likelihood for one normalized patch under a box prompt.
template <typename T>
ProbabilityMap predict_patch(const Model<T>& model, const Image<float>& patch,
                             const BoundingBox& box) {
    const auto emb = model.encode_image(patch);
    const auto prompt = model.encode_prompt(box);
    Image<float> logits = model.decode_mask(emb, prompt);
    ProbabilityMap prob(logits.height(), logits.width());
    for (std::size_t i = 0; i < prob.size(); ++i)
        prob.data()[i] = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(logits.data()[i]))));
    return prob;
}

// Probability > threshold becomes foreground (ties stay background).
inline BinaryMask binarize(const ProbabilityMap& prob, double threshold) {
    require(threshold > 0.0 && threshold < 1.0, ErrorKind::validation,
            "binarize: threshold must be in (0,1)");
    return prob.map<std::uint8_t>(
        [threshold](float v) { return static_cast<std::uint8_t>(v > threshold ? 1 : 0); });
}

struct Segmentation {
    BinaryMask mask;
    ProbabilityMap probability;
};

// Full-image segmentation: reflect-pad, tile, predict each patch under a
// full-patch box prompt, blend the overlapping probability maps, crop back
// to the input shape, and threshold. Patch predictions are independent, so
// they may run on several threads; results land in a preallocated slot per
// patch and stitching runs in grid order, keeping the output identical for
// any worker count.
template <typename T>
Segmentation segment_image(const Model<T>& model, const GrayImage& image,
                           const TilingConfig& tiling, int workers = 1) {
    tiling.validate();
    require(tiling.patch_size == model.config.patch_input_size, ErrorKind::validation,
            "tiling patch size must match the model's patch input size");
    auto [padded, pads] = pad_to_multiple(image, tiling.patch_size);
    auto [patches, grid] =
        extract_patches(padded, tiling.patch_size, tiling.stride, pads.first, pads.second);

    const BoundingBox box = full_patch_box(tiling.patch_size, tiling.patch_size);
    std::vector<ProbabilityMap> maps(patches.size());
    auto predict_range = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i)
            maps[i] = predict_patch(model, normalize_patch(patches[i]), box);
    };
    if (workers <= 1 || patches.size() <= 1) {
        predict_range(0, patches.size());
    } else {
        const std::size_t n = patches.size();
        const int t = std::min<std::size_t>(workers, n);
        std::vector<std::thread> threads;
        for (int w = 0; w < t; ++w) {
            const std::size_t begin = n * w / t, end = n * (w + 1) / t;
            threads.emplace_back(predict_range, begin, end);
        }
        for (auto& th : threads) th.join();
    }

    Segmentation out;
    out.probability = stitch_patches(maps, grid, tiling.window);
    out.mask = binarize(out.probability, tiling.threshold);
    return out;
}

} // namespace rockseg
