#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "rockseg/core/io.hpp"
#include "rockseg/core/threshold.hpp"
#include "rockseg/core/tiling.hpp"
#include "rockseg/prompts.hpp"

namespace rockseg {

enum class SourceTag { CT, SEM };

inline const char* source_tag_name(SourceTag t) { return t == SourceTag::CT ? "CT" : "SEM"; }

inline SourceTag source_tag_from_name(const std::string& s) {
    if (s == "CT" || s == "ct") return SourceTag::CT;
    if (s == "SEM" || s == "sem") return SourceTag::SEM;
    raise(ErrorKind::validation, "unknown source tag: " + s);
}

// Files whose stem mentions "sem" are electron-microscopy images, everything
// else is CT.
inline SourceTag tag_from_stem(const std::string& stem) {
    std::string lower = stem;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return lower.find("sem") != std::string::npos ? SourceTag::SEM : SourceTag::CT;
}

// One training sample: a normalized image patch, its binary mask, the box
// prompt derived from the mask, and the imaging modality it came from.
struct SampleRecord {
    Image<float> image;
    BinaryMask mask;
    BoundingBox box;
    SourceTag tag = SourceTag::CT;
    std::string name;
};

struct DatasetOptions {
    int patch_size = 256;
    double min_foreground_fraction = 0.01;
    int box_jitter = 0;
    std::uint64_t seed = 0;
    bool per_object = false; // one record per connected component instead of per patch
};

// Filename-matched (image, mask) pairs from an images/ + masks/ layout.
inline std::vector<std::pair<std::filesystem::path, std::filesystem::path>>
matched_pairs(const std::filesystem::path& images_dir, const std::filesystem::path& masks_dir) {
    namespace fs = std::filesystem;
    require(fs::is_directory(images_dir), ErrorKind::layout,
            "missing images directory: " + images_dir.string());
    require(fs::is_directory(masks_dir), ErrorKind::layout,
            "missing masks directory: " + masks_dir.string());
    std::vector<std::pair<fs::path, fs::path>> pairs;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(images_dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        const fs::path m = masks_dir / f.filename();
        if (fs::exists(m)) pairs.emplace_back(f, m);
    }
    require(!pairs.empty(), ErrorKind::layout,
            "no filename-matched image/mask pairs under " + images_dir.string());
    return pairs;
}

// Patchifies one image/mask pair into selected training records.
inline std::vector<SampleRecord> records_from_pair(const GrayImage& image, const BinaryMask& mask,
                                                   const std::string& stem,
                                                   const DatasetOptions& opt) {
    require(image.same_shape(mask), ErrorKind::validation,
            "image and mask shapes differ for " + stem);
    auto [padded_img, pads] = pad_to_multiple(image, opt.patch_size);
    auto [padded_mask, mpads] = pad_to_multiple(mask, opt.patch_size);
    auto [img_patches, grid] =
        extract_patches(padded_img, opt.patch_size, opt.patch_size, pads.first, pads.second);
    auto [mask_patches, mgrid] =
        extract_patches(padded_mask, opt.patch_size, opt.patch_size, mpads.first, mpads.second);
    const auto kept = select_training_indices(mask_patches, opt.min_foreground_fraction);

    const SourceTag tag = tag_from_stem(stem);
    std::vector<SampleRecord> out;
    for (auto i : kept) {
        const auto [r0, c0] = grid.origins[i];
        std::string name = stem + "_r" + std::to_string(r0) + "_c" + std::to_string(c0);
        const std::uint64_t box_seed = Rng::derive(opt.seed, fnv1a64(name));
        if (foreground_count(mask_patches[i]) == 0) continue; // threshold 0 admits empty masks
        if (!opt.per_object) {
            SampleRecord rec;
            rec.image = normalize_patch(img_patches[i]);
            rec.mask = mask_patches[i];
            rec.box = bounding_box_from_mask(mask_patches[i], opt.box_jitter, box_seed);
            rec.tag = tag;
            rec.name = std::move(name);
            out.push_back(std::move(rec));
        } else {
            auto comps = component_prompts(mask_patches[i], opt.box_jitter, box_seed);
            for (std::size_t k = 0; k < comps.size(); ++k) {
                SampleRecord rec;
                rec.image = normalize_patch(img_patches[i]);
                rec.mask = std::move(comps[k].second);
                rec.box = comps[k].first;
                rec.tag = tag;
                rec.name = name + "_o" + std::to_string(k);
                out.push_back(std::move(rec));
            }
        }
    }
    return out;
}

// ---- prepared dataset layout ------------------------------------------------
//
//   <dir>/manifest.json
//   <dir>/prompts.csv                 name,tag,x_min,y_min,x_max,y_max
//   <dir>/patches/images/<name>.png
//   <dir>/patches/masks/<name>.png

inline bool is_prepared_dataset(const std::filesystem::path& dir) {
    return std::filesystem::exists(dir / "manifest.json") &&
           std::filesystem::is_directory(dir / "patches");
}

inline void save_prepared_dataset(const std::filesystem::path& dir,
                                  const std::vector<SampleRecord>& records,
                                  nlohmann::json manifest) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "patches" / "images");
    fs::create_directories(dir / "patches" / "masks");
    std::ofstream csv(dir / "prompts.csv");
    require(csv.good(), ErrorKind::io, "cannot write prompts.csv under " + dir.string());
    csv << "name,tag,x_min,y_min,x_max,y_max\n";
    std::size_t n_ct = 0, n_sem = 0;
    for (const auto& rec : records) {
        (rec.tag == SourceTag::CT ? n_ct : n_sem) += 1;
        csv << rec.name << ',' << source_tag_name(rec.tag) << ',' << rec.box.x_min << ','
            << rec.box.y_min << ',' << rec.box.x_max << ',' << rec.box.y_max << '\n';
        GrayImage img8 = rec.image.map<std::uint8_t>([](float v) {
            const float c = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
            return static_cast<std::uint8_t>(std::lround(c * 255.0f));
        });
        save_png_gray8(dir / "patches" / "images" / (rec.name + ".png"), img8);
        save_mask_png(dir / "patches" / "masks" / (rec.name + ".png"), rec.mask);
    }
    manifest["counts"] = {{"CT", n_ct}, {"SEM", n_sem}};
    manifest["selected"] = records.size();
    std::ofstream mf(dir / "manifest.json");
    require(mf.good(), ErrorKind::io, "cannot write manifest.json under " + dir.string());
    mf << manifest.dump(2) << '\n';
}

inline std::vector<SampleRecord> load_prepared_records(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::ifstream csv(dir / "prompts.csv");
    require(csv.good(), ErrorKind::layout, "prepared dataset missing prompts.csv: " + dir.string());
    std::vector<SampleRecord> out;
    std::string line;
    std::getline(csv, line); // header
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::size_t pos = 0;
        while (true) {
            const auto comma = line.find(',', pos);
            cols.push_back(line.substr(pos, comma - pos));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        require(cols.size() == 6, ErrorKind::format, "bad prompts.csv row: " + line);
        SampleRecord rec;
        rec.name = cols[0];
        rec.tag = source_tag_from_name(cols[1]);
        rec.box = {std::stoi(cols[2]), std::stoi(cols[3]), std::stoi(cols[4]), std::stoi(cols[5])};
        rec.image = normalize_patch(load_grayscale(dir / "patches" / "images" / (rec.name + ".png")));
        rec.mask = load_mask(dir / "patches" / "masks" / (rec.name + ".png"));
        out.push_back(std::move(rec));
    }
    require(!out.empty(), ErrorKind::layout, "prepared dataset has no records: " + dir.string());
    return out;
}

// Loads training records from either a raw images/+masks/ dataset or a
// prepared patch directory.
inline std::vector<SampleRecord> load_training_records(const std::filesystem::path& root,
                                                       const DatasetOptions& opt) {
    if (is_prepared_dataset(root)) return load_prepared_records(root);
    std::vector<SampleRecord> out;
    for (const auto& [img_path, mask_path] : matched_pairs(root / "images", root / "masks")) {
        const GrayImage image = load_grayscale(img_path);
        const BinaryMask mask = load_mask(mask_path);
        auto recs = records_from_pair(image, mask, img_path.stem().string(), opt);
        out.insert(out.end(), std::make_move_iterator(recs.begin()),
                   std::make_move_iterator(recs.end()));
    }
    require(!out.empty(), ErrorKind::validation,
            "no training patches survived selection under " + root.string());
    return out;
}

// Seeded shuffle + split at floor(ratio * N), stratified by source tag when
// both modalities are present.
inline std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>>
split_dataset(const std::vector<SampleRecord>& records, double ratio, std::uint64_t seed) {
    require(records.size() >= 2, ErrorKind::validation, "split_dataset needs at least 2 records");
    require(ratio > 0.0 && ratio < 1.0, ErrorKind::validation, "split ratio must be in (0,1)");

    std::vector<std::size_t> ct, sem;
    for (std::size_t i = 0; i < records.size(); ++i)
        (records[i].tag == SourceTag::CT ? ct : sem).push_back(i);

    std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> out;
    auto split_stratum = [&](std::vector<std::size_t>& idx, std::uint64_t salt) {
        if (idx.empty()) return;
        Rng rng(Rng::derive(seed, salt));
        rng.shuffle(idx.begin(), idx.end());
        const auto n_train = static_cast<std::size_t>(ratio * static_cast<double>(idx.size()));
        for (std::size_t i = 0; i < idx.size(); ++i)
            (i < n_train ? out.first : out.second).push_back(records[idx[i]]);
    };
    split_stratum(ct, 1);
    split_stratum(sem, 2);
    require(!out.first.empty() && !out.second.empty(), ErrorKind::validation,
            "split produced an empty train or validation set");
    return out;
}

} // namespace rockseg
