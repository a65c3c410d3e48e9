#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rockseg/cli/config.hpp"
#include "rockseg/metrics.hpp"
#include "rockseg/train/fine_tune.hpp"
#include "rockseg/viz/figure.hpp"

namespace rockseg::cli {

namespace detail {

inline bool looks_like_image(const std::filesystem::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".png" || ext == ".tif" || ext == ".tiff";
}

inline std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && looks_like_image(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    return files;
}

} // namespace detail

// ---- prepare ----------------------------------------------------------------

inline int cmd_prepare(const PipelineConfig& cfg, bool use_isodata, bool isodata_global) {
    namespace fs = std::filesystem;
    require(fs::is_directory(cfg.images_dir), ErrorKind::layout,
            "missing images directory: " + cfg.images_dir.string());
    const auto image_files = detail::list_images(cfg.images_dir);
    require(!image_files.empty(), ErrorKind::layout,
            "no images under " + cfg.images_dir.string());

    const bool have_masks =
        fs::is_directory(cfg.masks_dir) && !detail::list_images(cfg.masks_dir).empty();
    require(have_masks || use_isodata, ErrorKind::layout,
            "no masks found; provide a masks directory or pass --isodata to derive them");

    DatasetOptions opt;
    opt.patch_size = cfg.model.patch_input_size;
    opt.min_foreground_fraction = cfg.train.min_foreground_fraction;
    opt.box_jitter = cfg.train.box_jitter;
    opt.seed = cfg.seed;
    opt.per_object = cfg.train.per_object;

    nlohmann::json manifest;
    manifest["patch_size"] = opt.patch_size;
    manifest["min_foreground_fraction"] = opt.min_foreground_fraction;
    manifest["box_jitter"] = opt.box_jitter;
    manifest["per_object"] = opt.per_object;
    manifest["seed"] = opt.seed;

    std::vector<SampleRecord> records;
    std::size_t total_candidates = 0;
    if (have_masks) {
        for (const auto& [img_path, mask_path] : matched_pairs(cfg.images_dir, cfg.masks_dir)) {
            const GrayImage image = load_grayscale(img_path);
            const BinaryMask mask = load_mask(mask_path);
            auto [padded, pads] = pad_to_multiple(image, opt.patch_size);
            total_candidates += make_patch_grid(padded.height(), padded.width(), opt.patch_size,
                                                opt.patch_size, pads.first, pads.second)
                                    .origins.size();
            auto recs = records_from_pair(image, mask, img_path.stem().string(), opt);
            records.insert(records.end(), std::make_move_iterator(recs.begin()),
                           std::make_move_iterator(recs.end()));
        }
        manifest["mask_source"] = "provided";
    } else {
        // derive masks by automatic intensity thresholding
        nlohmann::json levels;
        int global_level = -1;
        if (isodata_global) {
            Histogram256 pooled{};
            for (const auto& f : image_files) {
                const auto h = intensity_histogram(load_grayscale(f));
                for (int i = 0; i < 256; ++i) pooled[i] += h[i];
            }
            global_level = isodata_threshold(pooled);
        }
        const fs::path gen_dir = cfg.out_dir / "generated_masks";
        fs::create_directories(gen_dir);
        for (const auto& f : image_files) {
            const GrayImage image = load_grayscale(f);
            const int level = isodata_global ? global_level : isodata_threshold(image);
            const BinaryMask mask = binarize_grayscale(image, level);
            levels[f.stem().string()] = level;
            save_mask_png(gen_dir / (f.stem().string() + ".png"), mask);
            auto [padded, pads] = pad_to_multiple(image, opt.patch_size);
            total_candidates += make_patch_grid(padded.height(), padded.width(), opt.patch_size,
                                                opt.patch_size, pads.first, pads.second)
                                    .origins.size();
            auto recs = records_from_pair(image, mask, f.stem().string(), opt);
            records.insert(records.end(), std::make_move_iterator(recs.begin()),
                           std::make_move_iterator(recs.end()));
        }
        manifest["mask_source"] = isodata_global ? "isodata-global" : "isodata";
        manifest["isodata_levels"] = levels;
        if (isodata_global) manifest["isodata_global_level"] = global_level;
    }
    manifest["candidates"] = total_candidates;

    require(!records.empty(), ErrorKind::validation,
            "no patches survived selection; lower min_foreground_fraction?");
    save_prepared_dataset(cfg.out_dir, records, manifest);
    cfg.echo_into(cfg.out_dir);

    std::size_t n_ct = 0, n_sem = 0;
    for (const auto& r : records) (r.tag == SourceTag::CT ? n_ct : n_sem) += 1;
    std::cout << "prepared " << records.size() << " patches (" << n_ct << " CT, " << n_sem
              << " SEM) from " << image_files.size() << " images; " << total_candidates
              << " candidates before selection\n";
    return 0;
}

// ---- train --------------------------------------------------------------------

inline int cmd_train(const PipelineConfig& cfg) {
    namespace fs = std::filesystem;
    require(!cfg.prepared_dir.empty() && is_prepared_dataset(cfg.prepared_dir), ErrorKind::layout,
            "missing prepared dataset (run the prepare command first): " +
                cfg.prepared_dir.string());
    fs::create_directories(cfg.out_dir);
    const FineTuneResult result = fine_tune(cfg.prepared_dir, cfg.model, cfg.train, cfg.out_dir,
                                            cfg.workers);
    write_history_csv(result.state.history, cfg.out_dir / "history.csv");
    save_loss_curve_png(result.state.history, cfg.out_dir / "loss_curve.png");
    cfg.echo_into(cfg.out_dir);
    std::cout << "trained " << result.state.history.size() << " epochs; best val loss "
              << result.state.best_val_loss << " at epoch " << result.state.best_epoch
              << "\ncheckpoint: " << result.state.best_checkpoint_path << '\n';
    return 0;
}

// ---- infer --------------------------------------------------------------------

enum class ProbFormat { png16, csv, both, none };

inline ProbFormat prob_format_from_name(const std::string& s) {
    if (s == "png16") return ProbFormat::png16;
    if (s == "csv") return ProbFormat::csv;
    if (s == "both") return ProbFormat::both;
    if (s == "none") return ProbFormat::none;
    raise(ErrorKind::validation, "unknown probability output format: " + s);
}

inline int cmd_infer(const PipelineConfig& cfg, const std::filesystem::path& input,
                     ProbFormat prob_format) {
    namespace fs = std::filesystem;
    require(!cfg.checkpoint.empty(), ErrorKind::validation,
            "no checkpoint given (set run.checkpoint or pass --checkpoint)");
    Model<float> model = cfg.model.backbone == Backbone::toy
                             ? Model<float>::build_toy(cfg.model, cfg.seed)
                             : Model<float>::build_uninitialized(cfg.model);
    load_checkpoint(model, cfg.checkpoint);

    std::vector<fs::path> inputs;
    if (fs::is_directory(input)) {
        inputs = detail::list_images(input);
        require(!inputs.empty(), ErrorKind::layout, "no images under " + input.string());
    } else {
        inputs.push_back(input);
    }
    fs::create_directories(cfg.out_dir);

    std::size_t failures = 0;
    std::string first_error;
    for (const auto& path : inputs) {
        try {
            const GrayImage image = load_grayscale(path);
            const Segmentation seg = segment_image(model, image, cfg.tiling, cfg.workers);
            const std::string stem = path.stem().string();
            save_mask_png(cfg.out_dir / (stem + "_mask.png"), seg.mask);
            if (prob_format == ProbFormat::png16 || prob_format == ProbFormat::both)
                save_png_gray16(cfg.out_dir / (stem + "_prob.png"), seg.probability);
            if (prob_format == ProbFormat::csv || prob_format == ProbFormat::both)
                save_prob_csv(cfg.out_dir / (stem + "_prob.csv"), seg.probability);
            save_panel_png(image, seg.probability, seg.mask, cfg.out_dir / (stem + "_panel.png"));
        } catch (const Error& e) {
            ++failures;
            if (first_error.empty()) first_error = e.what();
            std::cerr << "error: " << path.string() << ": " << e.what() << '\n';
        }
    }
    cfg.echo_into(cfg.out_dir);
    if (failures == inputs.size()) raise(ErrorKind::io, "all inputs failed: " + first_error);
    std::cout << "segmented " << (inputs.size() - failures) << '/' << inputs.size()
              << " images into " << cfg.out_dir.string() << '\n';
    return failures > 0 ? exit_code_partial_failure : 0;
}

// ---- evaluate -------------------------------------------------------------------

inline int cmd_evaluate(const std::filesystem::path& pred_dir,
                        const std::filesystem::path& truth_dir,
                        const std::filesystem::path& out_dir) {
    std::vector<EvalPair> pairs;
    for (const auto& [pred_path, truth_path] : matched_pairs(pred_dir, truth_dir))
        pairs.push_back({load_mask(pred_path), load_mask(truth_path), pred_path.stem().string()});
    const MetricsReport report = evaluate_set(pairs);
    print_report(report, std::cout);
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream os(out_dir / "report.csv");
        require(os.good(), ErrorKind::io, "cannot write report.csv under " + out_dir.string());
        write_report_csv(report, os);
    }
    return 0;
}

// ---- entry point ------------------------------------------------------------------

inline int run(const std::vector<std::string>& args) {
    CLI::App app{"Promptable segmentation pipeline for large grayscale rock images"};
    app.require_subcommand(1);

    std::string config_path, out_override, window_override, prob_format_name = "png16";
    std::string checkpoint_override, pred_dir, truth_dir, input_path;
    std::uint64_t seed_override = 0;
    bool seed_given = false, isodata = false, isodata_global = false, per_object = false;
    int stride_override = 0, workers_override = 0;
    double threshold_override = 0.0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "configuration file (INI)");
        sub->add_option("--seed", seed_override, "seed override")->each([&](const std::string&) {
            seed_given = true;
        });
        sub->add_option("--out", out_override, "output directory override");
    };

    CLI::App* prepare = app.add_subcommand("prepare", "patchify a dataset and derive box prompts");
    add_common(prepare);
    prepare->add_flag("--isodata", isodata, "derive masks by automatic intensity thresholding");
    prepare->add_flag("--isodata-global", isodata_global,
                      "use one pooled threshold for the whole dataset");
    prepare->add_flag("--per-object", per_object, "one prompt per connected component");

    CLI::App* train = app.add_subcommand("train", "fine-tune the mask decoder");
    add_common(train);
    train->add_option("--workers", workers_override, "data-parallel worker count");

    CLI::App* infer = app.add_subcommand("infer", "segment full images with tiled inference");
    add_common(infer);
    infer->add_option("input", input_path, "image file or directory")->required();
    infer->add_option("--checkpoint", checkpoint_override, "trained checkpoint");
    infer->add_option("--stride", stride_override, "tiling stride");
    infer->add_option("--threshold", threshold_override, "binarization threshold");
    infer->add_option("--window", window_override, "blend window: unit | hann_squared");
    infer->add_option("--prob-format", prob_format_name,
                      "probability map output: png16 | csv | both | none");
    infer->add_option("--workers", workers_override, "patch-prediction worker count");

    CLI::App* evaluate = app.add_subcommand("evaluate", "score predictions against ground truth");
    add_common(evaluate);
    evaluate->add_option("--pred", pred_dir, "predicted mask directory")->required();
    evaluate->add_option("--truth", truth_dir, "ground-truth mask directory")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        PipelineConfig cfg = config_path.empty()
                                 ? PipelineConfig::from_ini(IniFile{})
                                 : PipelineConfig::from_ini(IniFile::parse_file(config_path));
        if (seed_given) {
            cfg.seed = seed_override;
            cfg.train.seed = seed_override;
        }
        if (!out_override.empty()) cfg.out_dir = out_override;
        if (workers_override > 0) cfg.workers = workers_override;
        if (per_object) cfg.train.per_object = true;
        if (!checkpoint_override.empty()) cfg.checkpoint = checkpoint_override;
        if (stride_override > 0) cfg.tiling.stride = stride_override;
        if (threshold_override > 0.0) cfg.tiling.threshold = threshold_override;
        if (!window_override.empty()) cfg.tiling.window = blend_window_from_name(window_override);

        if (prepare->parsed()) return cmd_prepare(cfg, isodata, isodata_global);
        if (train->parsed()) return cmd_train(cfg);
        if (infer->parsed()) return cmd_infer(cfg, input_path, prob_format_from_name(prob_format_name));
        if (evaluate->parsed())
            return cmd_evaluate(pred_dir, truth_dir,
                                out_override.empty() ? cfg.out_dir : std::filesystem::path(out_override));
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

inline int run(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args);
}

} // namespace rockseg::cli
