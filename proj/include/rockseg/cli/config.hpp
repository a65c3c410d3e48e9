#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "rockseg/infer/tiled.hpp"
#include "rockseg/model/config.hpp"
#include "rockseg/train/loop.hpp"

namespace rockseg::cli {

// Sectioned key = value configuration text ('#' or ';' comments).
class IniFile {
public:
    IniFile() = default;

    static IniFile parse_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        require(in.good(), ErrorKind::io, "cannot open config file: " + path.string());
        std::ostringstream os;
        os << in.rdbuf();
        return parse(os.str(), path.string());
    }

    static IniFile parse(const std::string& text, const std::string& what = "<config>") {
        IniFile ini;
        std::istringstream is(text);
        std::string line, section;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto comment = line.find_first_of("#;");
            if (comment != std::string::npos) line.resize(comment);
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            if (trimmed.front() == '[') {
                require(trimmed.back() == ']', ErrorKind::format,
                        what + ":" + std::to_string(lineno) + ": unterminated section header");
                section = trim(trimmed.substr(1, trimmed.size() - 2));
                continue;
            }
            const auto eq = trimmed.find('=');
            require(eq != std::string::npos, ErrorKind::format,
                    what + ":" + std::to_string(lineno) + ": expected key = value");
            ini.values_[section + "." + trim(trimmed.substr(0, eq))] = trim(trimmed.substr(eq + 1));
        }
        return ini;
    }

    bool has(const std::string& key) const { return values_.contains(key); }

    std::string get(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }
    int get_int(const std::string& key, int fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : std::stoi(it->second);
    }
    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : std::stod(it->second);
    }
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : std::stoull(it->second);
    }
    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        const std::string& v = it->second;
        if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
        if (v == "false" || v == "0" || v == "no" || v == "off") return false;
        raise(ErrorKind::format, "not a boolean: " + key + " = " + v);
    }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return {};
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }
    std::map<std::string, std::string> values_;
};

// Everything a pipeline command needs, assembled from the config file with
// command-line overrides applied on top.
struct PipelineConfig {
    std::filesystem::path images_dir;
    std::filesystem::path masks_dir;
    std::filesystem::path prepared_dir;
    ModelConfig model;
    TrainConfig train;
    TilingConfig tiling;
    std::filesystem::path out_dir = "out";
    std::filesystem::path checkpoint;
    std::uint64_t seed = 0;
    int workers = 1;

    static PipelineConfig from_ini(const IniFile& ini) {
        PipelineConfig c;
        c.images_dir = ini.get("dataset.images", "");
        c.masks_dir = ini.get("dataset.masks", "");
        c.prepared_dir = ini.get("dataset.prepared", "");

        c.model = backbone_from_name(ini.get("model.backbone", "toy")) == Backbone::toy
                      ? ModelConfig::toy()
                      : ModelConfig::pretrained_base();
        c.model.patch_input_size = ini.get_int("model.patch_input_size", c.model.patch_input_size);
        c.model.encoder_input_size = ini.get_int("model.encoder_input_size", c.model.encoder_input_size);
        c.model.encoder_token_size = ini.get_int("model.encoder_token_size", c.model.encoder_token_size);
        c.model.encoder_embed_dim = ini.get_int("model.encoder_embed_dim", c.model.encoder_embed_dim);
        c.model.encoder_depth = ini.get_int("model.encoder_depth", c.model.encoder_depth);
        c.model.encoder_heads = ini.get_int("model.encoder_heads", c.model.encoder_heads);
        c.model.decoder_dim = ini.get_int("model.decoder_dim", c.model.decoder_dim);
        c.model.decoder_heads = ini.get_int("model.decoder_heads", c.model.decoder_heads);
        c.model.decoder_mlp_dim = ini.get_int("model.decoder_mlp_dim", c.model.decoder_mlp_dim);
        c.model.weights_path = ini.get("model.weights", c.model.weights_path);
        c.model.names_path = ini.get("model.names", c.model.names_path);

        c.train.learning_rate = ini.get_double("train.learning_rate", c.train.learning_rate);
        c.train.batch_size = ini.get_int("train.batch_size", c.train.batch_size);
        c.train.max_epochs = ini.get_int("train.max_epochs", c.train.max_epochs);
        c.train.split_ratio = ini.get_double("train.split_ratio", c.train.split_ratio);
        c.train.scheduler_factor = ini.get_double("train.scheduler_factor", c.train.scheduler_factor);
        c.train.scheduler_patience = ini.get_int("train.scheduler_patience", c.train.scheduler_patience);
        c.train.early_stop_patience = ini.get_int("train.early_stop_patience", c.train.early_stop_patience);
        c.train.min_lr = ini.get_double("train.min_lr", c.train.min_lr);
        c.train.box_jitter = ini.get_int("train.box_jitter", c.train.box_jitter);
        c.train.min_foreground_fraction =
            ini.get_double("dataset.min_foreground_fraction", c.train.min_foreground_fraction);
        c.train.per_object = ini.get_bool("dataset.per_object", c.train.per_object);

        c.tiling.patch_size = ini.get_int("tiling.patch_size", c.model.patch_input_size);
        c.tiling.stride = ini.get_int("tiling.stride", c.tiling.stride);
        c.tiling.window = blend_window_from_name(ini.get("tiling.window", "hann_squared"));
        c.tiling.threshold = ini.get_double("tiling.threshold", c.tiling.threshold);

        c.out_dir = ini.get("run.out", c.out_dir.string());
        c.checkpoint = ini.get("run.checkpoint", "");
        c.seed = ini.get_u64("run.seed", 0);
        c.workers = ini.get_int("run.workers", 1);
        c.train.seed = c.seed;
        return c;
    }

    // The effective configuration, echoed into the output directory so every
    // run records exactly what it ran with.
    std::string to_ini_text() const {
        std::ostringstream os;
        os << "[dataset]\n";
        os << "images = " << images_dir.string() << '\n';
        os << "masks = " << masks_dir.string() << '\n';
        os << "prepared = " << prepared_dir.string() << '\n';
        os << "min_foreground_fraction = " << train.min_foreground_fraction << '\n';
        os << "per_object = " << (train.per_object ? "true" : "false") << '\n';
        os << "\n[model]\n";
        os << "backbone = " << backbone_name(model.backbone) << '\n';
        os << "patch_input_size = " << model.patch_input_size << '\n';
        os << "encoder_input_size = " << model.encoder_input_size << '\n';
        os << "encoder_token_size = " << model.encoder_token_size << '\n';
        os << "encoder_embed_dim = " << model.encoder_embed_dim << '\n';
        os << "encoder_depth = " << model.encoder_depth << '\n';
        os << "encoder_heads = " << model.encoder_heads << '\n';
        os << "decoder_dim = " << model.decoder_dim << '\n';
        os << "decoder_heads = " << model.decoder_heads << '\n';
        os << "decoder_mlp_dim = " << model.decoder_mlp_dim << '\n';
        os << "weights = " << model.weights_path << '\n';
        os << "names = " << model.names_path << '\n';
        os << "\n[train]\n";
        os << "learning_rate = " << train.learning_rate << '\n';
        os << "batch_size = " << train.batch_size << '\n';
        os << "max_epochs = " << train.max_epochs << '\n';
        os << "split_ratio = " << train.split_ratio << '\n';
        os << "scheduler_factor = " << train.scheduler_factor << '\n';
        os << "scheduler_patience = " << train.scheduler_patience << '\n';
        os << "early_stop_patience = " << train.early_stop_patience << '\n';
        os << "min_lr = " << train.min_lr << '\n';
        os << "box_jitter = " << train.box_jitter << '\n';
        os << "\n[tiling]\n";
        os << "patch_size = " << tiling.patch_size << '\n';
        os << "stride = " << tiling.stride << '\n';
        os << "window = " << blend_window_name(tiling.window) << '\n';
        os << "threshold = " << tiling.threshold << '\n';
        os << "\n[run]\n";
        os << "seed = " << seed << '\n';
        os << "out = " << out_dir.string() << '\n';
        os << "checkpoint = " << checkpoint.string() << '\n';
        os << "workers = " << workers << '\n';
        return os.str();
    }

    void echo_into(const std::filesystem::path& dir) const {
        std::filesystem::create_directories(dir);
        std::ofstream os(dir / "config_used.ini");
        require(os.good(), ErrorKind::io, "cannot write config echo under " + dir.string());
        os << to_ini_text();
    }
};

} // namespace rockseg::cli
