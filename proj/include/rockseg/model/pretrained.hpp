#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rockseg/model/model.hpp"

namespace rockseg {

// Reader for the safetensors container the published base checkpoint ships
// in: 8-byte little-endian header length, JSON tensor table, raw data.
class SafetensorsFile {
public:
    struct Entry {
        std::vector<int> shape;
        std::uint64_t begin = 0;
        std::uint64_t end = 0;
    };

    explicit SafetensorsFile(const std::filesystem::path& path) : path_(path) {
        std::ifstream in(path, std::ios::binary);
        require(in.good(), ErrorKind::missing_weights,
                "pretrained weights not found: " + path.string() +
                    " (download the published base checkpoint in safetensors format and point "
                    "weights_path at it)");
        bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
        require(bytes_.size() >= 8, ErrorKind::format, "truncated safetensors file: " + path.string());
        std::uint64_t header_len = 0;
        std::memcpy(&header_len, bytes_.data(), 8);
        require(8 + header_len <= bytes_.size(), ErrorKind::format,
                "corrupt safetensors header: " + path.string());
        nlohmann::json header;
        try {
            header = nlohmann::json::parse(bytes_.begin() + 8, bytes_.begin() + 8 + header_len);
        } catch (const nlohmann::json::exception& e) {
            raise(ErrorKind::format, "bad safetensors JSON header: " + std::string(e.what()));
        }
        data_offset_ = 8 + header_len;
        for (auto& [name, meta] : header.items()) {
            if (name == "__metadata__") continue;
            Entry e;
            const std::string dtype = meta.at("dtype").get<std::string>();
            require(dtype == "F32", ErrorKind::format,
                    "unsupported tensor dtype " + dtype + " for " + name);
            for (auto& d : meta.at("shape")) e.shape.push_back(d.get<int>());
            e.begin = meta.at("data_offsets").at(0).get<std::uint64_t>();
            e.end = meta.at("data_offsets").at(1).get<std::uint64_t>();
            require(data_offset_ + e.end <= bytes_.size() && e.begin <= e.end, ErrorKind::format,
                    "tensor data out of range: " + name);
            entries_[name] = e;
        }
    }

    const std::map<std::string, Entry>& entries() const { return entries_; }

    const float* tensor_data(const Entry& e) const {
        return reinterpret_cast<const float*>(bytes_.data() + data_offset_ + e.begin);
    }

    static std::size_t numel(const Entry& e) {
        std::size_t n = 1;
        for (int d : e.shape) n *= static_cast<std::size_t>(d);
        return n;
    }

private:
    std::filesystem::path path_;
    std::vector<std::uint8_t> bytes_;
    std::size_t data_offset_ = 0;
    std::map<std::string, Entry> entries_;
};

// Two-column name translation: <checkpoint tensor name> <model tensor name>.
// '#' starts a comment.
inline std::map<std::string, std::string> load_name_translation(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::io, "cannot open name translation file: " + path.string());
    std::map<std::string, std::string> map;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::istringstream is(line);
        std::string src, dst, extra;
        if (!(is >> src)) continue;
        require(static_cast<bool>(is >> dst) && !(is >> extra), ErrorKind::format,
                "name translation line " + std::to_string(lineno) + " is not two columns");
        require(!map.contains(src), ErrorKind::format, "duplicate source tensor name: " + src);
        map[src] = dst;
    }
    return map;
}

// Fills a structurally built model from a checkpoint through the name map.
// Unmapped, missing, or size-mismatched tensors are hard errors: a partial
// weight load is never acceptable.
template <typename T>
void load_pretrained_weights(Model<T>& model, const std::filesystem::path& weights_path,
                             const std::filesystem::path& names_path) {
    const SafetensorsFile file(weights_path);
    const auto names = load_name_translation(names_path);

    std::map<std::string, bool> filled;
    for (std::size_t i = 0; i < model.params.size(); ++i) filled[model.params[i].name] = false;

    for (const auto& [src, entry] : file.entries()) {
        auto it = names.find(src);
        require(it != names.end(), ErrorKind::incompatibility,
                "checkpoint tensor not covered by the name translation: " + src);
        auto& p = model.params.at(it->second);
        require(SafetensorsFile::numel(entry) == p.value.numel(), ErrorKind::incompatibility,
                "size mismatch for " + src + " -> " + it->second);
        const float* data = file.tensor_data(entry);
        for (std::size_t i = 0; i < p.value.numel(); ++i) p.value.v[i] = static_cast<T>(data[i]);
        filled[it->second] = true;
    }
    for (const auto& [src, dst] : names)
        require(file.entries().contains(src), ErrorKind::incompatibility,
                "name translation refers to a tensor absent from the checkpoint: " + src);
    for (const auto& [name, ok] : filled)
        require(ok, ErrorKind::incompatibility, "model tensor never filled from checkpoint: " + name);
}

// Standard entry point: builds the configured backbone, loading pretrained
// weights when the config calls for them.
template <typename T = float>
Model<T> build_model(const ModelConfig& config, std::uint64_t seed = 0) {
    if (config.backbone == Backbone::toy) return Model<T>::build_toy(config, seed);
    Model<T> m = Model<T>::build_uninitialized(config);
    require(!config.weights_path.empty(), ErrorKind::missing_weights,
            "pretrained backbone requested but no weights_path configured");
    load_pretrained_weights(m, config.weights_path, config.names_path);
    return m;
}

} // namespace rockseg
