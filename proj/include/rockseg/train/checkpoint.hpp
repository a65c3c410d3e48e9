#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "rockseg/model/model.hpp"

namespace rockseg {

// Checkpoint manifest: the plain-text block embedded in the checkpoint file.
struct CheckpointInfo {
    int format_version = 1;
    std::uint64_t config_hash = 0;
    int epoch = 0;
    double val_loss = 0.0;
    std::uint64_t trainable_count = 0;
};

namespace detail {

inline constexpr char checkpoint_magic[8] = {'R', 'S', 'E', 'G', 'C', 'K', 'P', '1'};

inline void append_u32(std::string& buf, std::uint32_t v) {
    buf.append(reinterpret_cast<const char*>(&v), 4);
}
inline void append_u64(std::string& buf, std::uint64_t v) {
    buf.append(reinterpret_cast<const char*>(&v), 8);
}

class ByteReader {
public:
    ByteReader(const std::string& buf, const std::string& what) : buf_(buf), what_(what) {}
    std::uint32_t u32() { return read<std::uint32_t>(); }
    std::uint64_t u64() { return read<std::uint64_t>(); }
    std::string bytes(std::size_t n) {
        check(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    void floats(float* dst, std::size_t n) {
        check(n * 4);
        std::memcpy(dst, buf_.data() + pos_, n * 4);
        pos_ += n * 4;
    }
    std::size_t pos() const { return pos_; }

private:
    template <typename T>
    T read() {
        check(sizeof(T));
        T v;
        std::memcpy(&v, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    void check(std::size_t n) const {
        require(pos_ + n <= buf_.size(), ErrorKind::checksum, "truncated checkpoint: " + what_);
    }
    const std::string& buf_;
    std::string what_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline std::string format_checkpoint_manifest(const CheckpointInfo& info) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", info.val_loss);
    std::ostringstream os;
    os << "format_version: " << info.format_version << '\n';
    os << "config_hash: " << std::hex << info.config_hash << std::dec << '\n';
    os << "epoch: " << info.epoch << '\n';
    os << "val_loss: " << buf << '\n';
    os << "trainable_count: " << info.trainable_count << '\n';
    return os.str();
}

inline CheckpointInfo parse_checkpoint_manifest(const std::string& text) {
    CheckpointInfo info;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        const auto colon = line.find(':');
        if (colon == std::string::npos) continue;
        const std::string key = line.substr(0, colon);
        const std::string val = line.substr(colon + 1);
        if (key == "format_version") info.format_version = std::stoi(val);
        else if (key == "config_hash") info.config_hash = std::stoull(val, nullptr, 16);
        else if (key == "epoch") info.epoch = std::stoi(val);
        else if (key == "val_loss") info.val_loss = std::stod(val);
        else if (key == "trainable_count") info.trainable_count = std::stoull(val);
    }
    return info;
}

// Serialized named-tensor map + plain-text manifest, CRC-protected.
template <typename T>
void save_checkpoint(const Model<T>& model, const CheckpointInfo& info,
                     const std::filesystem::path& path) {
    std::string buf;
    buf.append(detail::checkpoint_magic, 8);
    const std::string manifest = format_checkpoint_manifest(info);
    detail::append_u64(buf, manifest.size());
    buf += manifest;
    detail::append_u64(buf, model.params.size());
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        const auto& p = model.params[i];
        detail::append_u32(buf, static_cast<std::uint32_t>(p.name.size()));
        buf += p.name;
        detail::append_u32(buf, static_cast<std::uint32_t>(p.value.shape.size()));
        for (int d : p.value.shape) detail::append_u32(buf, static_cast<std::uint32_t>(d));
        buf.push_back(p.trainable ? 1 : 0);
        const auto floats = p.value.template cast<float>();
        buf.append(reinterpret_cast<const char*>(floats.v.data()), floats.v.size() * 4);
    }
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size())));
    detail::append_u32(buf, crc);

    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        require(os.good(), ErrorKind::io, "cannot write checkpoint: " + path.string());
        os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        require(os.good(), ErrorKind::io, "short write for checkpoint: " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

// Reads the manifest without loading tensors (CRC still verified).
inline CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorKind::io, "cannot open checkpoint: " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    require(buf.size() >= 12, ErrorKind::checksum, "truncated checkpoint: " + path.string());
    const auto stored = *reinterpret_cast<const std::uint32_t*>(buf.data() + buf.size() - 4);
    const auto crc = static_cast<std::uint32_t>(crc32(
        0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size() - 4)));
    require(stored == crc, ErrorKind::checksum, "checkpoint checksum mismatch: " + path.string());
    detail::ByteReader rd(buf, path.string());
    require(rd.bytes(8) == std::string(detail::checkpoint_magic, 8), ErrorKind::format,
            "not a checkpoint file: " + path.string());
    const auto mlen = rd.u64();
    return parse_checkpoint_manifest(rd.bytes(mlen));
}

// Restores weights into a model built with a matching config.
template <typename T>
CheckpointInfo load_checkpoint(Model<T>& model, const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorKind::io, "cannot open checkpoint: " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    require(buf.size() >= 12, ErrorKind::checksum, "truncated checkpoint: " + path.string());
    const auto stored = *reinterpret_cast<const std::uint32_t*>(buf.data() + buf.size() - 4);
    const auto crc = static_cast<std::uint32_t>(crc32(
        0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size() - 4)));
    require(stored == crc, ErrorKind::checksum, "checkpoint checksum mismatch: " + path.string());

    detail::ByteReader rd(buf, path.string());
    require(rd.bytes(8) == std::string(detail::checkpoint_magic, 8), ErrorKind::format,
            "not a checkpoint file: " + path.string());
    const CheckpointInfo info = parse_checkpoint_manifest(rd.bytes(rd.u64()));
    require(info.config_hash == config_hash(model.config), ErrorKind::incompatibility,
            "checkpoint was produced by an incompatible model config: " + path.string());

    const auto count = rd.u64();
    require(count == model.params.size(), ErrorKind::incompatibility,
            "checkpoint tensor count differs from model: " + path.string());
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string name = rd.bytes(rd.u32());
        std::vector<int> shape(rd.u32());
        for (auto& d : shape) d = static_cast<int>(rd.u32());
        const bool trainable = rd.bytes(1)[0] != 0;
        require(model.params.contains(name), ErrorKind::incompatibility,
                "checkpoint tensor unknown to the model: " + name);
        auto& p = model.params.at(name);
        require(p.value.shape == shape, ErrorKind::incompatibility,
                "checkpoint tensor shape mismatch: " + name);
        std::vector<float> tmp(p.value.numel());
        rd.floats(tmp.data(), tmp.size());
        for (std::size_t j = 0; j < tmp.size(); ++j) p.value.v[j] = static_cast<T>(tmp[j]);
        p.trainable = trainable && !p.buffer;
    }
    return info;
}

} // namespace rockseg
