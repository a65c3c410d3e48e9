#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <png.h>

#include "rockseg/core/error.hpp"
#include "rockseg/core/image.hpp"

namespace rockseg {

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    bool operator==(const Rgb&) const = default;
};
using RgbImage = Image<Rgb>;

namespace detail {

struct FileHandle {
    std::FILE* fp = nullptr;
    explicit FileHandle(const std::filesystem::path& path, const char* mode)
        : fp(std::fopen(path.string().c_str(), mode)) {}
    ~FileHandle() {
        if (fp) std::fclose(fp);
    }
    FileHandle(const FileHandle&) = delete;
    FileHandle& operator=(const FileHandle&) = delete;
};

inline std::uint8_t average_rgb(unsigned r, unsigned g, unsigned b) {
    return static_cast<std::uint8_t>(std::lround((r + g + b) / 3.0));
}

// ---- PNG ----------------------------------------------------------------

struct PngReader {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReader() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    }
};

inline GrayImage load_png_gray(std::FILE* fp, const std::filesystem::path& path) {
    PngReader rd;
    rd.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(rd.png != nullptr, ErrorKind::io, "libpng init failed");
    rd.info = png_create_info_struct(rd.png);
    require(rd.info != nullptr, ErrorKind::io, "libpng init failed");
    if (setjmp(png_jmpbuf(rd.png)))
        raise(ErrorKind::format, "undecodable PNG: " + path.string());

    png_init_io(rd.png, fp);
    png_set_sig_bytes(rd.png, 8);
    png_read_info(rd.png, rd.info);

    const png_uint_32 w = png_get_image_width(rd.png, rd.info);
    const png_uint_32 h = png_get_image_height(rd.png, rd.info);
    require(w >= 1 && h >= 1, ErrorKind::validation, "zero-dimension image: " + path.string());
    const int color_type = png_get_color_type(rd.png, rd.info);
    const int bit_depth = png_get_bit_depth(rd.png, rd.info);

    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(rd.png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(rd.png);
    if (png_get_valid(rd.png, rd.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(rd.png);
    if (bit_depth == 16) png_set_strip_16(rd.png);
    png_set_strip_alpha(rd.png);
    png_read_update_info(rd.png, rd.info);

    const int channels = png_get_channels(rd.png, rd.info);
    require(channels == 1 || channels == 3, ErrorKind::format,
            "unsupported PNG channel count: " + path.string());

    GrayImage out(static_cast<int>(h), static_cast<int>(w));
    std::vector<std::uint8_t> rowbuf(static_cast<std::size_t>(w) * channels);
    for (png_uint_32 r = 0; r < h; ++r) {
        png_read_row(rd.png, rowbuf.data(), nullptr);
        auto* dst = out.row(static_cast<int>(r));
        if (channels == 1) {
            std::memcpy(dst, rowbuf.data(), w);
        } else {
            for (png_uint_32 c = 0; c < w; ++c)
                dst[c] = average_rgb(rowbuf[3 * c], rowbuf[3 * c + 1], rowbuf[3 * c + 2]);
        }
    }
    return out;
}

struct PngWriter {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWriter() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    }
};

template <typename RowFn>
void write_png(const std::filesystem::path& path, int height, int width, int color_type,
               int bit_depth, RowFn&& fill_row) {
    FileHandle fh(path, "wb");
    require(fh.fp != nullptr, ErrorKind::io, "cannot open for writing: " + path.string());
    PngWriter wr;
    wr.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(wr.png != nullptr, ErrorKind::io, "libpng init failed");
    wr.info = png_create_info_struct(wr.png);
    require(wr.info != nullptr, ErrorKind::io, "libpng init failed");
    if (setjmp(png_jmpbuf(wr.png)))
        raise(ErrorKind::io, "PNG write failed: " + path.string());

    png_init_io(wr.png, fh.fp);
    png_set_IHDR(wr.png, wr.info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(wr.png, wr.info);

    const int channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
    const std::size_t rowbytes = static_cast<std::size_t>(width) * channels * (bit_depth / 8);
    std::vector<std::uint8_t> rowbuf(rowbytes);
    for (int r = 0; r < height; ++r) {
        fill_row(r, rowbuf.data());
        png_write_row(wr.png, rowbuf.data());
    }
    png_write_end(wr.png, wr.info);
}

// ---- TIFF (baseline subset: uncompressed, chunky, 8-bit gray or RGB) -----

class TiffParser {
public:
    TiffParser(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path)
        : bytes_(bytes), path_(path) {
        fail_if(bytes_.size() < 8, "truncated TIFF header");
        if (bytes_[0] == 'I' && bytes_[1] == 'I')
            little_ = true;
        else if (bytes_[0] == 'M' && bytes_[1] == 'M')
            little_ = false;
        else
            fail("bad TIFF byte-order mark");
        fail_if(u16(2) != 42, "bad TIFF magic");
    }

    GrayImage parse() {
        const std::uint32_t ifd = u32(4);
        fail_if(ifd + 2 > bytes_.size(), "IFD offset out of range");
        const unsigned n_entries = u16(ifd);
        std::uint32_t width = 0, height = 0, compression = 1, photometric = 1;
        std::uint32_t samples = 1, rows_per_strip = 0xffffffffu, planar = 1;
        std::vector<std::uint32_t> bits{8}, strip_offsets, strip_counts;
        for (unsigned i = 0; i < n_entries; ++i) {
            const std::size_t e = ifd + 2 + 12 * static_cast<std::size_t>(i);
            fail_if(e + 12 > bytes_.size(), "truncated IFD");
            const unsigned tag = u16(e), type = u16(e + 2);
            const std::uint32_t count = u32(e + 4);
            switch (tag) {
            case 256: width = scalar_value(e, type); break;
            case 257: height = scalar_value(e, type); break;
            case 258: bits = array_values(e, type, count); break;
            case 259: compression = scalar_value(e, type); break;
            case 262: photometric = scalar_value(e, type); break;
            case 273: strip_offsets = array_values(e, type, count); break;
            case 277: samples = scalar_value(e, type); break;
            case 278: rows_per_strip = scalar_value(e, type); break;
            case 279: strip_counts = array_values(e, type, count); break;
            case 284: planar = scalar_value(e, type); break;
            default: break; // ignore ancillary tags
            }
        }
        fail_if(width == 0 || height == 0, "zero-dimension TIFF", ErrorKind::validation);
        fail_if(compression != 1, "unsupported TIFF compression (only uncompressed supported)");
        fail_if(planar != 1, "unsupported TIFF planar configuration");
        fail_if(samples != 1 && samples != 3, "unsupported TIFF sample count");
        fail_if(photometric > 2, "unsupported TIFF photometric interpretation");
        for (auto b : bits) fail_if(b != 8, "unsupported TIFF bit depth (only 8-bit supported)");
        fail_if(strip_offsets.empty(), "TIFF missing strip offsets");
        if (strip_counts.empty()) {
            // single-strip files may omit byte counts; infer from geometry
            fail_if(strip_offsets.size() != 1, "TIFF missing strip byte counts");
            strip_counts.push_back(width * height * samples);
        }
        fail_if(strip_counts.size() != strip_offsets.size(), "TIFF strip table mismatch");

        std::vector<std::uint8_t> data;
        data.reserve(static_cast<std::size_t>(width) * height * samples);
        for (std::size_t s = 0; s < strip_offsets.size(); ++s) {
            const std::uint64_t off = strip_offsets[s], cnt = strip_counts[s];
            fail_if(off + cnt > bytes_.size(), "truncated TIFF strip data");
            data.insert(data.end(), bytes_.begin() + off, bytes_.begin() + off + cnt);
        }
        fail_if(data.size() < static_cast<std::size_t>(width) * height * samples,
                "TIFF pixel data shorter than image");
        (void)rows_per_strip;

        GrayImage out(static_cast<int>(height), static_cast<int>(width));
        const std::uint8_t* src = data.data();
        for (auto& px : out) {
            if (samples == 1)
                px = *src++;
            else {
                px = average_rgb(src[0], src[1], src[2]);
                src += 3;
            }
        }
        if (photometric == 0) // WhiteIsZero
            for (auto& px : out) px = static_cast<std::uint8_t>(255 - px);
        return out;
    }

private:
    void fail(const std::string& what, ErrorKind kind = ErrorKind::format) const {
        raise(kind, what + ": " + path_.string());
    }
    void fail_if(bool cond, const std::string& what, ErrorKind kind = ErrorKind::format) const {
        if (cond) fail(what, kind);
    }
    std::uint16_t u16(std::size_t off) const {
        fail_if(off + 2 > bytes_.size(), "read past end of TIFF");
        return little_ ? static_cast<std::uint16_t>(bytes_[off] | bytes_[off + 1] << 8)
                       : static_cast<std::uint16_t>(bytes_[off] << 8 | bytes_[off + 1]);
    }
    std::uint32_t u32(std::size_t off) const {
        fail_if(off + 4 > bytes_.size(), "read past end of TIFF");
        if (little_)
            return bytes_[off] | bytes_[off + 1] << 8 | bytes_[off + 2] << 16 |
                   static_cast<std::uint32_t>(bytes_[off + 3]) << 24;
        return static_cast<std::uint32_t>(bytes_[off]) << 24 | bytes_[off + 1] << 16 |
               bytes_[off + 2] << 8 | bytes_[off + 3];
    }
    static std::size_t type_size(unsigned type) {
        switch (type) {
        case 1: return 1; // BYTE
        case 3: return 2; // SHORT
        case 4: return 4; // LONG
        default: return 0;
        }
    }
    std::uint32_t read_typed(std::size_t off, unsigned type) const {
        switch (type) {
        case 1: return bytes_[off];
        case 3: return u16(off);
        case 4: return u32(off);
        default: fail("unsupported TIFF field type"); return 0;
        }
    }
    std::uint32_t scalar_value(std::size_t entry, unsigned type) const {
        fail_if(type_size(type) == 0, "unsupported TIFF field type");
        return read_typed(entry + 8, type);
    }
    std::vector<std::uint32_t> array_values(std::size_t entry, unsigned type,
                                            std::uint32_t count) const {
        const std::size_t sz = type_size(type);
        fail_if(sz == 0, "unsupported TIFF field type");
        std::size_t off = entry + 8;
        if (sz * count > 4) off = u32(entry + 8);
        std::vector<std::uint32_t> out;
        out.reserve(count);
        for (std::uint32_t i = 0; i < count; ++i) out.push_back(read_typed(off + i * sz, type));
        return out;
    }

    const std::vector<std::uint8_t>& bytes_;
    const std::filesystem::path& path_;
    bool little_ = true;
};

} // namespace detail

// Loads a PNG or TIFF as 8-bit grayscale. RGB inputs are converted by
// averaging the three channels.
inline GrayImage load_grayscale(const std::filesystem::path& path) {
    detail::FileHandle fh(path, "rb");
    require(fh.fp != nullptr, ErrorKind::io, "cannot open image: " + path.string());
    std::uint8_t sig[8] = {};
    const std::size_t got = std::fread(sig, 1, 8, fh.fp);
    if (got >= 8 && png_sig_cmp(sig, 0, 8) == 0) return detail::load_png_gray(fh.fp, path);

    const bool tiff_le = got >= 4 && sig[0] == 'I' && sig[1] == 'I' && sig[2] == 42 && sig[3] == 0;
    const bool tiff_be = got >= 4 && sig[0] == 'M' && sig[1] == 'M' && sig[2] == 0 && sig[3] == 42;
    if (tiff_le || tiff_be) {
        std::ifstream in(path, std::ios::binary);
        require(in.good(), ErrorKind::io, "cannot open image: " + path.string());
        std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
        return detail::TiffParser(bytes, path).parse();
    }
    raise(ErrorKind::format, "not a PNG or TIFF image: " + path.string());
}

// Loads a mask image; any nonzero intensity counts as foreground.
inline BinaryMask load_mask(const std::filesystem::path& path) {
    return load_grayscale(path).map<std::uint8_t>(
        [](std::uint8_t v) { return static_cast<std::uint8_t>(v > 0 ? 1 : 0); });
}

inline void save_png_gray8(const std::filesystem::path& path, const GrayImage& image) {
    detail::write_png(path, image.height(), image.width(), PNG_COLOR_TYPE_GRAY, 8,
                      [&](int r, std::uint8_t* row) { std::memcpy(row, image.row(r), image.width()); });
}

inline void save_mask_png(const std::filesystem::path& path, const BinaryMask& mask) {
    detail::write_png(path, mask.height(), mask.width(), PNG_COLOR_TYPE_GRAY, 8,
                      [&](int r, std::uint8_t* row) {
                          const auto* src = mask.row(r);
                          for (int c = 0; c < mask.width(); ++c) row[c] = src[c] ? 255 : 0;
                      });
}

// Probabilities quantized to the full 16-bit range (big-endian per PNG).
inline void save_png_gray16(const std::filesystem::path& path, const ProbabilityMap& map) {
    detail::write_png(path, map.height(), map.width(), PNG_COLOR_TYPE_GRAY, 16,
                      [&](int r, std::uint8_t* row) {
                          const auto* src = map.row(r);
                          for (int c = 0; c < map.width(); ++c) {
                              const float clamped = src[c] < 0.f ? 0.f : (src[c] > 1.f ? 1.f : src[c]);
                              const auto v = static_cast<std::uint16_t>(std::lround(clamped * 65535.0));
                              row[2 * c] = static_cast<std::uint8_t>(v >> 8);
                              row[2 * c + 1] = static_cast<std::uint8_t>(v & 0xff);
                          }
                      });
}

inline void save_png_rgb8(const std::filesystem::path& path, const RgbImage& image) {
    detail::write_png(path, image.height(), image.width(), PNG_COLOR_TYPE_RGB, 8,
                      [&](int r, std::uint8_t* row) {
                          const auto* src = image.row(r);
                          for (int c = 0; c < image.width(); ++c) {
                              row[3 * c] = src[c].r;
                              row[3 * c + 1] = src[c].g;
                              row[3 * c + 2] = src[c].b;
                          }
                      });
}

inline void save_prob_csv(const std::filesystem::path& path, const ProbabilityMap& map) {
    std::ofstream os(path);
    require(os.good(), ErrorKind::io, "cannot open for writing: " + path.string());
    char buf[32];
    for (int r = 0; r < map.height(); ++r) {
        for (int c = 0; c < map.width(); ++c) {
            std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(map.at(r, c)));
            os << (c ? "," : "") << buf;
        }
        os << '\n';
    }
}

} // namespace rockseg
