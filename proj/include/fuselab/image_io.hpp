#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fuselab/image.hpp"

namespace fuselab {

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open file: " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
    return buf;
}

inline void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot open file for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw io_error("write failed: " + path);
}

inline std::uint8_t quantize8(double v) {
    return static_cast<std::uint8_t>(std::lround(clamp01(v) * 255.0));
}

namespace detail {

inline void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t x) {
    out.push_back(static_cast<std::uint8_t>(x >> 24));
    out.push_back(static_cast<std::uint8_t>(x >> 16));
    out.push_back(static_cast<std::uint8_t>(x >> 8));
    out.push_back(static_cast<std::uint8_t>(x));
}

inline std::uint32_t get_u32_be(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

inline void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
                      const std::vector<std::uint8_t>& data) {
    put_u32_be(out, static_cast<std::uint32_t>(data.size()));
    size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    uLong crc = crc32(0L, out.data() + crc_start, static_cast<uInt>(4 + data.size()));
    put_u32_be(out, static_cast<std::uint32_t>(crc));
}

inline int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace detail

// --- PNG, restricted to 8-bit RGB (color type 2), non-interlaced ---

inline std::vector<std::uint8_t> encode_png_rgb8(const std::vector<std::uint8_t>& rgb, int w,
                                                 int h) {
    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    std::vector<std::uint8_t> out(sig, sig + 8);

    std::vector<std::uint8_t> ihdr;
    detail::put_u32_be(ihdr, static_cast<std::uint32_t>(w));
    detail::put_u32_be(ihdr, static_cast<std::uint32_t>(h));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // color type: truecolor
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter method
    ihdr.push_back(0);   // no interlace
    detail::put_chunk(out, "IHDR", ihdr);

    // Filter type None on every scanline keeps the encoder canonical, so a
    // save->load->save cycle is byte identical.
    size_t stride = static_cast<size_t>(w) * 3;
    std::vector<std::uint8_t> raw(static_cast<size_t>(h) * (stride + 1));
    for (int y = 0; y < h; ++y) {
        raw[static_cast<size_t>(y) * (stride + 1)] = 0;
        std::memcpy(&raw[static_cast<size_t>(y) * (stride + 1) + 1], &rgb[y * stride], stride);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw io_error("PNG encode: deflate failed");
    compressed.resize(bound);
    detail::put_chunk(out, "IDAT", compressed);
    detail::put_chunk(out, "IEND", {});
    return out;
}

struct RawRgb8 {
    int w = 0;
    int h = 0;
    std::vector<std::uint8_t> bytes;  // interleaved RGB
};

inline RawRgb8 decode_png_rgb8(const std::vector<std::uint8_t>& file, const std::string& name) {
    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    if (file.size() < 8 || std::memcmp(file.data(), sig, 8) != 0)
        throw format_error("not a PNG file: " + name);

    int w = 0, h = 0;
    bool have_ihdr = false;
    std::vector<std::uint8_t> idat;
    size_t pos = 8;
    bool done = false;
    while (!done) {
        if (pos + 8 > file.size()) throw format_error("truncated PNG stream: " + name);
        std::uint32_t len = detail::get_u32_be(&file[pos]);
        if (pos + 12 + len > file.size()) throw format_error("truncated PNG stream: " + name);
        const std::uint8_t* type = &file[pos + 4];
        const std::uint8_t* data = &file[pos + 8];
        uLong crc = crc32(0L, type, 4 + len);
        if (static_cast<std::uint32_t>(crc) != detail::get_u32_be(data + len))
            throw format_error("PNG chunk CRC mismatch: " + name);

        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw format_error("bad IHDR length: " + name);
            w = static_cast<int>(detail::get_u32_be(data));
            h = static_cast<int>(detail::get_u32_be(data + 4));
            int depth = data[8], ctype = data[9], interlace = data[12];
            if (depth != 8)
                throw format_error("unsupported PNG bit depth " + std::to_string(depth) + ": " +
                                   name);
            if (ctype != 2)
                throw format_error("unsupported PNG color type " + std::to_string(ctype) +
                                   " (need 8-bit RGB): " + name);
            if (interlace != 0) throw format_error("interlaced PNG not supported: " + name);
            if (w < 1 || h < 1) throw format_error("bad PNG dimensions: " + name);
            have_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            done = true;
        }
        pos += 12 + len;
    }
    if (!have_ihdr || idat.empty()) throw format_error("PNG missing IHDR/IDAT: " + name);

    size_t stride = static_cast<size_t>(w) * 3;
    uLongf raw_len = static_cast<uLongf>(static_cast<size_t>(h) * (stride + 1));
    std::vector<std::uint8_t> raw(raw_len);
    int zr = uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size()));
    if (zr != Z_OK || raw_len != raw.size())
        throw format_error("truncated or corrupt PNG pixel data: " + name);

    RawRgb8 out;
    out.w = w;
    out.h = h;
    out.bytes.resize(static_cast<size_t>(h) * stride);
    std::vector<std::uint8_t> prev(stride, 0);
    for (int y = 0; y < h; ++y) {
        const std::uint8_t* src = &raw[static_cast<size_t>(y) * (stride + 1)];
        std::uint8_t filter = src[0];
        std::uint8_t* dst = &out.bytes[static_cast<size_t>(y) * stride];
        for (size_t i = 0; i < stride; ++i) {
            int x = src[1 + i];
            int a = i >= 3 ? dst[i - 3] : 0;      // left
            int b = prev[i];                      // up
            int c = i >= 3 ? prev[i - 3] : 0;     // up-left
            switch (filter) {
                case 0: break;
                case 1: x += a; break;
                case 2: x += b; break;
                case 3: x += (a + b) / 2; break;
                case 4: x += detail::paeth(a, b, c); break;
                default: throw format_error("unknown PNG filter type: " + name);
            }
            dst[i] = static_cast<std::uint8_t>(x & 0xff);
        }
        std::memcpy(prev.data(), dst, stride);
    }
    return out;
}

// --- PPM (binary P6, maxval 255) ---

inline std::vector<std::uint8_t> encode_ppm_rgb8(const std::vector<std::uint8_t>& rgb, int w,
                                                 int h) {
    std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), rgb.begin(), rgb.end());
    return out;
}

inline RawRgb8 decode_ppm_rgb8(const std::vector<std::uint8_t>& file, const std::string& name) {
    size_t pos = 0;
    auto next_token = [&]() -> std::string {
        while (pos < file.size()) {
            if (std::isspace(file[pos])) {
                ++pos;
            } else if (file[pos] == '#') {
                while (pos < file.size() && file[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
        size_t start = pos;
        while (pos < file.size() && !std::isspace(file[pos])) ++pos;
        if (start == pos) throw format_error("truncated PPM header: " + name);
        return std::string(file.begin() + start, file.begin() + pos);
    };

    if (next_token() != "P6") throw format_error("not a binary PPM (P6) file: " + name);
    int w = 0, h = 0, maxval = 0;
    try {
        w = std::stoi(next_token());
        h = std::stoi(next_token());
        maxval = std::stoi(next_token());
    } catch (const std::exception&) {
        throw format_error("bad PPM header: " + name);
    }
    if (w < 1 || h < 1) throw format_error("bad PPM dimensions: " + name);
    if (maxval != 255)
        throw format_error("unsupported PPM maxval " + std::to_string(maxval) + ": " + name);
    ++pos;  // single whitespace after maxval
    size_t need = static_cast<size_t>(w) * h * 3;
    if (file.size() < pos + need) throw format_error("truncated PPM pixel data: " + name);
    RawRgb8 out;
    out.w = w;
    out.h = h;
    out.bytes.assign(file.begin() + pos, file.begin() + pos + need);
    return out;
}

// --- Image-level entry points; format picked by magic on load and by ---
// --- extension (.png / .ppm) on save.                                ---

inline Image image_from_raw(const RawRgb8& raw) {
    Image img(raw.w, raw.h);
    for (size_t i = 0; i < raw.bytes.size(); ++i) img.v[i] = raw.bytes[i] / 255.0;
    return img;
}

inline std::vector<std::uint8_t> image_to_bytes8(const Image& img) {
    std::vector<std::uint8_t> rgb(img.v.size());
    for (size_t i = 0; i < img.v.size(); ++i) rgb[i] = quantize8(img.v[i]);
    return rgb;
}

inline Image load_image(const std::string& path) {
    std::vector<std::uint8_t> file = read_file_bytes(path);
    if (file.size() >= 2 && file[0] == 'P' && file[1] == '6')
        return image_from_raw(decode_ppm_rgb8(file, path));
    return image_from_raw(decode_png_rgb8(file, path));
}

inline void save_image(const Image& img, const std::string& path) {
    std::vector<std::uint8_t> rgb = image_to_bytes8(img);
    std::string ext;
    if (auto dot = path.find_last_of('.'); dot != std::string::npos) ext = path.substr(dot);
    if (ext == ".ppm")
        write_file_bytes(path, encode_ppm_rgb8(rgb, img.w, img.h));
    else if (ext == ".png")
        write_file_bytes(path, encode_png_rgb8(rgb, img.w, img.h));
    else
        throw io_error("unsupported output extension (use .png or .ppm): " + path);
}

// Grayscale planes are stored as RGB PNGs with R=G=B.
inline void save_plane(const Plane& p, const std::string& path) {
    Image img(p.w, p.h);
    for (size_t i = 0; i < p.size(); ++i) img.v[3 * i] = img.v[3 * i + 1] = img.v[3 * i + 2] = p.v[i];
    save_image(img, path);
}

// --- Stack manifest: one line per image, "<relative-path> <seconds>", ---
// --- sorted by exposure time ascending.                               ---

inline ExposureStack load_stack_manifest(const std::string& manifest_path) {
    std::ifstream f(manifest_path);
    if (!f) throw io_error("cannot open manifest: " + manifest_path);
    std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();

    ExposureStack stack;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string rel;
        double t = 0.0;
        if (!(ss >> rel >> t))
            throw format_error("bad manifest line " + std::to_string(lineno) + " in " +
                               manifest_path);
        stack.images.push_back(load_image((base / rel).string()));
        stack.times.push_back(t);
    }
    stack.validate();
    return stack;
}

inline void save_stack_manifest(const std::vector<std::string>& rel_paths,
                                const std::vector<double>& times,
                                const std::string& manifest_path) {
    std::ostringstream out;
    for (size_t i = 0; i < rel_paths.size(); ++i) {
        std::ostringstream tval;
        tval.precision(17);
        tval << times[i];
        out << rel_paths[i] << " " << tval.str() << "\n";
    }
    std::string s = out.str();
    write_file_bytes(manifest_path, std::vector<std::uint8_t>(s.begin(), s.end()));
}

inline std::uint32_t file_crc32(const std::string& path) {
    std::vector<std::uint8_t> bytes = read_file_bytes(path);
    return static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

}  // namespace fuselab
