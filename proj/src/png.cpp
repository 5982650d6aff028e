#include "polyrecover/png.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <string>

#include "polyrecover/errors.hpp"

namespace polyrecover {

namespace {

constexpr std::array<std::uint8_t, 8> kSignature = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
    return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
           (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

void put_chunk(std::vector<std::uint8_t>& out, const char (&type)[5],
               std::span<const std::uint8_t> data) {
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t type_at = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uLong crc = crc32(0L, out.data() + type_at, static_cast<uInt>(4 + data.size()));
    put_u32(out, static_cast<std::uint32_t>(crc));
}

std::vector<std::uint8_t> deflate_fixed(std::span<const std::uint8_t> raw) {
    z_stream zs{};
    if (deflateInit2(&zs, 9, Z_DEFLATED, 15, 8, Z_RLE) != Z_OK) {
        throw Error("zlib deflateInit2 failed");
    }
    std::vector<std::uint8_t> out(deflateBound(&zs, static_cast<uLong>(raw.size())));
    zs.next_in = const_cast<Bytef*>(raw.data());
    zs.avail_in = static_cast<uInt>(raw.size());
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = deflate(&zs, Z_FINISH);
    out.resize(zs.total_out);
    deflateEnd(&zs);
    if (rc != Z_STREAM_END) throw Error("zlib deflate failed");
    return out;
}

std::vector<std::uint8_t> inflate_all(std::span<const std::uint8_t> compressed,
                                      std::size_t expected) {
    std::vector<std::uint8_t> out(expected);
    z_stream zs{};
    if (inflateInit(&zs) != Z_OK) throw DecodeError("zlib inflateInit failed");
    zs.next_in = const_cast<Bytef*>(compressed.data());
    zs.avail_in = static_cast<uInt>(compressed.size());
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = inflate(&zs, Z_FINISH);
    const auto produced = zs.total_out;
    inflateEnd(&zs);
    if (rc != Z_STREAM_END || produced != expected) {
        throw DecodeError("PNG image data is truncated or corrupt");
    }
    return out;
}

std::uint8_t paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a);
    const int pb = std::abs(p - b);
    const int pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
    if (pb <= pc) return static_cast<std::uint8_t>(b);
    return static_cast<std::uint8_t>(c);
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Canvas& canvas) {
    const auto w = static_cast<std::size_t>(canvas.width());
    const auto h = static_cast<std::size_t>(canvas.height());

    std::vector<std::uint8_t> raw;
    raw.reserve((w + 1) * h);
    for (int y = 0; y < canvas.height(); ++y) {
        raw.push_back(0);
        const auto row = canvas.row(y);
        raw.insert(raw.end(), row.begin(), row.end());
    }

    std::vector<std::uint8_t> ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(w));
    put_u32(ihdr, static_cast<std::uint32_t>(h));
    ihdr.insert(ihdr.end(), {8, 0, 0, 0, 0});  // depth, gray, deflate, filter, no interlace

    std::vector<std::uint8_t> out(kSignature.begin(), kSignature.end());
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", deflate_fixed(raw));
    put_chunk(out, "IEND", {});
    return out;
}

Canvas decode_png(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kSignature.size() ||
        !std::equal(kSignature.begin(), kSignature.end(), bytes.begin())) {
        throw DecodeError("not a PNG file");
    }
    std::size_t pos = kSignature.size();
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    bool seen_header = false;
    bool seen_end = false;
    std::vector<std::uint8_t> idat;

    while (!seen_end) {
        if (pos + 12 > bytes.size()) throw DecodeError("PNG chunk stream is truncated");
        const std::uint32_t len = get_u32(bytes, pos);
        if (len > bytes.size() - pos - 12) throw DecodeError("PNG chunk length out of range");
        const auto type = bytes.subspan(pos + 4, 4);
        const auto data = bytes.subspan(pos + 8, len);
        const std::uint32_t stored_crc = get_u32(bytes, pos + 8 + len);
        if (crc32(0L, type.data(), 4 + len) != stored_crc) throw DecodeError("PNG chunk CRC mismatch");
        const std::string name(type.begin(), type.end());

        if (name == "IHDR") {
            if (len != 13) throw DecodeError("malformed IHDR");
            width = get_u32(data, 0);
            height = get_u32(data, 4);
            if (width == 0 || height == 0 || width > 1u << 15 || height > 1u << 15) {
                throw DecodeError("unsupported PNG dimensions");
            }
            if (data[8] != 8 || data[9] != 0) {
                throw DecodeError("only 8-bit grayscale PNGs are supported");
            }
            if (data[10] != 0 || data[11] != 0 || data[12] != 0) {
                throw DecodeError("unsupported PNG compression, filter or interlace method");
            }
            seen_header = true;
        } else if (!seen_header) {
            throw DecodeError("PNG does not start with IHDR");
        } else if (name == "IDAT") {
            idat.insert(idat.end(), data.begin(), data.end());
        } else if (name == "IEND") {
            seen_end = true;
        } else if ((type[0] & 0x20) == 0) {
            throw DecodeError("unknown critical PNG chunk " + name);
        }
        pos += 12 + len;
    }
    if (idat.empty()) throw DecodeError("PNG has no image data");

    const std::size_t stride = width;
    const auto raw = inflate_all(idat, (stride + 1) * height);
    std::vector<std::uint8_t> pixels(stride * height);
    for (std::size_t y = 0; y < height; ++y) {
        const std::uint8_t filter = raw[y * (stride + 1)];
        const std::uint8_t* src = &raw[y * (stride + 1) + 1];
        std::uint8_t* dst = &pixels[y * stride];
        const std::uint8_t* up = y > 0 ? &pixels[(y - 1) * stride] : nullptr;
        for (std::size_t x = 0; x < stride; ++x) {
            const int a = x > 0 ? dst[x - 1] : 0;
            const int b = up ? up[x] : 0;
            const int c = (up && x > 0) ? up[x - 1] : 0;
            int predicted = 0;
            switch (filter) {
                case 0: predicted = 0; break;
                case 1: predicted = a; break;
                case 2: predicted = b; break;
                case 3: predicted = (a + b) / 2; break;
                case 4: predicted = paeth(a, b, c); break;
                default: throw DecodeError("invalid PNG row filter " + std::to_string(filter));
            }
            dst[x] = static_cast<std::uint8_t>(src[x] + predicted);
        }
    }
    try {
        return Canvas::from_pixels(static_cast<int>(width), static_cast<int>(height),
                                   std::move(pixels));
    } catch (const ValidationError& e) {
        throw DecodeError(std::string("PNG is not a binary canvas: ") + e.what());
    }
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("failed reading " + path.string());
    return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.close();
    if (!out) throw IoError("failed writing " + path.string());
}

void write_png_file(const std::filesystem::path& path, const Canvas& canvas) {
    write_file_bytes(path, encode_png(canvas));
}

Canvas read_png_file(const std::filesystem::path& path) { return decode_png(read_file_bytes(path)); }

}  // namespace polyrecover
