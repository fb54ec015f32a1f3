#include "mdda/image_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace mdda {

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    return bytes;
}

void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write '" + path + "'");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to '" + path + "'");
}

uint32_t be32(const unsigned char* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void put_be32(std::vector<unsigned char>& out, uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

const unsigned char kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

Image8 decode_png(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSig, 8) != 0)
        throw IoError("not a PNG file (bad signature)");
    size_t pos = 8;
    Image8 img;
    bool have_ihdr = false, have_iend = false;
    std::vector<unsigned char> idat;
    while (pos + 8 <= bytes.size()) {
        const uint32_t len = be32(&bytes[pos]);
        if (pos + 12 + len > bytes.size()) throw IoError("truncated PNG chunk");
        const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
        const unsigned char* data = &bytes[pos + 8];
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw IoError("malformed IHDR");
            img.width = static_cast<int>(be32(data));
            img.height = static_cast<int>(be32(data + 4));
            const int depth = data[8], color = data[9], interlace = data[12];
            if (img.width <= 0 || img.height <= 0) throw IoError("malformed PNG dimensions");
            if (depth != 8) throw IoError("unsupported PNG bit depth " + std::to_string(depth) + " (need 8)");
            if (color != 2) throw IoError("unsupported PNG color type " + std::to_string(color) + " (need RGB)");
            if (interlace != 0) throw IoError("interlaced PNG not supported");
            have_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            have_iend = true;
            break;
        }
        pos += 12 + len;
    }
    if (!have_ihdr) throw IoError("PNG missing IHDR");
    if (!have_iend) throw IoError("truncated PNG (no IEND)");
    if (idat.empty()) throw IoError("PNG missing IDAT");

    const size_t stride = static_cast<size_t>(img.width) * 3;
    const size_t raw_size = (stride + 1) * img.height;
    std::vector<unsigned char> raw(raw_size);
    uLongf out_len = raw_size;
    const int rc = uncompress(raw.data(), &out_len, idat.data(), static_cast<uLong>(idat.size()));
    if (rc != Z_OK || out_len != raw_size) throw IoError("PNG inflate failed (corrupt or truncated stream)");

    img.rgb.assign(stride * img.height, 0);
    std::vector<unsigned char> prev(stride, 0);
    for (int y = 0; y < img.height; ++y) {
        const unsigned char filter = raw[(stride + 1) * y];
        const unsigned char* src = &raw[(stride + 1) * y + 1];
        unsigned char* dst = &img.rgb[stride * y];
        for (size_t i = 0; i < stride; ++i) {
            const int a = i >= 3 ? dst[i - 3] : 0;
            const int b = prev[i];
            const int c = i >= 3 ? prev[i - 3] : 0;
            int v = src[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default: throw IoError("bad PNG filter type " + std::to_string(filter));
            }
            dst[i] = static_cast<unsigned char>(v & 0xff);
        }
        std::memcpy(prev.data(), dst, stride);
    }
    return img;
}

std::vector<unsigned char> encode_png(const Image8& img) {
    const size_t stride = static_cast<size_t>(img.width) * 3;
    if (img.rgb.size() != stride * img.height) throw IoError("encode_png: buffer/dimension mismatch");
    std::vector<unsigned char> raw((stride + 1) * img.height);
    for (int y = 0; y < img.height; ++y) {
        raw[(stride + 1) * y] = 0;  // filter: none
        std::memcpy(&raw[(stride + 1) * y + 1], &img.rgb[stride * y], stride);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> comp(bound);
    if (compress2(comp.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw IoError("PNG deflate failed");
    comp.resize(bound);

    std::vector<unsigned char> out(kPngSig, kPngSig + 8);
    auto chunk = [&out](const char* type, const std::vector<unsigned char>& data) {
        put_be32(out, static_cast<uint32_t>(data.size()));
        const size_t start = out.size();
        out.insert(out.end(), type, type + 4);
        out.insert(out.end(), data.begin(), data.end());
        const uLong crc = crc32(crc32(0, nullptr, 0), &out[start], static_cast<uInt>(4 + data.size()));
        put_be32(out, static_cast<uint32_t>(crc));
    };
    std::vector<unsigned char> ihdr;
    put_be32(ihdr, static_cast<uint32_t>(img.width));
    put_be32(ihdr, static_cast<uint32_t>(img.height));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // color type: RGB
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter method
    ihdr.push_back(0);   // no interlace
    chunk("IHDR", ihdr);
    chunk("IDAT", comp);
    chunk("IEND", {});
    return out;
}

Image8 decode_ppm(const std::vector<unsigned char>& bytes) {
    size_t pos = 0;
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (std::isspace(bytes[pos])) {
                ++pos;
            } else if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&]() -> int {
        skip_space();
        if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw IoError("malformed PPM header");
        long v = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + (bytes[pos] - '0');
            if (v > 1 << 30) throw IoError("malformed PPM header (value too large)");
            ++pos;
        }
        return static_cast<int>(v);
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6')
        throw IoError("not a binary PPM (P6) file");
    pos = 2;
    Image8 img;
    img.width = read_int();
    img.height = read_int();
    const int maxval = read_int();
    if (img.width <= 0 || img.height <= 0) throw IoError("malformed PPM dimensions");
    if (maxval != 255) throw IoError("unsupported PPM maxval " + std::to_string(maxval) + " (need 255)");
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw IoError("malformed PPM header");
    ++pos;  // single whitespace before the raster
    const size_t need = static_cast<size_t>(img.width) * img.height * 3;
    if (bytes.size() - pos < need) throw IoError("truncated PPM raster");
    img.rgb.assign(bytes.begin() + static_cast<long>(pos), bytes.begin() + static_cast<long>(pos + need));
    return img;
}

std::vector<unsigned char> encode_ppm(const Image8& img) {
    const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<unsigned char> out(header.begin(), header.end());
    out.insert(out.end(), img.rgb.begin(), img.rgb.end());
    return out;
}

TP<float> image_to_tensor(const Image8& img) {
    auto t = make_tensor<float>(1, 3, img.height, img.width);
    const size_t plane = static_cast<size_t>(img.height) * img.width;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const size_t p = (static_cast<size_t>(y) * img.width + x) * 3;
            for (int c = 0; c < 3; ++c)
                t->data[static_cast<size_t>(c) * plane + static_cast<size_t>(y) * img.width + x] =
                    static_cast<float>(img.rgb[p + c]) / 255.0f;
        }
    return t;
}

Image8 tensor_to_image(const TP<float>& t) {
    if (t->shape.n != 1 || t->shape.c != 3)
        throw DimError("tensor_to_image: need 1x3xHxW, got " + t->shape.str());
    Image8 img;
    img.height = t->shape.h;
    img.width = t->shape.w;
    img.rgb.resize(static_cast<size_t>(img.width) * img.height * 3);
    const size_t plane = static_cast<size_t>(img.height) * img.width;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                float v = t->data[static_cast<size_t>(c) * plane + static_cast<size_t>(y) * img.width + x];
                v = std::clamp(v, 0.0f, 1.0f);
                img.rgb[(static_cast<size_t>(y) * img.width + x) * 3 + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0f));
            }
    return img;
}

namespace {

bool has_ext(const std::string& path, const char* ext) {
    const auto dot = path.rfind('.');
    if (dot == std::string::npos) return false;
    std::string e = path.substr(dot);
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
    return e == ext;
}

}  // namespace

TP<float> load_image(const std::string& path) {
    const auto bytes = read_file(path);
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0)
        return image_to_tensor(decode_png(bytes));
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6')
        return image_to_tensor(decode_ppm(bytes));
    throw IoError("'" + path + "' is neither PNG nor binary PPM");
}

void save_image(const TP<float>& img, const std::string& path) {
    const Image8 raw = tensor_to_image(img);
    if (has_ext(path, ".ppm"))
        write_file(path, encode_ppm(raw));
    else if (has_ext(path, ".png"))
        write_file(path, encode_png(raw));
    else
        throw IoError("unsupported image extension in '" + path + "' (use .png or .ppm)");
}

std::vector<std::string> list_images(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw IoError("'" + dir + "' is not a directory");
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const std::string p = e.path().string();
        if (has_ext(p, ".png") || has_ext(p, ".ppm")) out.push_back(p);
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace mdda
