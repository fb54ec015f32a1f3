#pragma once

// 8-bit RGB image I/O: PNG (color type 2, via zlib) and binary PPM (P6).
// Values map to [0,1]; save quantizes to the 1/255 grid, so save->load is
// lossless for values already on that grid.

#include <string>
#include <vector>

#include "mdda/tensor.hpp"

namespace mdda {

TP<float> load_image(const std::string& path);
void save_image(const TP<float>& img, const std::string& path);  // format from extension (.png/.ppm)

// Listed in lexicographic order; PNG/PPM extensions only.
std::vector<std::string> list_images(const std::string& dir);

// Raw 8-bit codecs, used by the loaders and directly by tests.
struct Image8 {
    int width = 0, height = 0;
    std::vector<unsigned char> rgb;  // 3 bytes per pixel, row-major
};

Image8 decode_png(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> encode_png(const Image8& img);
Image8 decode_ppm(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> encode_ppm(const Image8& img);

TP<float> image_to_tensor(const Image8& img);
Image8 tensor_to_image(const TP<float>& t);

}  // namespace mdda
