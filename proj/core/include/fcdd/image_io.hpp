#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace fcdd {

// Interleaved row-major 8-bit image. channels is 1 (gray) or 3 (RGB).
struct ImageU8 {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;

    std::size_t size() const {
        return static_cast<std::size_t>(width) * static_cast<std::size_t>(height) *
               static_cast<std::size_t>(channels);
    }
    std::uint8_t& at(int y, int x, int c) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::uint8_t at(int y, int x, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
};

// Decodes a PNG or JPEG file (sniffed by magic bytes) to 3-channel RGB.
// Throws data_error naming the file on unreadable or unsupported input.
ImageU8 decode_image(const std::filesystem::path& path);

// Encoders always use the same fixed settings so identical pixels produce
// identical bytes.
void write_png(const std::filesystem::path& path, const ImageU8& image);

// Grayscale PFM: "Pf" header, little-endian (negative scale), rows stored
// bottom-up as float32.
void write_pfm(const std::filesystem::path& path, int width, int height,
               const std::vector<float>& values);
std::vector<float> read_pfm(const std::filesystem::path& path, int& width, int& height);

}  // namespace fcdd
