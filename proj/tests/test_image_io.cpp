#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <vector>

#include <jpeglib.h>

#include "fcdd/errors.hpp"
#include "fcdd/image_io.hpp"
#include "fcdd/rng.hpp"
#include "test_util.hpp"

using namespace fcdd;

namespace {

ImageU8 random_rgb(int w, int h, std::uint64_t seed) {
    Rng rng(seed);
    ImageU8 img;
    img.width = w;
    img.height = h;
    img.channels = 3;
    img.pixels.resize(img.size());
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
    return img;
}

// Minimal baseline JPEG writer, used only to exercise the decode path.
void write_jpeg(const std::filesystem::path& path, const ImageU8& img, int quality) {
    jpeg_compress_struct cinfo;
    jpeg_error_mgr jerr;
    cinfo.err = jpeg_std_error(&jerr);
    jpeg_create_compress(&cinfo);
    FILE* f = std::fopen(path.string().c_str(), "wb");
    REQUIRE(f != nullptr);
    jpeg_stdio_dest(&cinfo, f);
    cinfo.image_width = static_cast<JDIMENSION>(img.width);
    cinfo.image_height = static_cast<JDIMENSION>(img.height);
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    std::vector<JSAMPLE> row(static_cast<std::size_t>(img.width) * 3);
    while (cinfo.next_scanline < cinfo.image_height) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            row[i] = img.pixels[static_cast<std::size_t>(cinfo.next_scanline) * row.size() + i];
        }
        JSAMPROW rows[1] = {row.data()};
        jpeg_write_scanlines(&cinfo, rows, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
    std::fclose(f);
}

}  // namespace

TEST_CASE("PNG round trip preserves every byte of an RGB image") {
    ScratchDir dir("png_rt");
    const ImageU8 img = random_rgb(13, 9, 61);
    const auto path = dir.path / "probe.png";
    write_png(path, img);
    const ImageU8 back = decode_image(path);
    CHECK(back.width == img.width);
    CHECK(back.height == img.height);
    CHECK(back.channels == 3);
    CHECK(back.pixels == img.pixels);
}

TEST_CASE("PNG encoding is deterministic") {
    ScratchDir dir("png_det");
    const ImageU8 img = random_rgb(16, 16, 62);
    write_png(dir.path / "a.png", img);
    write_png(dir.path / "b.png", img);
    CHECK(read_file_bytes(dir.path / "a.png") == read_file_bytes(dir.path / "b.png"));
}

TEST_CASE("grayscale PNG decodes to three equal channels") {
    ScratchDir dir("png_gray");
    ImageU8 gray;
    gray.width = 4;
    gray.height = 3;
    gray.channels = 1;
    gray.pixels = {0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 255};
    const auto path = dir.path / "gray.png";
    write_png(path, gray);
    const ImageU8 back = decode_image(path);
    REQUIRE(back.channels == 3);
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 4; ++x) {
            const std::uint8_t g = gray.at(y, x, 0);
            CHECK(back.at(y, x, 0) == g);
            CHECK(back.at(y, x, 1) == g);
            CHECK(back.at(y, x, 2) == g);
        }
}

TEST_CASE("JPEG decodes through the same entry point") {
    ScratchDir dir("jpeg_probe");
    // Constant-color blocks survive JPEG compression nearly exactly.
    ImageU8 img;
    img.width = 16;
    img.height = 16;
    img.channels = 3;
    img.pixels.assign(img.size(), 0);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            img.at(y, x, 0) = 180;
            img.at(y, x, 1) = 90;
            img.at(y, x, 2) = 40;
        }
    const auto path = dir.path / "probe.jpg";
    write_jpeg(path, img, 95);
    const ImageU8 back = decode_image(path);
    REQUIRE(back.width == 16);
    REQUIRE(back.height == 16);
    REQUIRE(back.channels == 3);
    for (std::size_t i = 0; i < back.pixels.size(); ++i) {
        CHECK(std::abs(static_cast<int>(back.pixels[i]) - static_cast<int>(img.pixels[i])) <= 4);
    }
}

TEST_CASE("decode_image rejects missing and malformed files") {
    ScratchDir dir("decode_err");
    CHECK_THROWS_AS(decode_image(dir.path / "absent.png"), data_error);
    write_file_bytes(dir.path / "garbage.png", "this is not an image at all");
    CHECK_THROWS_AS(decode_image(dir.path / "garbage.png"), data_error);
}

TEST_CASE("PFM round trip is bit-exact") {
    ScratchDir dir("pfm_rt");
    Rng rng(63);
    const int w = 7, h = 5;
    std::vector<float> values(static_cast<std::size_t>(w * h));
    for (auto& v : values) v = static_cast<float>(rng.uniform(-100.0, 100.0));
    values[0] = 0.0f;
    values[1] = 1e-30f;
    values[2] = -3.5f;

    const auto path = dir.path / "map.pfm";
    write_pfm(path, w, h, values);
    int rw = 0, rh = 0;
    const std::vector<float> back = read_pfm(path, rw, rh);
    CHECK(rw == w);
    CHECK(rh == h);
    REQUIRE(back.size() == values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        CHECK(std::memcmp(&back[i], &values[i], sizeof(float)) == 0);
    }
}

TEST_CASE("read_pfm rejects malformed headers") {
    ScratchDir dir("pfm_err");
    write_file_bytes(dir.path / "bad.pfm", "PF\n3 3\n-1.0\n");
    int w = 0, h = 0;
    CHECK_THROWS_AS(read_pfm(dir.path / "bad.pfm", w, h), data_error);
}
