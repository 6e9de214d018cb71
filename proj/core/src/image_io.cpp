#include "fcdd/image_io.hpp"

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <jpeglib.h>
#include <png.h>

#include "fcdd/errors.hpp"

namespace fcdd {

namespace {

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open image file: " + path.string());
    in.seekg(0, std::ios::end);
    const auto size = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    if (size > 0) in.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!in) throw data_error("cannot read image file: " + path.string());
    return bytes;
}

ImageU8 decode_png(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
        throw data_error("failed to parse PNG: " + path.string() + " (" + img.message + ")");
    }
    img.format = PNG_FORMAT_RGB;
    ImageU8 out;
    out.width = static_cast<int>(img.width);
    out.height = static_cast<int>(img.height);
    out.channels = 3;
    out.pixels.resize(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
        png_image_free(&img);
        throw data_error("failed to decode PNG: " + path.string() + " (" + img.message + ")");
    }
    return out;
}

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

ImageU8 decode_jpeg(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    jpeg_decompress_struct cinfo;
    JpegErrorMgr err;
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw data_error("failed to decode JPEG: " + path.string() + " (" + err.message + ")");
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);

    ImageU8 out;
    out.width = static_cast<int>(cinfo.output_width);
    out.height = static_cast<int>(cinfo.output_height);
    out.channels = 3;
    out.pixels.resize(out.size());
    const std::size_t row_stride = static_cast<std::size_t>(out.width) * 3;
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = out.pixels.data() + cinfo.output_scanline * row_stride;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return out;
}

}  // namespace

ImageU8 decode_image(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    static const std::uint8_t png_magic[4] = {0x89, 'P', 'N', 'G'};
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), png_magic, 4) == 0) {
        return decode_png(path, bytes);
    }
    if (bytes.size() >= 2 && bytes[0] == 0xFF && bytes[1] == 0xD8) {
        return decode_jpeg(path, bytes);
    }
    throw data_error("unsupported image format (expected PNG or JPEG): " + path.string());
}

void write_png(const std::filesystem::path& path, const ImageU8& image) {
    if (image.channels != 1 && image.channels != 3) {
        throw std::invalid_argument("write_png: channels must be 1 or 3");
    }
    if (image.width <= 0 || image.height <= 0 ||
        image.pixels.size() != image.size()) {
        throw std::invalid_argument("write_png: inconsistent image dimensions");
    }
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&img, path.string().c_str(), 0, image.pixels.data(), 0,
                                 nullptr)) {
        throw data_error("failed to write PNG: " + path.string() + " (" + img.message + ")");
    }
}

void write_pfm(const std::filesystem::path& path, int width, int height,
               const std::vector<float>& values) {
    if (width <= 0 || height <= 0 ||
        values.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
        throw std::invalid_argument("write_pfm: inconsistent dimensions");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot open PFM for writing: " + path.string());
    out << "Pf\n" << width << " " << height << "\n-1.0\n";
    // Negative scale declares little-endian payload; rows bottom-up per format.
    for (int y = height - 1; y >= 0; --y) {
        const float* row = values.data() + static_cast<std::size_t>(y) * width;
        for (int x = 0; x < width; ++x) {
            std::uint32_t bits;
            std::memcpy(&bits, &row[x], 4);
            const std::uint8_t le[4] = {
                static_cast<std::uint8_t>(bits & 0xFF),
                static_cast<std::uint8_t>((bits >> 8) & 0xFF),
                static_cast<std::uint8_t>((bits >> 16) & 0xFF),
                static_cast<std::uint8_t>((bits >> 24) & 0xFF)};
            out.write(reinterpret_cast<const char*>(le), 4);
        }
    }
    if (!out) throw data_error("failed to write PFM: " + path.string());
}

std::vector<float> read_pfm(const std::filesystem::path& path, int& width, int& height) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open PFM: " + path.string());
    std::string magic;
    double scale = 0.0;
    in >> magic >> width >> height >> scale;
    if (!in || magic != "Pf" || width <= 0 || height <= 0 || scale >= 0.0) {
        throw data_error("not a little-endian grayscale PFM: " + path.string());
    }
    in.get();  // single whitespace byte after the header
    std::vector<float> values(static_cast<std::size_t>(width) * height);
    for (int y = height - 1; y >= 0; --y) {
        float* row = values.data() + static_cast<std::size_t>(y) * width;
        for (int x = 0; x < width; ++x) {
            std::uint8_t le[4];
            in.read(reinterpret_cast<char*>(le), 4);
            const std::uint32_t bits = static_cast<std::uint32_t>(le[0]) |
                                       (static_cast<std::uint32_t>(le[1]) << 8) |
                                       (static_cast<std::uint32_t>(le[2]) << 16) |
                                       (static_cast<std::uint32_t>(le[3]) << 24);
            std::memcpy(&row[x], &bits, 4);
        }
    }
    if (!in) throw data_error("truncated PFM payload: " + path.string());
    return values;
}

}  // namespace fcdd
