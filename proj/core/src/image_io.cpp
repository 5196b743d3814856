#include "textpix/image_io.hpp"

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>

#include <jpeglib.h>
#include <png.h>

#include "textpix/error.hpp"

namespace textpix {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.string().c_str(), mode));
    if (!f) throw IoError("cannot open " + path.string());
    return f;
}

ImageU8 read_png(const std::filesystem::path& path) {
    FilePtr f = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png reader allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png reader allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("corrupt PNG file: " + path.string());
    }
    png_init_io(png, f.get());
    png_read_info(png, info);

    // Normalize anything the decoder hands us to 8-bit RGB.
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    const auto color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
        png_set_gray_to_rgb(png);
    }
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    ImageU8 image;
    image.width = static_cast<std::int64_t>(png_get_image_width(png, info));
    image.height = static_cast<std::int64_t>(png_get_image_height(png, info));
    if (png_get_channels(png, info) != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("unexpected PNG channel layout: " + path.string());
    }
    image.rgb.resize(static_cast<std::size_t>(image.width * image.height * 3));
    std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
    for (std::int64_t y = 0; y < image.height; ++y) {
        rows[static_cast<std::size_t>(y)] = image.rgb.data() + y * image.width * 3;
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

struct JpegErrorHandler {
    jpeg_error_mgr mgr;
    std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* handler = reinterpret_cast<JpegErrorHandler*>(cinfo->err);
    std::longjmp(handler->jump, 1);
}

ImageU8 read_jpeg(const std::filesystem::path& path) {
    FilePtr f = open_file(path, "rb");
    jpeg_decompress_struct cinfo;
    JpegErrorHandler err;
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw DataError("corrupt JPEG file: " + path.string());
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, f.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);

    ImageU8 image;
    image.width = cinfo.output_width;
    image.height = cinfo.output_height;
    image.rgb.resize(static_cast<std::size_t>(image.width * image.height * 3));
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = image.rgb.data() +
                       static_cast<std::int64_t>(cinfo.output_scanline) * image.width * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return image;
}

}  // namespace

ImageU8 read_image_file(const std::filesystem::path& path) {
    std::uint8_t magic[4] = {0, 0, 0, 0};
    {
        FilePtr f = open_file(path, "rb");
        if (std::fread(magic, 1, sizeof(magic), f.get()) != sizeof(magic)) {
            throw DataError("file too short to be an image: " + path.string());
        }
    }
    static const std::uint8_t png_magic[4] = {0x89, 'P', 'N', 'G'};
    if (std::memcmp(magic, png_magic, 4) == 0) return read_png(path);
    if (magic[0] == 0xFF && magic[1] == 0xD8) return read_jpeg(path);
    throw DataError("unsupported image format (expected PNG or JPEG): " + path.string());
}

void write_png(const std::filesystem::path& path, const ImageU8& image) {
    if (image.width <= 0 || image.height <= 0 ||
        static_cast<std::int64_t>(image.rgb.size()) != image.width * image.height * 3) {
        throw ContractError("malformed raster image");
    }
    FilePtr f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png writer allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png writer allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed writing PNG: " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
                 static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
    for (std::int64_t y = 0; y < image.height; ++y) {
        rows[static_cast<std::size_t>(y)] =
            const_cast<png_bytep>(image.rgb.data() + y * image.width * 3);
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace textpix
