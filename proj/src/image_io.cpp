#include "wurstkit/image_io.hpp"

#include "wurstkit/checkpoint.hpp"
#include "wurstkit/errors.hpp"

#include <png.h>
// jpeglib.h needs FILE and size_t declared first.
#include <cstdio>
#include <jpeglib.h>

#include <csetjmp>
#include <cstring>
#include <vector>

namespace wurstkit {

std::string to_rgb8(const torch::Tensor& image) {
    if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("expected a [3, H, W] image");
    auto u8 = image.detach()
                  .to(torch::kCPU, torch::kFloat)
                  .clamp(0.0, 1.0)
                  .mul(255.0)
                  .round()
                  .to(torch::kUInt8)
                  .permute({1, 2, 0})
                  .contiguous();
    return std::string(reinterpret_cast<const char*>(u8.data_ptr<uint8_t>()), static_cast<size_t>(u8.numel()));
}

torch::Tensor from_rgb8(std::string_view pixels, int64_t height, int64_t width) {
    if (static_cast<int64_t>(pixels.size()) != height * width * 3) throw ShapeError("pixel buffer size mismatch");
    auto t = torch::empty({height, width, 3}, torch::kUInt8);
    std::memcpy(t.data_ptr<uint8_t>(), pixels.data(), pixels.size());
    return t.permute({2, 0, 1}).to(torch::kFloat).div(255.0).contiguous();
}

namespace {

void png_append(png_structp png, png_bytep data, png_size_t len) {
    auto* out = static_cast<std::string*>(png_get_io_ptr(png));
    out->append(reinterpret_cast<const char*>(data), len);
}

struct PngReadState {
    std::string_view bytes;
    size_t pos = 0;
};

void png_consume(png_structp png, png_bytep data, png_size_t len) {
    auto* st = static_cast<PngReadState*>(png_get_io_ptr(png));
    if (st->pos + len > st->bytes.size()) png_error(png, "truncated PNG");
    std::memcpy(data, st->bytes.data() + st->pos, len);
    st->pos += len;
}

struct JpegError {
    jpeg_error_mgr mgr;
    std::jmp_buf jump;
};

void jpeg_fail(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegError*>(cinfo->err);
    std::longjmp(err->jump, 1);
}

}  // namespace

std::string encode_png(const torch::Tensor& image) {
    const auto rgb = to_rgb8(image);
    const auto h = static_cast<png_uint_32>(image.size(1)), w = static_cast<png_uint_32>(image.size(2));
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    std::string out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("PNG encoding failed");
    }
    png_set_write_fn(png, &out, png_append, nullptr);
    png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (png_uint_32 y = 0; y < h; ++y)
        png_write_row(png, reinterpret_cast<png_const_bytep>(rgb.data() + static_cast<size_t>(y) * w * 3));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

torch::Tensor decode_png(std::string_view bytes) {
    if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0)
        throw FormatError("not a PNG file");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    PngReadState st{bytes, 0};
    std::string pixels;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("PNG decoding failed");
    }
    png_set_read_fn(png, &st, png_consume);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const auto h = png_get_image_height(png, info), w = png_get_image_width(png, info);
    pixels.resize(static_cast<size_t>(h) * w * 3);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = reinterpret_cast<png_bytep>(pixels.data() + static_cast<size_t>(y) * w * 3);
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return from_rgb8(pixels, h, w);
}

torch::Tensor decode_jpeg(std::string_view bytes) {
    jpeg_decompress_struct cinfo;
    JpegError err;
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = jpeg_fail;
    std::string pixels;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw FormatError("JPEG decoding failed");
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    const size_t stride = static_cast<size_t>(cinfo.output_width) * 3;
    pixels.resize(stride * cinfo.output_height);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = reinterpret_cast<JSAMPROW>(pixels.data() + stride * cinfo.output_scanline);
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    const int64_t h = cinfo.output_height, w = cinfo.output_width;
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return from_rgb8(pixels, h, w);
}

torch::Tensor read_image(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    if (bytes.size() >= 3 && static_cast<unsigned char>(bytes[0]) == 0xFF && static_cast<unsigned char>(bytes[1]) == 0xD8)
        return decode_jpeg(bytes);
    return decode_png(bytes);
}

void write_png(const std::filesystem::path& path, const torch::Tensor& image) {
    write_file_atomic(path, encode_png(image));
}

}  // namespace wurstkit
