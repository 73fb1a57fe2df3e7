#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <png.h>

#include "gleason/error.hpp"

namespace gleason {

// Encodes 8-bit RGBA pixels (row-major) as PNG bytes. No timestamp or
// text chunks are written, so equal pixels give equal bytes.
inline std::string encode_png_rgba(std::span<const std::uint8_t> rgba, std::size_t width, std::size_t height) {
  require(rgba.size() == width * height * 4, ErrorCode::kInvalidArgument, "encode_png_rgba: buffer size mismatch");
  require(width > 0 && height > 0, ErrorCode::kInvalidArgument, "encode_png_rgba: empty image");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(ErrorCode::kIo, "png: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(ErrorCode::kIo, "png: cannot create info struct");
  }
  std::string out;
  std::vector<png_const_bytep> rows(height);
  for (std::size_t r = 0; r < height; ++r) rows[r] = rgba.data() + r * width * 4;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::kIo, "png: encoding failed");
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t len) {
        static_cast<std::string*>(png_get_io_ptr(p))->append(reinterpret_cast<const char*>(data), len);
      },
      [](png_structp) {});
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               PNG_COLOR_TYPE_RGBA, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_rows(png, info, const_cast<png_bytepp>(rows.data()));
  png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

struct DecodedPng {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgba;
};

inline DecodedPng decode_png_rgba(std::string_view bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    fail(ErrorCode::kSchema, "png: cannot parse image");
  }
  image.format = PNG_FORMAT_RGBA;
  DecodedPng out;
  out.width = image.width;
  out.height = image.height;
  out.rgba.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.rgba.data(), 0, nullptr)) {
    png_image_free(&image);
    fail(ErrorCode::kSchema, "png: decode failed");
  }
  return out;
}

}  // namespace gleason
