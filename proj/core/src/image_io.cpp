#include "mistseg/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

#include "mistseg/errors.hpp"

namespace mistseg::io {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::filesystem::path temp_sibling(const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  return tmp;
}

}  // namespace

std::uint8_t quantize(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

Image8 read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) throw IoError(path.string() + " is not a PNG");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  Image8 image;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed to decode " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png), png_set_strip_alpha(png);
  png_read_update_info(png, info);

  image.width = png_get_image_width(png, info);
  image.height = png_get_image_height(png, info);
  image.channels = png_get_channels(png, info);
  image.pixels.resize(image.width * image.height * image.channels);
  rows.resize(image.height);
  for (std::size_t y = 0; y < image.height; ++y) rows[y] = image.pixels.data() + y * image.width * image.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  if (image.channels != 1 && image.channels != 3) throw IoError(path.string() + ": unsupported channel layout");
  return image;
}

void write_png(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) throw IoError("write_png: only gray or RGB images are supported");
  if (image.pixels.size() != image.width * image.height * image.channels) throw IoError("write_png: pixel buffer size mismatch");
  const auto tmp = temp_sibling(path);
  {
    FilePtr file(std::fopen(tmp.c_str(), "wb"));
    if (!file) throw IoError("cannot write " + tmp.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
      png_destroy_write_struct(&png, nullptr);
      throw IoError("png_create_info_struct failed");
    }
    std::vector<png_bytep> rows(image.height);
    if (setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      throw IoError("failed to encode " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < image.height; ++y) {
      rows[y] = const_cast<png_bytep>(image.pixels.data() + y * image.width * image.channels);
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
  }
  std::filesystem::rename(tmp, path);
}

Tensor to_tensor(const Image8& image) {
  const std::size_t hw = image.width * image.height;
  Tensor t({image.channels, image.height, image.width});
  auto d = t.mutable_data();
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t c = 0; c < image.channels; ++c) d[c * hw + i] = dequantize(image.pixels[i * image.channels + c]);
  return t;
}

Image8 from_tensor(const Tensor& t) {
  const auto& s = t.shape();
  std::size_t c, h, w;
  if (s.size() == 4 && s[0] == 1) {
    c = s[1], h = s[2], w = s[3];
  } else if (s.size() == 3) {
    c = s[0], h = s[1], w = s[2];
  } else {
    throw ShapeError("from_tensor: expected C x H x W, got " + shape_str(s));
  }
  if (c != 1 && c != 3) throw ShapeError("from_tensor: channel dimension must be 1 or 3, got " + std::to_string(c));
  Image8 image{w, h, c, std::vector<std::uint8_t>(c * h * w)};
  auto d = t.data();
  const std::size_t hw = h * w;
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t k = 0; k < c; ++k) image.pixels[i * c + k] = quantize(d[k * hw + i]);
  return image;
}

void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  const auto tmp = temp_sibling(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace mistseg::io
