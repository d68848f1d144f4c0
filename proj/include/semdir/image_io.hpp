#pragma once

// 8-bit grayscale PNG encoding of [-1, 1] images, in memory and on disk.

#include "semdir/core.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace semdir {

inline std::uint8_t to_byte(double v) {
  const double s = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5);
  return std::uint8_t(s);
}

inline double from_byte(std::uint8_t b) { return double(b) / 127.5 - 1.0; }

inline std::vector<std::uint8_t> encode_png(const Vec& image, const ImageShape& shape) {
  require(shape.channels == 1, ErrorKind::invalid_argument, "PNG export supports single-channel images");
  require(image.size() == shape.size(), ErrorKind::dimension_mismatch, "image does not match its shape");
  std::vector<std::uint8_t> pixels(std::size_t(image.size()));
  for (Index i = 0; i < image.size(); ++i) pixels[std::size_t(i)] = to_byte(image[i]);
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = png_uint_32(shape.width);
  img.height = png_uint_32(shape.height);
  img.format = PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  require(png_image_write_to_memory(&img, nullptr, &size, 0, pixels.data(), 0, nullptr) != 0, ErrorKind::io_error,
          "PNG size query failed");
  std::vector<std::uint8_t> out(size);
  require(png_image_write_to_memory(&img, out.data(), &size, 0, pixels.data(), 0, nullptr) != 0, ErrorKind::io_error,
          std::string("PNG encode failed: ") + img.message);
  out.resize(size);
  return out;
}

/// Decodes any PNG to grayscale and maps bytes back to [-1, 1].
inline Vec decode_png(const std::vector<std::uint8_t>& bytes, ImageShape* shape_out = nullptr) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  require(png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()) != 0, ErrorKind::format_error,
          std::string("not a readable PNG: ") + img.message);
  img.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(img));
  if (png_image_finish_read(&img, nullptr, pixels.data(), 0, nullptr) == 0) {
    png_image_free(&img);
    throw Error(ErrorKind::format_error, std::string("PNG decode failed: ") + img.message);
  }
  Vec out(Index(pixels.size()));
  for (std::size_t i = 0; i < pixels.size(); ++i) out[Index(i)] = from_byte(pixels[i]);
  if (shape_out) *shape_out = ImageShape{1, int(img.height), int(img.width)};
  return out;
}

inline void write_png(const std::filesystem::path& path, const Vec& image, const ImageShape& shape) {
  const auto bytes = encode_png(image, shape);
  std::ofstream f(path, std::ios::binary);
  require(bool(f), ErrorKind::io_error, "cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

inline Vec read_png(const std::filesystem::path& path, ImageShape* shape_out = nullptr) {
  std::ifstream f(path, std::ios::binary);
  require(bool(f), ErrorKind::io_error, "cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_png(bytes, shape_out);
}

/// Reads every *.png in a directory (sorted by name) as columns of a matrix.
inline Mat read_png_dir(const std::filesystem::path& dir, const ImageShape& expected) {
  require(std::filesystem::is_directory(dir), ErrorKind::io_error, dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  require(!files.empty(), ErrorKind::invalid_argument, "no PNG images in " + dir.string());
  Mat out(expected.size(), Index(files.size()));
  for (std::size_t j = 0; j < files.size(); ++j) {
    ImageShape got;
    const Vec img = read_png(files[j], &got);
    require(got.height == expected.height && got.width == expected.width, ErrorKind::dimension_mismatch,
            files[j].string() + " is " + std::to_string(got.height) + "x" + std::to_string(got.width));
    out.col(Index(j)) = img;
  }
  return out;
}

}  // namespace semdir
