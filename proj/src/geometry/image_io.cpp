#include "keymark/geometry/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

namespace keymark::geometry {

namespace {

void append_bytes(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

// Fixed SUB filter and a fast zlib level: frames are exported by the thousand,
// and adaptive filtering dominated the cost.
std::vector<std::uint8_t> encode(const std::uint8_t* pixels, int width, int height, int channels) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("PNG encoder allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("PNG encoder allocation failed");
  }
  std::vector<std::uint8_t> out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encoding failed");
  }
  png_set_write_fn(png, &out, append_bytes, nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_filter(png, PNG_FILTER_TYPE_BASE, PNG_FILTER_SUB);
  png_set_compression_level(png, 3);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  for (int v = 0; v < height; ++v) png_write_row(png, const_cast<png_bytep>(pixels + v * stride));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

std::vector<std::uint8_t> decode(png_image& image, png_uint_32 format, bool from_file,
                                 const std::filesystem::path& path, const std::vector<std::uint8_t>* bytes) {
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  const int ok = from_file ? png_image_begin_read_from_file(&image, path.c_str())
                           : png_image_begin_read_from_memory(&image, bytes->data(), bytes->size());
  if (!ok) throw IoError("cannot read PNG " + path.string() + ": " + image.message);
  image.format = format;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  return buffer;
}

RgbImage to_rgb(const png_image& image, const std::vector<std::uint8_t>& buffer) {
  RgbImage out(static_cast<int>(image.width), static_cast<int>(image.height));
  for (int v = 0; v < out.height(); ++v) {
    for (int u = 0; u < out.width(); ++u) {
      const std::size_t i = (static_cast<std::size_t>(v) * out.width() + u) * 3;
      out.at(u, v) = {buffer[i], buffer[i + 1], buffer[i + 2]};
    }
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  static_assert(sizeof(Rgb) == 3);
  return encode(reinterpret_cast<const std::uint8_t*>(image.data().data()), image.width(), image.height(), 3);
}

std::vector<std::uint8_t> encode_png(const BinaryMask& mask) {
  std::vector<std::uint8_t> gray(mask.data().size());
  for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = mask.data()[i] ? 255 : 0;
  return encode(gray.data(), mask.width(), mask.height(), 1);
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

void write_png(const std::filesystem::path& path, const RgbImage& image) { write_bytes(path, encode_png(image)); }

void write_png(const std::filesystem::path& path, const BinaryMask& mask) { write_bytes(path, encode_png(mask)); }

RgbImage read_png_rgb(const std::filesystem::path& path) {
  png_image image;
  const auto buffer = decode(image, PNG_FORMAT_RGB, true, path, nullptr);
  return to_rgb(image, buffer);
}

RgbImage decode_png_rgb(const std::vector<std::uint8_t>& bytes) {
  png_image image;
  const auto buffer = decode(image, PNG_FORMAT_RGB, false, "<memory>", &bytes);
  return to_rgb(image, buffer);
}

BinaryMask read_png_mask(const std::filesystem::path& path) {
  png_image image;
  const auto buffer = decode(image, PNG_FORMAT_GRAY, true, path, nullptr);
  BinaryMask out(static_cast<int>(image.width), static_cast<int>(image.height), 0);
  for (std::size_t i = 0; i < buffer.size(); ++i) out.data()[i] = buffer[i] >= 128 ? 1 : 0;
  return out;
}

void write_pgm16(const std::filesystem::path& path, const DepthImage& depth) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  std::ostringstream header;
  header << "P5\n" << depth.width() << " " << depth.height() << "\n65535\n";
  std::string buffer = header.str();
  buffer.reserve(buffer.size() + depth.data().size() * 2);
  for (double d : depth.data()) {
    const long mm = std::lround(d * 1000.0);
    const auto clamped = static_cast<std::uint16_t>(std::clamp(mm, 0L, 65535L));
    buffer.push_back(static_cast<char>(clamped >> 8));
    buffer.push_back(static_cast<char>(clamped & 0xff));
  }
  out.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

DepthImage read_pgm16(const std::filesystem::path& path, double far_plane) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  int width = 0;
  int height = 0;
  int maxval = 0;
  in >> magic >> width >> height >> maxval;
  in.get();
  if (magic != "P5" || width <= 0 || height <= 0 || maxval != 65535) {
    throw IoError(path.string() + " is not a 16-bit binary PGM");
  }
  DepthImage depth(width, height, DepthImage::kInvalid, far_plane);
  for (double& d : depth.data()) {
    unsigned char bytes[2];
    in.read(reinterpret_cast<char*>(bytes), 2);
    if (!in) throw IoError(path.string() + " is truncated");
    d = ((bytes[0] << 8) | bytes[1]) / 1000.0;
  }
  return depth;
}

}  // namespace keymark::geometry
