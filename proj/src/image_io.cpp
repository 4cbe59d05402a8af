#include "vlime/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <csetjmp>
#include <sstream>
#include <system_error>
#include <thread>

#include "vlime/error.hpp"

namespace vlime::io {

namespace {

std::string lower_ext(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

struct PngReadBuffer {
  std::span<const std::uint8_t> bytes;
  std::size_t offset = 0;
};

void png_read_from_span(png_structp png, png_bytep out, png_size_t length) {
  auto* buf = static_cast<PngReadBuffer*>(png_get_io_ptr(png));
  if (buf->offset + length > buf->bytes.size()) {
    png_error(png, "truncated stream");
  }
  std::memcpy(out, buf->bytes.data() + buf->offset, length);
  buf->offset += length;
}

void png_write_to_vector(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void png_flush_noop(png_structp) {}

void png_warn_silent(png_structp, png_const_charp) {}

// Skips whitespace and '#' comments in a PNM header.
std::size_t pnm_skip(std::span<const std::uint8_t> b, std::size_t i) {
  while (i < b.size()) {
    if (b[i] == '#') {
      while (i < b.size() && b[i] != '\n') ++i;
    } else if (std::isspace(b[i])) {
      ++i;
    } else {
      break;
    }
  }
  return i;
}

int pnm_int(std::span<const std::uint8_t> b, std::size_t& i) {
  i = pnm_skip(b, i);
  if (i >= b.size() || !std::isdigit(b[i])) {
    throw DataError("PNM: malformed header");
  }
  long v = 0;
  while (i < b.size() && std::isdigit(b[i])) {
    v = v * 10 + (b[i] - '0');
    if (v > 1 << 24) throw DataError("PNM: header value out of range");
    ++i;
  }
  return static_cast<int>(v);
}

}  // namespace

void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32le(std::vector<std::uint8_t>& out, float v) {
  put_u32le(out, std::bit_cast<std::uint32_t>(v));
}

std::uint32_t get_u32le(std::span<const std::uint8_t> in, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[offset + i]) << (8 * i);
  return v;
}

float get_f32le(std::span<const std::uint8_t> in, std::size_t offset) {
  return std::bit_cast<float>(get_u32le(in, offset));
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
  static std::atomic<unsigned> counter{0};
  std::ostringstream suffix;
  suffix << ".tmp" << std::hash<std::thread::id>{}(std::this_thread::get_id()) % 100000
         << "_" << counter++;
  fs::path tmp = path;
  tmp += suffix.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw DataError("cannot move output into place: " + path.string());
  }
}

void write_file_atomic(const fs::path& path, const std::string& text) {
  write_file_atomic(path, std::span<const std::uint8_t>(
                              reinterpret_cast<const std::uint8_t*>(text.data()),
                              text.size()));
}

std::vector<std::uint8_t> encode_png(const Image& img) {
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            nullptr, png_warn_silent);
  if (!png) throw DataError("PNG: cannot allocate writer");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("PNG: encoding failed");
  }
  png_set_write_fn(png, &out, png_write_to_vector, png_flush_noop);
  png_set_IHDR(png, info, img.width(), img.height(), 8,
               img.channels() == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(img.width()) * img.channels();
  for (int y = 0; y < img.height(); ++y) {
    png_write_row(png, const_cast<png_bytep>(img.data().data() + y * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw DataError("PNG: bad signature");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           nullptr, png_warn_silent);
  if (!png) throw DataError("PNG: cannot allocate reader");
  png_infop info = png_create_info_struct(png);
  PngReadBuffer buf{bytes, 0};
  // Allocated before setjmp so a longjmp never skips a destructor.
  std::vector<std::uint8_t> data;
  std::vector<png_bytep> rows;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("PNG: corrupt or truncated stream");
  }
  png_set_read_fn(png, &buf, png_read_from_span);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const int channels = png_get_channels(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("PNG: unsupported channel layout");
  }
  data.resize(static_cast<std::size_t>(w) * h * channels);
  rows.resize(h);
  for (int y = 0; y < h; ++y) {
    rows[y] = data.data() + static_cast<std::size_t>(y) * w * channels;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return Image(w, h, channels, std::move(data));
}

std::vector<std::uint8_t> encode_pnm(const Image& img) {
  std::ostringstream header;
  header << (img.channels() == 1 ? "P5" : "P6") << "\n"
         << img.width() << " " << img.height() << "\n255\n";
  const std::string h = header.str();
  std::vector<std::uint8_t> out(h.begin(), h.end());
  out.insert(out.end(), img.data().begin(), img.data().end());
  return out;
}

Image decode_pnm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw DataError("PNM: only binary P5/P6 is supported");
  }
  const int channels = bytes[1] == '5' ? 1 : 3;
  std::size_t i = 2;
  const int w = pnm_int(bytes, i);
  const int h = pnm_int(bytes, i);
  const int maxval = pnm_int(bytes, i);
  if (maxval != 255) throw DataError("PNM: only maxval 255 is supported");
  if (i >= bytes.size() || !std::isspace(bytes[i])) throw DataError("PNM: malformed header");
  ++i;
  const std::size_t n = static_cast<std::size_t>(w) * h * channels;
  if (w < 1 || h < 1 || bytes.size() - i < n) throw DataError("PNM: truncated pixel data");
  return Image(w, h, channels,
               std::vector<std::uint8_t>(bytes.begin() + i, bytes.begin() + i + n));
}

Image read_image(const fs::path& path) {
  const std::string ext = lower_ext(path);
  if (!fs::exists(path)) throw DataError("image not found: " + path.string());
  const auto bytes = read_file(path);
  try {
    if (ext == ".png") return decode_png(bytes);
    if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") return decode_pnm(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  throw DataError("unsupported image extension: " + path.string());
}

void write_image(const fs::path& path, const Image& img) {
  const std::string ext = lower_ext(path);
  if (ext == ".png") return write_file_atomic(path, encode_png(img));
  if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") {
    if ((ext == ".ppm") != (img.channels() == 3) && ext != ".pnm") {
      throw InvalidArgument("channel count does not match " + ext);
    }
    return write_file_atomic(path, encode_pnm(img));
  }
  throw InvalidArgument("unsupported image extension: " + path.string());
}

std::vector<std::uint8_t> encode_heatmap(const Heatmap& map) {
  std::vector<std::uint8_t> out = {'H', 'M', 'A', 'P'};
  out.reserve(12 + map.size() * 4);
  put_u32le(out, static_cast<std::uint32_t>(map.width()));
  put_u32le(out, static_cast<std::uint32_t>(map.height()));
  for (double v : map.values()) put_f32le(out, static_cast<float>(v));
  return out;
}

Heatmap decode_heatmap(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "HMAP", 4) != 0) {
    throw DataError("heatmap: missing HMAP header");
  }
  const std::uint32_t w = get_u32le(bytes, 4);
  const std::uint32_t h = get_u32le(bytes, 8);
  if (w == 0 || h == 0 || w > (1u << 16) || h > (1u << 16)) {
    throw DataError("heatmap: invalid dimensions");
  }
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (bytes.size() != 12 + n * 4) throw DataError("heatmap: payload size mismatch");
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = get_f32le(bytes, 12 + 4 * i);
  return Heatmap(static_cast<int>(w), static_cast<int>(h), std::move(values));
}

void write_heatmap(const fs::path& path, const Heatmap& map) {
  write_file_atomic(path, encode_heatmap(map));
}

Heatmap read_heatmap(const fs::path& path) {
  try {
    return decode_heatmap(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

Image heatmap_to_gray(const Heatmap& map) {
  Image img(map.width(), map.height(), 1);
  for (std::size_t i = 0; i < map.size(); ++i) {
    const double v = std::clamp(map[i], 0.0, 1.0);
    img.data()[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return img;
}

void write_heatmap_png(const fs::path& path, const Heatmap& map) {
  write_file_atomic(path, encode_png(heatmap_to_gray(map)));
}

void write_label_pgm16(const fs::path& path, int width, int height,
                       std::span<const int> labels) {
  std::ostringstream header;
  header << "P5\n" << width << " " << height << "\n65535\n";
  const std::string h = header.str();
  std::vector<std::uint8_t> out(h.begin(), h.end());
  for (int label : labels) {
    const auto v = static_cast<std::uint16_t>(std::clamp(label, 0, 65535));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  }
  write_file_atomic(path, out);
}

}  // namespace vlime::io
