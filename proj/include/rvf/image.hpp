#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace rvf {

/// Dense 8-bit RGB raster, row-major, 3 bytes per pixel.
struct Image8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // height * width * 3

  Image8() = default;
  Image8(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t* at(int x, int y) {
    return data.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  const std::uint8_t* at(int x, int y) const {
    return data.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }

  void fill(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    for (std::size_t i = 0; i + 2 < data.size(); i += 3) {
      data[i] = r;
      data[i + 1] = g;
      data[i + 2] = b;
    }
  }

  bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
};

namespace detail {

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline std::uint32_t get_be32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

inline void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
                      const std::vector<std::uint8_t>& payload) {
  put_be32(out, static_cast<std::uint32_t>(payload.size()));
  std::vector<std::uint8_t> crc_buf(type, type + 4);
  crc_buf.insert(crc_buf.end(), payload.begin(), payload.end());
  out.insert(out.end(), crc_buf.begin(), crc_buf.end());
  const auto crc = static_cast<std::uint32_t>(
      ::crc32(0L, crc_buf.data(), static_cast<uInt>(crc_buf.size())));
  put_be32(out, crc);
}

inline int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace detail

/// Serialize to an in-memory PNG (8-bit RGB, non-interlaced, filter None,
/// zlib level 6 pinned so identical images give identical bytes).
inline std::vector<std::uint8_t> encode_png(const Image8& img) {
  if (img.width <= 0 || img.height <= 0) throw std::invalid_argument("encode_png: empty image");
  std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

  std::vector<std::uint8_t> ihdr;
  detail::put_be32(ihdr, static_cast<std::uint32_t>(img.width));
  detail::put_be32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type: truecolor RGB
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter method
  ihdr.push_back(0);  // no interlace
  detail::put_chunk(out, "IHDR", ihdr);

  const std::size_t stride = static_cast<std::size_t>(img.width) * 3;
  std::vector<std::uint8_t> raw;
  raw.reserve((stride + 1) * img.height);
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);  // filter: None
    const std::uint8_t* row = img.data.data() + static_cast<std::size_t>(y) * stride;
    raw.insert(raw.end(), row, row + stride);
  }

  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("encode_png: deflate failed");
  comp.resize(comp_len);
  detail::put_chunk(out, "IDAT", comp);
  detail::put_chunk(out, "IEND", {});
  return out;
}

/// Decode a PNG produced by encode_png or any 8-bit RGB/RGBA non-interlaced
/// file (RGBA alpha is dropped). All five scanline filters are handled.
inline Image8 decode_png(const std::uint8_t* bytes, std::size_t size) {
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (size < 8 || std::memcmp(bytes, sig, 8) != 0)
    throw std::runtime_error("decode_png: not a PNG file");

  std::size_t pos = 8;
  int width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> idat;
  while (pos + 8 <= size) {
    const std::uint32_t len = detail::get_be32(bytes + pos);
    if (pos + 12 + len > size) throw std::runtime_error("decode_png: truncated chunk");
    const char* type = reinterpret_cast<const char*>(bytes + pos + 4);
    const std::uint8_t* payload = bytes + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw std::runtime_error("decode_png: bad IHDR");
      width = static_cast<int>(detail::get_be32(payload));
      height = static_cast<int>(detail::get_be32(payload + 4));
      const int bit_depth = payload[8], color_type = payload[9], interlace = payload[12];
      if (bit_depth != 8 || (color_type != 2 && color_type != 6) || interlace != 0)
        throw std::runtime_error("decode_png: unsupported format (need 8-bit RGB/RGBA)");
      channels = color_type == 2 ? 3 : 4;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (width <= 0 || height <= 0 || idat.empty())
    throw std::runtime_error("decode_png: missing IHDR/IDAT");

  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  std::vector<std::uint8_t> raw((stride + 1) * height);
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw.size())
    throw std::runtime_error("decode_png: inflate failed");

  // Undo scanline filters in place.
  const int bpp = channels;
  std::vector<std::uint8_t> prev(stride, 0);
  Image8 img(width, height);
  for (int y = 0; y < height; ++y) {
    const std::uint8_t filter = raw[(stride + 1) * y];
    std::uint8_t* row = raw.data() + (stride + 1) * y + 1;
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= static_cast<std::size_t>(bpp) ? row[i - bpp] : 0;
      const int b = prev[i];
      const int c = i >= static_cast<std::size_t>(bpp) ? prev[i - bpp] : 0;
      int x = row[i];
      switch (filter) {
        case 0: break;
        case 1: x += a; break;
        case 2: x += b; break;
        case 3: x += (a + b) / 2; break;
        case 4: x += detail::paeth(a, b, c); break;
        default: throw std::runtime_error("decode_png: bad filter byte");
      }
      row[i] = static_cast<std::uint8_t>(x);
    }
    std::memcpy(prev.data(), row, stride);
    std::uint8_t* dst = img.at(0, y);
    for (int xpx = 0; xpx < width; ++xpx)
      for (int ch = 0; ch < 3; ++ch) dst[xpx * 3 + ch] = row[xpx * channels + ch];
  }
  return img;
}

inline void write_png(const std::string& path, const Image8& img) {
  const auto bytes = encode_png(img);
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("write_png: cannot open " + path);
  const std::size_t n = std::fwrite(bytes.data(), 1, bytes.size(), f);
  std::fclose(f);
  if (n != bytes.size()) throw std::runtime_error("write_png: short write to " + path);
}

inline Image8 read_png(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("read_png: cannot open " + path);
  std::fseek(f, 0, SEEK_END);
  const long len = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(len > 0 ? len : 0));
  const std::size_t n = std::fread(bytes.data(), 1, bytes.size(), f);
  std::fclose(f);
  if (n != bytes.size()) throw std::runtime_error("read_png: short read from " + path);
  return decode_png(bytes.data(), bytes.size());
}

}  // namespace rvf
