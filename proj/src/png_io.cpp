#include "ctseg/png_io.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ctseg {

namespace {

uint32_t crc32_table_entry(uint32_t n) {
  uint32_t c = n;
  for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
  return c;
}

const std::array<uint32_t, 256>& crc_table() {
  static const std::array<uint32_t, 256> t = [] {
    std::array<uint32_t, 256> a{};
    for (uint32_t n = 0; n < 256; ++n) a[n] = crc32_table_entry(n);
    return a;
  }();
  return t;
}

uint32_t crc32(const uint8_t* data, size_t n, uint32_t crc = 0xffffffffu) {
  const auto& t = crc_table();
  for (size_t i = 0; i < n; ++i) crc = t[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
  return crc;
}

uint32_t adler32(const uint8_t* data, size_t n) {
  uint32_t a = 1, b = 0;
  for (size_t i = 0; i < n; ++i) {
    a = (a + data[i]) % 65521;
    b = (b + a) % 65521;
  }
  return (b << 16) | a;
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back((v >> 24) & 0xff);
  out.push_back((v >> 16) & 0xff);
  out.push_back((v >> 8) & 0xff);
  out.push_back(v & 0xff);
}

void put_chunk(std::vector<uint8_t>& out, const char type[4],
               const std::vector<uint8_t>& data) {
  put_u32(out, (uint32_t)data.size());
  const size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uint32_t crc = crc32(out.data() + start, out.size() - start) ^ 0xffffffffu;
  put_u32(out, crc);
}

constexpr uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};

}  // namespace

void write_png(const std::string& path, const Image8& img) {
  if (img.h <= 0 || img.w <= 0 ||
      img.rgb.size() != (size_t)img.h * img.w * 3)
    throw std::invalid_argument("write_png: bad image dimensions");

  // raw zlib payload: one filter byte (0) per scanline
  std::vector<uint8_t> raw;
  raw.reserve((size_t)img.h * (img.w * 3 + 1));
  for (int y = 0; y < img.h; ++y) {
    raw.push_back(0);
    const uint8_t* row = img.rgb.data() + (size_t)y * img.w * 3;
    raw.insert(raw.end(), row, row + (size_t)img.w * 3);
  }

  std::vector<uint8_t> idat;
  idat.push_back(0x78);  // zlib header, 32k window
  idat.push_back(0x01);  // no preset dict, fastest
  size_t off = 0;
  while (off < raw.size()) {
    const size_t chunk = std::min<size_t>(65535, raw.size() - off);
    const bool final = off + chunk == raw.size();
    idat.push_back(final ? 1 : 0);  // BFINAL + BTYPE=00 (stored)
    idat.push_back(chunk & 0xff);
    idat.push_back((chunk >> 8) & 0xff);
    idat.push_back(~chunk & 0xff);
    idat.push_back((~chunk >> 8) & 0xff);
    idat.insert(idat.end(), raw.begin() + off, raw.begin() + off + chunk);
    off += chunk;
  }
  put_u32(idat, adler32(raw.data(), raw.size()));

  std::vector<uint8_t> ihdr;
  put_u32(ihdr, (uint32_t)img.w);
  put_u32(ihdr, (uint32_t)img.h);
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // truecolor
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter
  ihdr.push_back(0);  // interlace

  std::vector<uint8_t> out(kSignature, kSignature + 8);
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", idat);
  put_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_png: cannot open '" + path + "'");
  f.write(reinterpret_cast<const char*>(out.data()), (std::streamsize)out.size());
  if (!f) throw std::runtime_error("write_png: write failed for '" + path + "'");
}

Image8 read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_png: cannot open '" + path + "'");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0)
    throw std::runtime_error("read_png: not a PNG file: " + path);

  auto u32 = [&](size_t at) {
    return ((uint32_t)bytes[at] << 24) | ((uint32_t)bytes[at + 1] << 16) |
           ((uint32_t)bytes[at + 2] << 8) | (uint32_t)bytes[at + 3];
  };

  Image8 img;
  std::vector<uint8_t> idat;
  size_t pos = 8;
  bool saw_ihdr = false;
  while (pos + 8 <= bytes.size()) {
    const uint32_t len = u32(pos);
    const std::string type(bytes.begin() + pos + 4, bytes.begin() + pos + 8);
    if (pos + 12 + len > bytes.size())
      throw std::runtime_error("read_png: truncated chunk in " + path);
    const uint8_t* data = bytes.data() + pos + 8;
    if (type == "IHDR") {
      img.w = (int)u32(pos + 8);
      img.h = (int)u32(pos + 12);
      if (data[8] != 8 || data[9] != 2)
        throw std::runtime_error("read_png: only 8-bit RGB is supported");
      saw_ihdr = true;
    } else if (type == "IDAT") {
      idat.insert(idat.end(), data, data + len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr || img.w <= 0 || img.h <= 0)
    throw std::runtime_error("read_png: missing IHDR in " + path);

  if (idat.size() < 6) throw std::runtime_error("read_png: empty IDAT");
  if ((idat[0] & 0x0f) != 8)
    throw std::runtime_error("read_png: unsupported zlib method");

  // inflate, stored blocks only
  std::vector<uint8_t> raw;
  size_t p = 2;
  for (;;) {
    if (p >= idat.size()) throw std::runtime_error("read_png: truncated deflate");
    const uint8_t header = idat[p++];
    if ((header & 0x06) != 0)
      throw std::runtime_error("read_png: compressed deflate blocks unsupported");
    if (p + 4 > idat.size()) throw std::runtime_error("read_png: truncated block");
    const size_t len = idat[p] | ((size_t)idat[p + 1] << 8);
    p += 4;
    if (p + len > idat.size()) throw std::runtime_error("read_png: truncated data");
    raw.insert(raw.end(), idat.begin() + p, idat.begin() + p + len);
    p += len;
    if (header & 1) break;
  }
  if (p + 4 > idat.size())
    throw std::runtime_error("read_png: missing zlib checksum");
  const uint32_t adler = ((uint32_t)idat[p] << 24) | ((uint32_t)idat[p + 1] << 16) |
                         ((uint32_t)idat[p + 2] << 8) | (uint32_t)idat[p + 3];
  if (adler != adler32(raw.data(), raw.size()))
    throw std::runtime_error("read_png: checksum mismatch in " + path);

  const size_t stride = (size_t)img.w * 3 + 1;
  if (raw.size() != stride * img.h)
    throw std::runtime_error("read_png: bad payload size in " + path);
  img.rgb.resize((size_t)img.h * img.w * 3);
  for (int y = 0; y < img.h; ++y) {
    if (raw[y * stride] != 0)
      throw std::runtime_error("read_png: only filter 0 is supported");
    std::memcpy(img.rgb.data() + (size_t)y * img.w * 3,
                raw.data() + y * stride + 1, (size_t)img.w * 3);
  }
  return img;
}

}  // namespace ctseg
