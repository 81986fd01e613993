#include "dtl/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

#include "dtl/error.hpp"

namespace dtl {
namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

void write_file(const std::filesystem::path& path,
                const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  require(out.good(), ErrorCode::io, "short write to " + path.string());
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(
      std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

// ---- PNM ----------------------------------------------------------------

int parse_pnm_int(const std::vector<std::uint8_t>& b, std::size_t& pos) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  int v = 0;
  bool any = false;
  while (pos < b.size() && std::isdigit(b[pos])) {
    v = v * 10 + (b[pos] - '0');
    ++pos;
    any = true;
  }
  require(any, ErrorCode::io, "malformed PNM header");
  return v;
}

Image read_pnm(const std::vector<std::uint8_t>& bytes, int channels,
               const std::string& name) {
  std::size_t pos = 2;
  const int w = parse_pnm_int(bytes, pos);
  const int h = parse_pnm_int(bytes, pos);
  const int maxval = parse_pnm_int(bytes, pos);
  require(w > 0 && h > 0 && maxval > 0 && maxval < 256, ErrorCode::io,
          "unsupported PNM in " + name);
  ++pos;  // single whitespace after maxval
  const std::size_t need = static_cast<std::size_t>(w) * h * channels;
  require(bytes.size() >= pos + need, ErrorCode::io, "truncated PNM " + name);
  Image img = Image::make(w, h, channels);
  for (std::size_t i = 0; i < need; ++i) {
    img.pix[i] = static_cast<float>(bytes[pos + i]) / static_cast<float>(maxval);
  }
  return img;
}

// ---- PNG ----------------------------------------------------------------

const std::array<std::uint8_t, 8> kPngMagic = {0x89, 'P', 'N', 'G',
                                               '\r', '\n', 0x1a, '\n'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::vector<std::uint8_t>& payload) {
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const auto crc =
      crc32(0, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

std::vector<std::uint8_t> zlib_deflate(const std::vector<std::uint8_t>& in) {
  uLongf cap = compressBound(static_cast<uLong>(in.size()));
  std::vector<std::uint8_t> out(cap);
  const int rc = compress2(out.data(), &cap, in.data(),
                           static_cast<uLong>(in.size()), 6);
  require(rc == Z_OK, ErrorCode::io, "zlib deflate failed");
  out.resize(cap);
  return out;
}

std::vector<std::uint8_t> zlib_inflate(const std::uint8_t* data,
                                       std::size_t len,
                                       std::size_t expected) {
  std::vector<std::uint8_t> out(expected);
  uLongf out_len = static_cast<uLongf>(expected);
  const int rc = uncompress(out.data(), &out_len, data, static_cast<uLong>(len));
  require(rc == Z_OK && out_len == expected, ErrorCode::io,
          "zlib inflate failed");
  return out;
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

Image read_png(const std::vector<std::uint8_t>& bytes,
               const std::string& name) {
  require(bytes.size() > 8 + 25, ErrorCode::io, "truncated PNG " + name);
  std::size_t pos = 8;
  int w = 0, h = 0, bit_depth = 0, color_type = 0, interlace = 0;
  std::vector<std::uint8_t> idat;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t len = get_u32(&bytes[pos]);
    require(pos + 12 + len <= bytes.size(), ErrorCode::io,
            "corrupt PNG " + name);
    const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
    const std::uint8_t* payload = &bytes[pos + 8];
    if (std::memcmp(type, "IHDR", 4) == 0) {
      w = static_cast<int>(get_u32(payload));
      h = static_cast<int>(get_u32(payload + 4));
      bit_depth = payload[8];
      color_type = payload[9];
      interlace = payload[12];
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  require(w > 0 && h > 0 && bit_depth == 8 && interlace == 0, ErrorCode::io,
          "unsupported PNG layout in " + name);
  int src_ch = 0;
  switch (color_type) {
    case 0: src_ch = 1; break;
    case 2: src_ch = 3; break;
    case 4: src_ch = 2; break;
    case 6: src_ch = 4; break;
    default:
      raise(ErrorCode::io, "unsupported PNG color type in " + name);
  }
  const std::size_t stride = static_cast<std::size_t>(w) * src_ch;
  auto raw = zlib_inflate(idat.data(), idat.size(), (stride + 1) * h);

  // defilter in place into `img`
  std::vector<std::uint8_t> prev(stride, 0), cur(stride, 0);
  const int out_ch = (src_ch == 1 || src_ch == 2) ? 1 : 3;
  Image img = Image::make(w, h, out_ch);
  for (int y = 0; y < h; ++y) {
    const std::uint8_t filter = raw[(stride + 1) * y];
    const std::uint8_t* line = &raw[(stride + 1) * y + 1];
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= static_cast<std::size_t>(src_ch) ? cur[i - src_ch] : 0;
      const int b = prev[i];
      const int c = i >= static_cast<std::size_t>(src_ch) ? prev[i - src_ch] : 0;
      int v = line[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: raise(ErrorCode::io, "bad PNG filter in " + name);
      }
      cur[i] = static_cast<std::uint8_t>(v);
    }
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < out_ch; ++c) {
        img.at(y, x, c) = static_cast<float>(cur[x * src_ch + c]) / 255.0f;
      }
    }
    std::swap(prev, cur);
  }
  return img;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  require(bytes.size() >= 8, ErrorCode::io, "not an image: " + path.string());
  if (bytes[0] == 'P' && bytes[1] == '5') return read_pnm(bytes, 1, path.string());
  if (bytes[0] == 'P' && bytes[1] == '6') return read_pnm(bytes, 3, path.string());
  if (std::equal(kPngMagic.begin(), kPngMagic.end(), bytes.begin()))
    return read_png(bytes, path.string());
  raise(ErrorCode::io, "unsupported image format: " + path.string());
}

void write_pgm(const std::filesystem::path& path, const Image& img) {
  require(img.channels == 1, ErrorCode::argument, "write_pgm expects 1 channel");
  std::vector<std::uint8_t> out;
  const std::string header =
      "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
      "\n255\n";
  out.insert(out.end(), header.begin(), header.end());
  for (float v : img.pix) out.push_back(to_byte(v));
  write_file(path, out);
}

void write_png(const std::filesystem::path& path, const Image& img) {
  require(img.channels == 1 || img.channels == 3, ErrorCode::argument,
          "write_png expects 1 or 3 channels");
  const std::size_t stride =
      static_cast<std::size_t>(img.width) * img.channels;
  std::vector<std::uint8_t> raw;
  raw.reserve((stride + 1) * img.height);
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);  // filter: none
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) raw.push_back(to_byte(img.at(y, x, c)));
    }
  }
  std::vector<std::uint8_t> out(kPngMagic.begin(), kPngMagic.end());
  std::vector<std::uint8_t> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(img.width));
  put_u32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);                                    // bit depth
  ihdr.push_back(img.channels == 1 ? 0 : 2);            // gray / truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", zlib_deflate(raw));
  append_chunk(out, "IEND", {});
  write_file(path, out);
}

Image resize_bilinear(const Image& img, int out_h, int out_w) {
  require(out_h > 0 && out_w > 0, ErrorCode::argument, "bad resize target");
  if (out_h == img.height && out_w == img.width) return img;
  Image out = Image::make(out_w, out_h, img.channels);
  const float sy = static_cast<float>(img.height) / out_h;
  const float sx = static_cast<float>(img.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const float fy = std::max(0.0f, (y + 0.5f) * sy - 0.5f);
    const int y0 = std::min(static_cast<int>(fy), img.height - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const float wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const float fx = std::max(0.0f, (x + 0.5f) * sx - 0.5f);
      const int x0 = std::min(static_cast<int>(fx), img.width - 1);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const float wx = fx - x0;
      for (int c = 0; c < img.channels; ++c) {
        const float top = img.at(y0, x0, c) * (1 - wx) + img.at(y0, x1, c) * wx;
        const float bot = img.at(y1, x0, c) * (1 - wx) + img.at(y1, x1, c) * wx;
        out.at(y, x, c) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

// ---- numpy --------------------------------------------------------------

namespace {

std::vector<std::uint8_t> npy_bytes(const float* data,
                                    const std::vector<std::size_t>& shape) {
  std::string shape_str = "(";
  std::size_t count = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    shape_str += std::to_string(shape[i]);
    shape_str += (shape.size() == 1 || i + 1 < shape.size()) ? "," : "";
    count *= shape[i];
  }
  shape_str += ")";
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': " +
                       shape_str + ", }";
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');

  std::vector<std::uint8_t> out;
  const char magic[] = "\x93NUMPY";
  out.insert(out.end(), magic, magic + 6);
  out.push_back(1);
  out.push_back(0);
  out.push_back(static_cast<std::uint8_t>(header.size() & 0xff));
  out.push_back(static_cast<std::uint8_t>(header.size() >> 8));
  out.insert(out.end(), header.begin(), header.end());
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(data);
  out.insert(out.end(), bytes, bytes + count * sizeof(float));
  return out;
}

}  // namespace

void write_npy(const std::filesystem::path& path, const float* data,
               const std::vector<std::size_t>& shape) {
  write_file(path, npy_bytes(data, shape));
}

void write_npz(const std::filesystem::path& path,
               const std::vector<NpzEntry>& entries) {
  // Store-only zip: local headers + central directory.
  std::vector<std::uint8_t> out;
  struct Record {
    std::string name;
    std::uint32_t crc, size, offset;
  };
  std::vector<Record> records;
  for (const auto& e : entries) {
    const auto payload = npy_bytes(e.data, e.shape);
    const std::string fname = e.name + ".npy";
    Record rec;
    rec.name = fname;
    rec.crc = static_cast<std::uint32_t>(
        crc32(0, payload.data(), static_cast<uInt>(payload.size())));
    rec.size = static_cast<std::uint32_t>(payload.size());
    rec.offset = static_cast<std::uint32_t>(out.size());
    records.push_back(rec);

    auto le16 = [&](std::uint16_t v) {
      out.push_back(v & 0xff);
      out.push_back(v >> 8);
    };
    auto le32 = [&](std::uint32_t v) {
      for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xff);
    };
    le32(0x04034b50);
    le16(20); le16(0); le16(0); le16(0); le16(0);
    le32(rec.crc); le32(rec.size); le32(rec.size);
    le16(static_cast<std::uint16_t>(fname.size())); le16(0);
    out.insert(out.end(), fname.begin(), fname.end());
    out.insert(out.end(), payload.begin(), payload.end());
  }
  const std::uint32_t cd_start = static_cast<std::uint32_t>(out.size());
  auto le16 = [&](std::uint16_t v) {
    out.push_back(v & 0xff);
    out.push_back(v >> 8);
  };
  auto le32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xff);
  };
  for (const auto& rec : records) {
    le32(0x02014b50);
    le16(20); le16(20); le16(0); le16(0); le16(0); le16(0);
    le32(rec.crc); le32(rec.size); le32(rec.size);
    le16(static_cast<std::uint16_t>(rec.name.size()));
    le16(0); le16(0); le16(0); le16(0);
    le32(0);
    le32(rec.offset);
    out.insert(out.end(), rec.name.begin(), rec.name.end());
  }
  const std::uint32_t cd_size = static_cast<std::uint32_t>(out.size()) - cd_start;
  le32(0x06054b50);
  le16(0); le16(0);
  le16(static_cast<std::uint16_t>(records.size()));
  le16(static_cast<std::uint16_t>(records.size()));
  le32(cd_size);
  le32(cd_start);
  le16(0);
  write_file(path, out);
}

}  // namespace dtl
