#include "segens/raster.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace segens {

namespace {

void check_dims(int h, int w, int k) {
  if (h < 1 || w < 1 || k < 1)
    throw std::runtime_error("raster: dimensions must be positive");
}

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

void ProbMap::validate() const {
  check_dims(height, width, channels);
  if (static_cast<std::int64_t>(data.size()) != size())
    throw std::runtime_error("ProbMap: data length mismatch");
  for (double v : data) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0)
      throw std::runtime_error("ProbMap: entry outside [0,1]");
  }
  if (channels >= 2) {
    for (std::int64_t m = 0; m < pixels(); ++m) {
      double s = 0.0;
      for (int c = 0; c < channels; ++c) s += data[m * channels + c];
      if (std::abs(s - 1.0) > 1e-6)
        throw std::runtime_error("ProbMap: per-pixel channel sum not 1");
    }
  }
}

void LabelMask::validate() const {
  check_dims(height, width, channels);
  if (static_cast<std::int64_t>(data.size()) != pixels())
    throw std::runtime_error("LabelMask: data length mismatch");
  for (int v : data) {
    if (v < 0 || v >= channels)
      throw std::runtime_error("LabelMask: label out of range");
  }
}

ProbMap one_hot(const LabelMask& mask) {
  mask.validate();
  ProbMap out(mask.height, mask.width, mask.channels, 0.0);
  for (std::int64_t m = 0; m < mask.pixels(); ++m)
    out.data[m * mask.channels + mask.data[m]] = 1.0;
  return out;
}

std::vector<std::uint8_t> write_raster(const ProbMap& map) {
  check_dims(map.height, map.width, map.channels);
  if (static_cast<std::int64_t>(map.data.size()) != map.size())
    throw std::runtime_error("SEGF: data length mismatch");
  for (double v : map.data)
    if (!std::isfinite(v)) throw std::runtime_error("SEGF: non-finite value");
  std::vector<std::uint8_t> out;
  out.reserve(20 + map.data.size() * 4);
  out.insert(out.end(), {'S', 'E', 'G', 'F'});
  append_u32(out, 1);
  append_u32(out, static_cast<std::uint32_t>(map.height));
  append_u32(out, static_cast<std::uint32_t>(map.width));
  append_u32(out, static_cast<std::uint32_t>(map.channels));
  for (double v : map.data) {
    float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    append_u32(out, bits);
  }
  return out;
}

ProbMap read_raster(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 20) throw std::runtime_error("SEGF: truncated header");
  if (std::memcmp(bytes.data(), "SEGF", 4) != 0)
    throw std::runtime_error("SEGF: bad magic");
  const std::uint32_t version = read_u32(bytes.data() + 4);
  if (version != 1)
    throw std::runtime_error("SEGF: unsupported version " +
                             std::to_string(version));
  const std::uint32_t h = read_u32(bytes.data() + 8);
  const std::uint32_t w = read_u32(bytes.data() + 12);
  const std::uint32_t k = read_u32(bytes.data() + 16);
  if (h < 1 || w < 1 || k < 1) throw std::runtime_error("SEGF: bad dimensions");
  const std::uint64_t n = static_cast<std::uint64_t>(h) * w * k;
  if (bytes.size() != 20 + n * 4)
    throw std::runtime_error("SEGF: truncated payload");
  ProbMap map(static_cast<int>(h), static_cast<int>(w), static_cast<int>(k));
  for (std::uint64_t i = 0; i < n; ++i) {
    std::uint32_t bits = read_u32(bytes.data() + 20 + i * 4);
    float f;
    std::memcpy(&f, &bits, 4);
    if (!std::isfinite(f)) throw std::runtime_error("SEGF: non-finite value");
    map.data[i] = static_cast<double>(f);
  }
  return map;
}

void save_raster(const std::filesystem::path& path, const ProbMap& map) {
  auto bytes = write_raster(map);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f),
                                   std::istreambuf_iterator<char>());
}

}  // namespace

ProbMap load_raster(const std::filesystem::path& path) {
  return read_raster(read_file(path));
}

std::vector<std::uint8_t> write_mask_pgm(const LabelMask& mask) {
  mask.validate();
  if (mask.channels > 256)
    throw std::runtime_error("PGM: more than 256 classes");
  std::string header = "P5\n" + std::to_string(mask.width) + " " +
                       std::to_string(mask.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + mask.data.size());
  for (int v : mask.data) {
    // binary masks use the full range so thresholding round trips
    const int pixel = (mask.channels == 2) ? (v ? 255 : 0) : v;
    out.push_back(static_cast<std::uint8_t>(pixel));
  }
  return out;
}

namespace {

// PGM token reader skipping whitespace and # comments.
struct PgmScanner {
  const std::vector<std::uint8_t>& b;
  std::size_t pos = 0;

  void skip_space() {
    while (pos < b.size()) {
      if (std::isspace(b[pos])) {
        ++pos;
      } else if (b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  }

  int next_int() {
    skip_space();
    if (pos >= b.size() || !std::isdigit(b[pos]))
      throw std::runtime_error("PGM: malformed header");
    long v = 0;
    while (pos < b.size() && std::isdigit(b[pos])) {
      v = v * 10 + (b[pos] - '0');
      if (v > 1000000) throw std::runtime_error("PGM: header value too large");
      ++pos;
    }
    return static_cast<int>(v);
  }
};

}  // namespace

LabelMask read_mask_pgm(const std::vector<std::uint8_t>& bytes, int k) {
  if (k < 2) throw std::runtime_error("PGM: class count must be >= 2");
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
    throw std::runtime_error("PGM: not a binary P5 file");
  PgmScanner sc{bytes, 2};
  const int w = sc.next_int();
  const int h = sc.next_int();
  const int maxval = sc.next_int();
  if (w < 1 || h < 1) throw std::runtime_error("PGM: bad dimensions");
  if (maxval != 255) throw std::runtime_error("PGM: maxval must be 255");
  sc.pos += 1;  // single whitespace after maxval
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (bytes.size() < sc.pos + n)
    throw std::runtime_error("PGM: truncated pixel data");
  LabelMask mask(h, w, k);
  for (std::size_t i = 0; i < n; ++i) {
    const int v = bytes[sc.pos + i];
    if (k == 2) {
      mask.data[i] = v >= 128 ? 1 : 0;
    } else {
      if (v >= k)
        throw std::runtime_error("PGM: label " + std::to_string(v) +
                                 " out of range for " + std::to_string(k) +
                                 " classes");
      mask.data[i] = v;
    }
  }
  return mask;
}

void save_mask_pgm(const std::filesystem::path& path, const LabelMask& mask) {
  auto bytes = write_mask_pgm(mask);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

LabelMask load_mask_pgm(const std::filesystem::path& path, int k) {
  return read_mask_pgm(read_file(path), k);
}

namespace {

// floor((i + 0.5) * src / dst) in integer arithmetic
inline int nearest_index(int i, int src, int dst) {
  return static_cast<int>(
      (static_cast<std::int64_t>(2 * i + 1) * src) / (2 * dst));
}

}  // namespace

ProbMap resize_nearest(const ProbMap& map, int new_h, int new_w) {
  if (new_h < 1 || new_w < 1)
    throw std::runtime_error("resize: target dimension must be >= 1");
  if (new_h == map.height && new_w == map.width) return map;
  ProbMap out(new_h, new_w, map.channels);
  for (int y = 0; y < new_h; ++y) {
    const int sy = nearest_index(y, map.height, new_h);
    for (int x = 0; x < new_w; ++x) {
      const int sx = nearest_index(x, map.width, new_w);
      for (int c = 0; c < map.channels; ++c)
        out.at(y, x, c) = map.at(sy, sx, c);
    }
  }
  return out;
}

LabelMask resize_nearest(const LabelMask& mask, int new_h, int new_w) {
  if (new_h < 1 || new_w < 1)
    throw std::runtime_error("resize: target dimension must be >= 1");
  if (new_h == mask.height && new_w == mask.width) return mask;
  LabelMask out(new_h, new_w, mask.channels);
  for (int y = 0; y < new_h; ++y) {
    const int sy = nearest_index(y, mask.height, new_h);
    for (int x = 0; x < new_w; ++x)
      out.at(y, x) = mask.at(sy, nearest_index(x, mask.width, new_w));
  }
  return out;
}

ProbMap augment(const ProbMap& map, AugmentOp op) {
  const int h = map.height, w = map.width, k = map.channels;
  ProbMap out = (op == AugmentOp::rot90) ? ProbMap(w, h, k) : ProbMap(h, w, k);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < k; ++c) {
        switch (op) {
          case AugmentOp::flip_h: out.at(y, w - 1 - x, c) = map.at(y, x, c); break;
          case AugmentOp::flip_v: out.at(h - 1 - y, x, c) = map.at(y, x, c); break;
          case AugmentOp::rot90: out.at(x, h - 1 - y, c) = map.at(y, x, c); break;
        }
      }
    }
  }
  return out;
}

LabelMask augment(const LabelMask& mask, AugmentOp op) {
  const int h = mask.height, w = mask.width;
  LabelMask out = (op == AugmentOp::rot90) ? LabelMask(w, h, mask.channels)
                                           : LabelMask(h, w, mask.channels);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      switch (op) {
        case AugmentOp::flip_h: out.at(y, w - 1 - x) = mask.at(y, x); break;
        case AugmentOp::flip_v: out.at(h - 1 - y, x) = mask.at(y, x); break;
        case AugmentOp::rot90: out.at(x, h - 1 - y) = mask.at(y, x); break;
      }
    }
  }
  return out;
}

}  // namespace segens
