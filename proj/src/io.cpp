#include "xforge/io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace xforge {

namespace {

constexpr uint16_t kMapVersion = 1;

void put_u16(std::vector<uint8_t>& b, uint16_t v) {
  b.push_back(static_cast<uint8_t>(v & 0xff));
  b.push_back(static_cast<uint8_t>(v >> 8));
}
void put_u32(std::vector<uint8_t>& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

struct Reader {
  const std::vector<uint8_t>& b;
  size_t pos = 0;
  void need(size_t n, const char* what) const {
    if (pos + n > b.size())
      throw std::runtime_error(std::string("map file truncated: need ") +
                               std::to_string(n) + " bytes for " + what +
                               " at offset " + std::to_string(pos));
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return b[pos++];
  }
  uint16_t u16(const char* what) {
    need(2, what);
    const uint16_t v = static_cast<uint16_t>(b[pos]) |
                       static_cast<uint16_t>(b[pos + 1]) << 8;
    pos += 2;
    return v;
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(b[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
};

}  // namespace

std::vector<uint8_t> serialize_map(const AttributionMap& map) {
  std::vector<uint8_t> out;
  out.insert(out.end(), {'X', 'M', 'A', 'P'});
  put_u16(out, kMapVersion);
  put_u16(out, static_cast<uint16_t>(map.method.size()));
  out.insert(out.end(), map.method.begin(), map.method.end());
  put_u16(out, static_cast<uint16_t>(map.target_class));
  out.push_back(static_cast<uint8_t>(map.scores.rank()));
  for (int e : map.scores.shape) put_u32(out, static_cast<uint32_t>(e));
  const size_t off = out.size();
  out.resize(off + map.scores.data.size() * 4);
  static_assert(sizeof(float) == 4);
  std::memcpy(out.data() + off, map.scores.data.data(),
              map.scores.data.size() * 4);
  return out;
}

AttributionMap parse_map(const std::vector<uint8_t>& bytes) {
  Reader r{bytes};
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), "XMAP", 4) != 0)
    throw std::runtime_error("map file: bad magic");
  r.pos = 4;
  const uint16_t version = r.u16("version");
  if (version != kMapVersion)
    throw std::runtime_error("map file: unsupported version " +
                             std::to_string(version));
  AttributionMap map;
  const uint16_t tlen = r.u16("tag length");
  r.need(tlen, "tag");
  map.method.assign(reinterpret_cast<const char*>(bytes.data() + r.pos), tlen);
  r.pos += tlen;
  map.target_class = r.u16("class");
  const uint8_t rank = r.u8("rank");
  std::vector<int> shape(rank);
  for (auto& e : shape) e = static_cast<int>(r.u32("extent"));
  const size_t n = static_cast<size_t>(Tensor::count(shape));
  r.need(n * 4, "payload");
  map.scores = Tensor(shape);
  std::memcpy(map.scores.data.data(), bytes.data() + r.pos, n * 4);
  return map;
}

void save_map(const AttributionMap& map, const std::string& path) {
  const auto bytes = serialize_map(map);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("write failed: " + path);
}

AttributionMap load_map(const std::string& path) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::vector<uint8_t> bytes(static_cast<size_t>(is.tellg()));
  is.seekg(0);
  is.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  return parse_map(bytes);
}

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

ConfigReader ConfigReader::from_text(const std::string& text) {
  ConfigReader cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               ": expected key = value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               ": empty key");
    if (cfg.values_.count(key))
      throw std::runtime_error("config: duplicate key '" + key + "'");
    cfg.values_[key] = value;
  }
  return cfg;
}

ConfigReader ConfigReader::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return from_text(ss.str());
}

std::string ConfigReader::get_string(const std::string& key,
                                     const std::string& fallback) {
  consumed_.insert(key);
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

int ConfigReader::get_int(const std::string& key, int fallback) {
  consumed_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    size_t used = 0;
    const int v = std::stoi(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("config key '" + key + "': '" + it->second +
                             "' is not an integer");
  }
}

double ConfigReader::get_double(const std::string& key, double fallback) {
  consumed_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("config key '" + key + "': '" + it->second +
                             "' is not a number");
  }
}

bool ConfigReader::get_bool(const std::string& key, bool fallback) {
  consumed_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw std::runtime_error("config key '" + key + "': '" + it->second +
                           "' is not a boolean");
}

void ConfigReader::reject_unknown() const {
  std::string unknown;
  for (const auto& [key, value] : values_)
    if (!consumed_.count(key)) unknown += (unknown.empty() ? "" : ", ") + key;
  if (!unknown.empty())
    throw std::runtime_error("config: unknown keys: " + unknown);
}

std::vector<char> top_q_feature_mask(const std::vector<double>& aggregates,
                                     double q) {
  if (!(q > 0.0) || q > 1.0)
    throw std::invalid_argument("top fraction must be in (0, 1]");
  const int d = static_cast<int>(aggregates.size());
  const int keep = static_cast<int>(std::ceil(q * d));
  std::vector<int> order(d);
  std::iota(order.begin(), order.end(), 0);
  // descending by aggregate; equal values keep the lower index first
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return aggregates[a] > aggregates[b];
  });
  std::vector<char> mask(d, 0);
  for (int i = 0; i < keep; ++i) mask[order[i]] = 1;
  return mask;
}

namespace {

void blue_red(float v, uint8_t* px) {
  // blue (0) -> red (1) through violet
  const float r = std::clamp(v, 0.0f, 1.0f);
  px[0] = static_cast<uint8_t>(std::lround(255 * r));
  px[1] = static_cast<uint8_t>(std::lround(48 * (1 - std::fabs(2 * r - 1))));
  px[2] = static_cast<uint8_t>(std::lround(255 * (1 - r)));
}

}  // namespace

RenderedImage render_heatmap(const Tensor& map, const PatchPartition& partition,
                             const HeatmapRender& render,
                             const Tensor* input_chw) {
  if (map.rank() != 2)
    throw std::invalid_argument("heatmap expects a (H,W) map");
  for (float v : map.data)
    if (!std::isfinite(v))
      throw std::invalid_argument("heatmap: non-finite map value");
  if (render.scale < 1)
    throw std::invalid_argument("heatmap scale must be >= 1");
  const int H = map.shape[0], W = map.shape[1];

  const auto [lo, hi] = std::minmax_element(map.data.begin(), map.data.end());
  RenderedImage img;
  img.degenerate = (*hi - *lo) <= 0;
  Tensor norm = map;
  if (img.degenerate)
    std::fill(norm.data.begin(), norm.data.end(), 0.5f);  // uniform mid-color
  else
    for (auto& v : norm.data) v = (v - *lo) / (*hi - *lo);

  std::vector<char> keep;
  if (render.top_fraction < 1.0) {
    if (render.pixel_mask) {
      std::vector<double> agg(map.data.begin(), map.data.end());
      keep = top_q_feature_mask(agg, render.top_fraction);
    } else {
      std::vector<double> agg(partition.feature_count(), 0.0);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          agg[partition.feature_of(y, x)] += map.data[y * W + x];
      keep = top_q_feature_mask(agg, render.top_fraction);
    }
  }

  img.width = W * render.scale;
  img.height = H * render.scale;
  img.rgb.resize(static_cast<size_t>(img.width) * img.height * 3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      uint8_t px[3];
      bool masked = false;
      if (!keep.empty()) {
        const int feat =
            render.pixel_mask ? y * W + x : partition.feature_of(y, x);
        masked = !keep[feat];
      }
      if (masked) {
        px[0] = px[1] = px[2] = 0;
      } else {
        blue_red(norm.data[y * W + x], px);
        if (render.overlay && input_chw) {
          // average input channels to gray, then blend 50/50
          const int C = input_chw->shape[0];
          float g = 0;
          for (int c = 0; c < C; ++c)
            g += input_chw->data[(c * H + y) * W + x];
          g = std::clamp(g / C, 0.0f, 1.0f);
          for (int k = 0; k < 3; ++k)
            px[k] = static_cast<uint8_t>((px[k] + 255 * g) / 2);
        }
      }
      for (int sy = 0; sy < render.scale; ++sy)
        for (int sx = 0; sx < render.scale; ++sx) {
          const size_t at =
              (static_cast<size_t>(y * render.scale + sy) * img.width +
               x * render.scale + sx) *
              3;
          img.rgb[at] = px[0];
          img.rgb[at + 1] = px[1];
          img.rgb[at + 2] = px[2];
        }
    }
  return img;
}

namespace {

void put_chunk(std::vector<uint8_t>& out, const char type[4],
               const std::vector<uint8_t>& payload) {
  put_u32(out, 0);  // placeholder, patched below (big-endian length)
  const size_t len_at = out.size() - 4;
  const uint32_t n = static_cast<uint32_t>(payload.size());
  out[len_at] = static_cast<uint8_t>(n >> 24);
  out[len_at + 1] = static_cast<uint8_t>(n >> 16);
  out[len_at + 2] = static_cast<uint8_t>(n >> 8);
  out[len_at + 3] = static_cast<uint8_t>(n);
  const size_t crc_from = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const uint32_t crc = static_cast<uint32_t>(
      crc32(0, out.data() + crc_from, static_cast<uInt>(out.size() - crc_from)));
  out.push_back(static_cast<uint8_t>(crc >> 24));
  out.push_back(static_cast<uint8_t>(crc >> 16));
  out.push_back(static_cast<uint8_t>(crc >> 8));
  out.push_back(static_cast<uint8_t>(crc));
}

}  // namespace

void write_png(const std::string& path, int width, int height,
               const std::vector<uint8_t>& rgb) {
  if (width < 1 || height < 1 ||
      rgb.size() != static_cast<size_t>(width) * height * 3)
    throw std::invalid_argument("png: payload does not match dimensions");
  std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

  std::vector<uint8_t> ihdr;
  for (int v : {width, height})
    for (int i = 3; i >= 0; --i)
      ihdr.push_back(static_cast<uint8_t>(v >> (8 * i)));
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // 8-bit RGB, no interlace
  put_chunk(out, "IHDR", ihdr);

  // filter byte 0 per scanline
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(height) * (1 + width * 3));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), rgb.begin() + static_cast<size_t>(y) * width * 3,
               rgb.begin() + static_cast<size_t>(y + 1) * width * 3);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> idat(bound);
  if (compress2(idat.data(), &bound, raw.data(),
                static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("png: deflate failed");
  idat.resize(bound);
  put_chunk(out, "IDAT", idat);
  put_chunk(out, "IEND", {});

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(reinterpret_cast<const char*>(out.data()),
           static_cast<std::streamsize>(out.size()));
  if (!os) throw std::runtime_error("write failed: " + path);
}

void write_heatmap_png(const Tensor& map, const PatchPartition& partition,
                       const HeatmapRender& render, const std::string& path,
                       const Tensor* input_chw) {
  const auto img = render_heatmap(map, partition, render, input_chw);
  write_png(path, img.width, img.height, img.rgb);
}

}  // namespace xforge
