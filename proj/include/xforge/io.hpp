#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "xforge/attributions.hpp"

namespace xforge {

// ---- attribution map container ("XMAP") -------------------------------
// magic "XMAP", version u16, tag length u16 + UTF-8 tag, class u16,
// rank u8, extents u32 each, little-endian f32 payload.
std::vector<uint8_t> serialize_map(const AttributionMap& map);
AttributionMap parse_map(const std::vector<uint8_t>& bytes);
void save_map(const AttributionMap& map, const std::string& path);
AttributionMap load_map(const std::string& path);

// ---- flat key=value configuration -------------------------------------
// One `section.key = value` pair per line; '#' starts a comment. Reads are
// tracked so unknown keys can be rejected as hard errors.
class ConfigReader {
 public:
  static ConfigReader from_text(const std::string& text);
  static ConfigReader from_file(const std::string& path);

  std::string get_string(const std::string& key, const std::string& fallback);
  int get_int(const std::string& key, int fallback);
  double get_double(const std::string& key, double fallback);
  bool get_bool(const std::string& key, bool fallback);
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  // throws naming every key that was never consumed by a getter
  void reject_unknown() const;

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

// ---- rendering ---------------------------------------------------------
struct HeatmapRender {
  double top_fraction = 1.0;  // q: keep ceil(q*d) partition features
  int scale = 8;              // integer pixel scale of the PNG
  bool overlay = false;       // blend onto the grayscale input
  bool pixel_mask = false;    // mask raw pixels instead of features
};

struct RenderedImage {
  int width = 0, height = 0;
  std::vector<uint8_t> rgb;  // 3 bytes per pixel, row-major
  bool degenerate = false;   // all-equal input map
};

// Features kept by the top-q mask (ties broken toward the lower index).
std::vector<char> top_q_feature_mask(const std::vector<double>& aggregates,
                                     double q);

RenderedImage render_heatmap(const Tensor& map, const PatchPartition& partition,
                             const HeatmapRender& render,
                             const Tensor* input_chw = nullptr);

// Minimal zlib-backed PNG encoder (8-bit RGB).
void write_png(const std::string& path, int width, int height,
               const std::vector<uint8_t>& rgb);

void write_heatmap_png(const Tensor& map, const PatchPartition& partition,
                       const HeatmapRender& render, const std::string& path,
                       const Tensor* input_chw = nullptr);

}  // namespace xforge
