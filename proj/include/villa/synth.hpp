#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "villa/catalog.hpp"
#include "villa/common.hpp"

namespace villa {

inline constexpr int kCell = 28;
inline constexpr int kGrid = 3;
inline constexpr int kCanvas = kCell * kGrid;
inline constexpr int kRegionCount = kGrid * kGrid;
inline constexpr int kMaxComplexity = kRegionCount * 4;

// Interleaved RGB bytes, row major (the PPM layout).
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t* pixel(int x, int y) { return &rgb[(static_cast<std::size_t>(y) * width + x) * 3]; }
  const std::uint8_t* pixel(int x, int y) const { return &rgb[(static_cast<std::size_t>(y) * width + x) * 3]; }
  bool operator==(const Image&) const = default;
};

struct RegionSpec {
  int index, row, col;
  int x0, y0, x1, y1;  // half-open pixel window
};

// The nine disjoint 28x28 cells of the 84x84 canvas, row-major.
const std::array<RegionSpec, kRegionCount>& region_grid();
Image crop_region(const Image& image, int region);

using Bitmap = std::array<std::uint8_t, kCell * kCell>;
using RegionAttr = std::pair<int, AttrId>;

struct DigitPool {
  std::array<std::vector<Bitmap>, 10> by_digit;

  std::size_t total() const;
};

struct SyntheticGlyphs {};
struct MnistIdx {
  std::filesystem::path images;
  std::filesystem::path labels;
};
using DigitSource = std::variant<SyntheticGlyphs, MnistIdx>;

struct GenConfig {
  double c = 29.4;
  long b = 10000;
  std::uint64_t seed = 7;
  DigitSource digit_source = SyntheticGlyphs{};

  void validate() const;
};

struct Sample {
  Image image;
  std::string text;
  std::vector<std::string> sentences;
  std::vector<RegionAttr> gt_pairs;  // sorted, unique
  int complexity_m = 0;

  // Filled region indices, ascending.
  std::vector<int> regions() const;
  std::vector<AttrId> attributes_of(int region) const;
  bool operator==(const Sample&) const = default;
};

struct Dataset {
  std::vector<Sample> samples;
  AttributeCatalog catalog = AttributeCatalog::docmnist();
  GenConfig gen_config;
  double realized_s = 0.0;

  long total_pairs() const;
};

DigitPool load_mnist_idx(const std::filesystem::path& images_path,
                         const std::filesystem::path& labels_path);
Bitmap render_glyph(int digit);
DigitPool synthetic_pool();
DigitPool load_pool(const DigitSource& source);

/// Fills regions with (digit, color[, shape, size]) until exactly `target_m`
/// region-attribute pairs exist. Throws UnreachableComplexity when the target
/// cannot be hit (odd targets, or targets above 36).
Sample generate_sample(Rng& rng, int target_m, const DigitPool& pool, const AttributeCatalog& catalog);

struct RenderedText {
  std::string text;
  std::vector<std::string> sentences;
};
RenderedText render_text(const std::vector<RegionAttr>& gt_pairs, const AttributeCatalog& catalog, Rng& rng);

/// Per-sample complexity target with expectation c over the feasible (even)
/// values bracketing it.
int draw_target(Rng& rng, double c);

Dataset generate_dataset(const GenConfig& cfg, const AttributeCatalog& catalog,
                         const DigitPool& pool, int threads = 1);
Dataset generate_dataset(const GenConfig& cfg, const AttributeCatalog& catalog, int threads = 1);
/// Fixed-size variant used for held-out test sets.
Dataset generate_fixed(const GenConfig& cfg, std::size_t n_samples, const AttributeCatalog& catalog,
                       const DigitPool& pool, int threads = 1);

double complexity_score(const Dataset& dataset);

// On-disk layout: manifest.jsonl, dataset.json, catalog.json, images/*.ppm.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir, const std::string& config_hash);
Dataset load_dataset(const std::filesystem::path& dir, std::string* config_hash = nullptr);

std::string encode_ppm(const Image& image);
Image decode_ppm(const std::string& bytes);

nlohmann::json to_json(const GenConfig& cfg);
GenConfig gen_config_from_json(const nlohmann::json& j);

}  // namespace villa
