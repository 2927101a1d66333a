#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "villa/catalog.hpp"
#include "villa/common.hpp"
#include "villa/synth.hpp"

namespace villa {

struct Embedding {
  Vec values;
  bool normalized = false;

  double dot(const Embedding& other) const { return values.dot(other.values); }
};

struct EncoderConfig {
  int d = 64;
  std::uint64_t token_seed = 0x5eed0001ULL;
  int feature_version = 1;

  void validate() const;
  std::uint64_t hash() const;
  std::string describe() const;
};

/// Number of raw region/image features before projection to d.
inline constexpr int kRawFeatureCount = 28;

/// Raw, unprojected feature vector of an RGB window of any size:
/// channel means and variances, an 8-bin hue histogram over chromatic pixels,
/// a 3x3 intensity grid over the chromatic bounding box, edge density,
/// fill ratio, achromatic (white) fraction, white bounding-box fill and a
/// constant bias term.
Vec raw_features(const Image& window);

Embedding encode_region(const Image& region, const EncoderConfig& cfg);
Embedding encode_image(const Image& image, const EncoderConfig& cfg);

Embedding encode_sentence(const std::string& sentence, const EncoderConfig& cfg);
Embedding encode_attribute(AttrId attr, const AttributeCatalog& catalog, const EncoderConfig& cfg);
Embedding encode_description(const std::vector<std::string>& sentences, const EncoderConfig& cfg);

/// Rows are encode_attribute for every catalog attribute, by id.
Mat attribute_table(const AttributeCatalog& catalog, const EncoderConfig& cfg);

}  // namespace villa
