#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "villa/mapping.hpp"
#include "villa/synth.hpp"

namespace villa {

struct RegionAttributePair {
  std::size_t sample = 0;
  int region = 0;  // grid index
  AttrId attr = 0;
  double score = 0.0;
  std::string sentence;

  bool operator==(const RegionAttributePair&) const = default;
};

enum class AssignMode { AttrToRegions, RegionToArgmaxAttr };

struct AssignConfig {
  double epsilon = 0.2;
  AssignMode mode = AssignMode::AttrToRegions;
};

/// Scores of every region row of `sample` against attribute k.
Vec score_regions(const MappingParams& params, const PrecomputedSample& sample, AttrId k);

/// Rows r with v[r] > max(v) - epsilon. Rows attaining the maximum always
/// qualify, so the result is never empty (this covers epsilon = 0).
std::vector<std::size_t> assign_attribute(const Vec& v, double epsilon);

/// Column argmax per row of a regions x attributes score matrix, mapped to the
/// attribute ids labelling the columns (ties go to the lowest id).
std::vector<AttrId> assign_regions_argmax(const Mat& scores, const std::vector<AttrId>& attr_ids);

std::vector<RegionAttributePair> expand_pairs(const Sample& sample, const PrecomputedSample& pre,
                                              const MappingParams& params, const AssignConfig& cfg,
                                              const AttributeCatalog& catalog);
std::vector<RegionAttributePair> expand_dataset(const Dataset& dataset, const std::vector<PrecomputedSample>& pre,
                                                const MappingParams& params, const AssignConfig& cfg,
                                                int threads = 1);

/// Mapping "model" whose scores are raw encoder similarities (identity
/// adapter), i.e. the zero-shot route.
MappingParams zero_shot_mapping(std::size_t n_attributes, int d, std::uint64_t encoder_hash);

enum class PairSource { None, ZeroShotMapping, TrainedMapping };
const char* to_string(PairSource s);

struct AugmentedItem {
  enum class Origin { Image, Region };
  Origin origin = Origin::Image;
  std::size_t sample = 0;
  int region = -1;  // grid index for region items
  AttrId attr = -1;
  std::vector<std::string> sentences;

  bool operator==(const AugmentedItem&) const = default;
};

struct AugmentedDataset {
  PairSource source = PairSource::None;
  std::vector<AugmentedItem> items;

  bool operator==(const AugmentedDataset&) const = default;
};

/// Image-description items for every sample followed by one region-sentence
/// item per pair.
AugmentedDataset augment_dataset(const Dataset& dataset, const std::vector<RegionAttributePair>& pairs,
                                 PairSource source);

std::string pairs_to_jsonl(const std::vector<RegionAttributePair>& pairs);
std::vector<RegionAttributePair> pairs_from_jsonl(const std::string& text);
std::string augmented_to_jsonl(const AugmentedDataset& data);
AugmentedDataset augmented_from_jsonl(const std::string& text);

}  // namespace villa
