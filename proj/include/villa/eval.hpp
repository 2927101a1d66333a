#pragma once

#include <optional>
#include <string>
#include <vector>

#include "villa/assignment.hpp"
#include "villa/vlm.hpp"

namespace villa {

struct RetrievalIndex {
  Mat embs;                                              // one row per filled test region
  std::vector<std::vector<AttrId>> gt;                   // sorted attribute ids per row
  std::vector<std::pair<std::size_t, int>> provenance;  // (sample, grid index)

  std::size_t size() const { return gt.size(); }
};

RetrievalIndex build_index(const Dataset& test, const VlmParams& vlm, const EncoderConfig& enc, int threads = 1);

/// One text-tower embedding per attribute, averaged over its templates.
Mat query_embeddings(const AttributeCatalog& catalog, const VlmParams& vlm, const EncoderConfig& enc);

/// Region ids by descending dot product; ties keep the lower id first.
std::vector<std::size_t> rank_regions(const Vec& query, const Mat& region_embs);
std::vector<std::vector<std::size_t>> text_to_region(const Mat& queries, const RetrievalIndex& index,
                                                     int threads = 1);

double precision_at_k(const std::vector<std::size_t>& ranking, const std::vector<std::size_t>& gt, std::size_t k);
double r_precision_t2r(const std::vector<std::size_t>& ranking, const std::vector<std::size_t>& gt);

/// `scores` holds one value per catalog attribute. The best attribute of each
/// category is a candidate; candidates are ranked by score (ties to the lower
/// id) and the top |gt| are checked against gt.
double region_to_text(const Vec& scores, const AttributeCatalog& catalog, const std::vector<AttrId>& gt);

struct PairKey {
  std::size_t sample = 0;
  int region = 0;
  AttrId attr = 0;
  auto operator<=>(const PairKey&) const = default;
};

struct MappingQuality {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

std::vector<PairKey> ground_truth_pairs(const Dataset& dataset);
std::vector<PairKey> keys_of(const std::vector<RegionAttributePair>& pairs);
/// Duplicates on either side count once.
MappingQuality mapping_quality(const std::vector<PairKey>& generated, const std::vector<PairKey>& gt);

/// For every sample and every described attribute, one uniformly random
/// filled region.
std::vector<RegionAttributePair> random_mapping_baseline(const Dataset& dataset, std::uint64_t seed);

struct RetrievalMetrics {
  std::vector<double> t2r_rprec;                 // per attribute, catalog order
  std::vector<std::optional<double>> t2r_p25;    // only for queries with >= 25 relevant regions
  std::vector<std::optional<double>> t2r_p100;
  double r2t_rprec = 0.0;                        // mean over regions

  double t2r_rprec_mean() const;
  std::optional<double> p25_mean() const;
  std::optional<double> p100_mean() const;
};

RetrievalMetrics evaluate_retrieval(const Dataset& test, const VlmParams& vlm, const EncoderConfig& enc,
                                    int threads = 1);

struct MetricsReport {
  std::string config_hash;
  double c = 0.0;
  std::vector<std::pair<std::string, RetrievalMetrics>> variants;
  std::vector<std::pair<std::string, MappingQuality>> mappings;  // "random", "vlm_zs", "villa"

  std::string to_csv() const;
  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
};

/// Rows are `variant,c,task,metric,value`.
std::string metrics_csv_header();

}  // namespace villa
