#include "villa/assignment.hpp"

#include <algorithm>
#include <sstream>

namespace villa {

Vec score_regions(const MappingParams& params, const PrecomputedSample& sample, AttrId k) {
  const Vec h = sample.attr_embedding(k);
  return forward_head(params, k, sample.region_embs) * h;
}

std::vector<std::size_t> assign_attribute(const Vec& v, double epsilon) {
  if (v.size() == 0) throw Error(ErrorKind::EmptyScores, "no region scores");
  const double top = v.maxCoeff();
  std::vector<std::size_t> out;
  for (Eigen::Index r = 0; r < v.size(); ++r) {
    if (v[r] > top - epsilon || v[r] == top) out.push_back(static_cast<std::size_t>(r));
  }
  return out;
}

std::vector<AttrId> assign_regions_argmax(const Mat& scores, const std::vector<AttrId>& attr_ids) {
  if (scores.cols() == 0 || static_cast<std::size_t>(scores.cols()) != attr_ids.size()) {
    throw Error(ErrorKind::DimensionMismatch, "score columns must match attribute ids");
  }
  // Visit columns in ascending id so ties resolve to the lowest id.
  std::vector<Eigen::Index> cols(attr_ids.size());
  for (std::size_t c = 0; c < cols.size(); ++c) cols[c] = static_cast<Eigen::Index>(c);
  std::stable_sort(cols.begin(), cols.end(), [&](auto a, auto b) { return attr_ids[static_cast<std::size_t>(a)] < attr_ids[static_cast<std::size_t>(b)]; });
  std::vector<AttrId> out;
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    Eigen::Index best = cols[0];
    for (auto c : cols)
      if (scores(r, c) > scores(r, best)) best = c;
    out.push_back(attr_ids[static_cast<std::size_t>(best)]);
  }
  return out;
}

namespace {

std::string sentence_for(const Sample& sample, AttrId k, const AttributeCatalog& catalog) {
  for (const auto& s : sample.sentences)
    if (catalog.mentions(s, k)) return s;
  const auto& a = catalog.at(k);
  return AttributeCatalog::instantiate(catalog.templates(a.category).front(), a.name);
}

}  // namespace

std::vector<RegionAttributePair> expand_pairs(const Sample& sample, const PrecomputedSample& pre,
                                              const MappingParams& params, const AssignConfig& cfg,
                                              const AttributeCatalog& catalog) {
  std::vector<RegionAttributePair> out;
  if (cfg.mode == AssignMode::AttrToRegions) {
    for (AttrId k : pre.attr_ids) {
      const Vec v = score_regions(params, pre, k);
      const auto sentence = sentence_for(sample, k, catalog);
      for (auto row : assign_attribute(v, cfg.epsilon)) {
        out.push_back({pre.sample_id, pre.regions[row], k, v[static_cast<Eigen::Index>(row)], sentence});
      }
    }
  } else {
    Mat scores(pre.region_embs.rows(), static_cast<Eigen::Index>(pre.attr_ids.size()));
    for (std::size_t c = 0; c < pre.attr_ids.size(); ++c) scores.col(static_cast<Eigen::Index>(c)) = score_regions(params, pre, pre.attr_ids[c]);
    const auto best = assign_regions_argmax(scores, pre.attr_ids);
    for (std::size_t row = 0; row < best.size(); ++row) {
      const auto col = static_cast<Eigen::Index>(std::find(pre.attr_ids.begin(), pre.attr_ids.end(), best[row]) - pre.attr_ids.begin());
      out.push_back({pre.sample_id, pre.regions[row], best[row], scores(static_cast<Eigen::Index>(row), col),
                     sentence_for(sample, best[row], catalog)});
    }
  }
  return out;
}

std::vector<RegionAttributePair> expand_dataset(const Dataset& dataset, const std::vector<PrecomputedSample>& pre,
                                                const MappingParams& params, const AssignConfig& cfg, int threads) {
  if (pre.size() != dataset.samples.size()) throw Error(ErrorKind::DanglingReference, "precomputed table size");
  std::vector<std::vector<RegionAttributePair>> per(pre.size());
  parallel_for(pre.size(), threads, [&](std::size_t i) {
    per[i] = expand_pairs(dataset.samples[i], pre[i], params, cfg, dataset.catalog);
  });
  std::vector<RegionAttributePair> out;
  for (auto& v : per) out.insert(out.end(), std::make_move_iterator(v.begin()), std::make_move_iterator(v.end()));
  return out;
}

MappingParams zero_shot_mapping(std::size_t n_attributes, int d, std::uint64_t encoder_hash) {
  MappingParams params;
  params.heads.push_back({Mat::Zero(d, d), Mat::Zero(d, d), Vec::Zero(d), Vec::Zero(d)});
  params.head_of_attr.assign(n_attributes, 0);
  params.adapter_alpha = 1.0;
  params.tau = 1.0;
  params.normalize = true;
  params.d = d;
  params.encoder_hash = encoder_hash;
  return params;
}

const char* to_string(PairSource s) {
  switch (s) {
    case PairSource::None: return "none";
    case PairSource::ZeroShotMapping: return "zero_shot";
    case PairSource::TrainedMapping: return "trained";
  }
  return "?";
}

AugmentedDataset augment_dataset(const Dataset& dataset, const std::vector<RegionAttributePair>& pairs,
                                 PairSource source) {
  AugmentedDataset out;
  out.source = source;
  out.items.reserve(dataset.samples.size() + pairs.size());
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    out.items.push_back({AugmentedItem::Origin::Image, i, -1, -1, dataset.samples[i].sentences});
  }
  for (const auto& p : pairs) {
    if (p.sample >= dataset.samples.size() || p.region < 0 || p.region >= kRegionCount) {
      throw Error(ErrorKind::DanglingReference,
                  "pair references sample " + std::to_string(p.sample) + " region " + std::to_string(p.region));
    }
    out.items.push_back({AugmentedItem::Origin::Region, p.sample, p.region, p.attr, {p.sentence}});
  }
  return out;
}

std::string pairs_to_jsonl(const std::vector<RegionAttributePair>& pairs) {
  std::string out;
  for (const auto& p : pairs) {
    out += nlohmann::json{{"sample", p.sample}, {"region", p.region}, {"attr", p.attr}, {"score", p.score},
                          {"sentence", p.sentence}}
               .dump() +
           "\n";
  }
  return out;
}

std::vector<RegionAttributePair> pairs_from_jsonl(const std::string& text) {
  std::vector<RegionAttributePair> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    out.push_back({j.at("sample").get<std::size_t>(), j.at("region").get<int>(), j.at("attr").get<AttrId>(),
                   j.at("score").get<double>(), j.at("sentence").get<std::string>()});
  }
  return out;
}

std::string augmented_to_jsonl(const AugmentedDataset& data) {
  std::string out = nlohmann::json{{"source", to_string(data.source)}}.dump() + "\n";
  for (const auto& it : data.items) {
    out += nlohmann::json{{"origin", it.origin == AugmentedItem::Origin::Image ? "image" : "region"},
                          {"sample", it.sample},
                          {"region", it.region},
                          {"attr", it.attr},
                          {"sentences", it.sentences}}
               .dump() +
           "\n";
  }
  return out;
}

AugmentedDataset augmented_from_jsonl(const std::string& text) {
  AugmentedDataset out;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    if (header) {
      const auto src = j.at("source").get<std::string>();
      out.source = src == "zero_shot" ? PairSource::ZeroShotMapping
                   : src == "trained" ? PairSource::TrainedMapping
                                      : PairSource::None;
      header = false;
      continue;
    }
    out.items.push_back({j.at("origin") == "image" ? AugmentedItem::Origin::Image : AugmentedItem::Origin::Region,
                         j.at("sample").get<std::size_t>(), j.at("region").get<int>(), j.at("attr").get<AttrId>(),
                         j.at("sentences").get<std::vector<std::string>>()});
  }
  return out;
}

}  // namespace villa
