#include "villa/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <set>

namespace villa {

RetrievalIndex build_index(const Dataset& test, const VlmParams& vlm, const EncoderConfig& enc, int threads) {
  RetrievalIndex index;
  for (std::size_t i = 0; i < test.samples.size(); ++i) {
    for (int r : test.samples[i].regions()) {
      index.provenance.emplace_back(i, r);
      index.gt.push_back(test.samples[i].attributes_of(r));
    }
  }
  if (index.provenance.empty()) throw Error(ErrorKind::EmptyIndex, "test set has no filled regions");
  index.embs.resize(static_cast<Eigen::Index>(index.size()), enc.d);
  parallel_for(index.size(), threads, [&](std::size_t k) {
    const auto& [s, r] = index.provenance[k];
    index.embs.row(static_cast<Eigen::Index>(k)) =
        vlm_embed_region(crop_region(test.samples[s].image, r), vlm, enc).values.transpose();
  });
  return index;
}

Mat query_embeddings(const AttributeCatalog& catalog, const VlmParams& vlm, const EncoderConfig& enc) {
  if (vlm.encoder_hash != enc.hash()) throw Error(ErrorKind::EncoderMismatch, "query encoder differs from VLM");
  return attribute_table(catalog, enc);
}

std::vector<std::size_t> rank_regions(const Vec& query, const Mat& region_embs) {
  if (region_embs.rows() == 0) throw Error(ErrorKind::EmptyIndex, "empty retrieval index");
  const Vec s = region_embs * query;
  std::vector<std::size_t> order(static_cast<std::size_t>(s.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return s[static_cast<Eigen::Index>(a)] > s[static_cast<Eigen::Index>(b)];
  });
  return order;
}

std::vector<std::vector<std::size_t>> text_to_region(const Mat& queries, const RetrievalIndex& index, int threads) {
  if (index.size() == 0) throw Error(ErrorKind::EmptyIndex, "empty retrieval index");
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(queries.rows()));
  parallel_for(out.size(), threads, [&](std::size_t q) {
    out[q] = rank_regions(queries.row(static_cast<Eigen::Index>(q)).transpose(), index.embs);
  });
  return out;
}

double precision_at_k(const std::vector<std::size_t>& ranking, const std::vector<std::size_t>& gt, std::size_t k) {
  if (k == 0 || k > ranking.size()) {
    throw Error(ErrorKind::KTooLarge, "k=" + std::to_string(k) + " with ranking of " + std::to_string(ranking.size()));
  }
  const std::set<std::size_t> relevant(gt.begin(), gt.end());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < k; ++i) hits += relevant.count(ranking[i]);
  return static_cast<double>(hits) / static_cast<double>(k);
}

double r_precision_t2r(const std::vector<std::size_t>& ranking, const std::vector<std::size_t>& gt) {
  const std::set<std::size_t> relevant(gt.begin(), gt.end());
  return precision_at_k(ranking, gt, relevant.size());
}

double region_to_text(const Vec& scores, const AttributeCatalog& catalog, const std::vector<AttrId>& gt) {
  if (gt.size() < 2 || gt.size() > 4) {
    throw Error(ErrorKind::InvalidGroundTruth, "region has " + std::to_string(gt.size()) + " attributes");
  }
  if (static_cast<std::size_t>(scores.size()) != catalog.size()) {
    throw Error(ErrorKind::DimensionMismatch, "one score per attribute");
  }
  std::vector<AttrId> winners;
  for (auto cat : {Category::Digit, Category::DigitColor, Category::Shape, Category::ShapeSize}) {
    AttrId best = -1;
    for (AttrId k : catalog.of_category(cat))
      if (best < 0 || scores[k] > scores[best]) best = k;
    if (best >= 0) winners.push_back(best);
  }
  std::stable_sort(winners.begin(), winners.end(), [&](AttrId a, AttrId b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  });
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gt.size() && i < winners.size(); ++i)
    hits += std::count(gt.begin(), gt.end(), winners[i]) > 0;
  return static_cast<double>(hits) / static_cast<double>(gt.size());
}

std::vector<PairKey> ground_truth_pairs(const Dataset& dataset) {
  std::vector<PairKey> out;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i)
    for (const auto& [r, a] : dataset.samples[i].gt_pairs) out.push_back({i, r, a});
  return out;
}

std::vector<PairKey> keys_of(const std::vector<RegionAttributePair>& pairs) {
  std::vector<PairKey> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({p.sample, p.region, p.attr});
  return out;
}

MappingQuality mapping_quality(const std::vector<PairKey>& generated, const std::vector<PairKey>& gt) {
  const std::set<PairKey> g(generated.begin(), generated.end());
  const std::set<PairKey> t(gt.begin(), gt.end());
  std::size_t correct = 0;
  for (const auto& k : g) correct += t.count(k);
  MappingQuality q;
  q.precision = g.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(g.size());
  q.recall = t.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(t.size());
  q.f1 = q.precision + q.recall > 0.0 ? 2.0 * q.precision * q.recall / (q.precision + q.recall) : 0.0;
  return q;
}

std::vector<RegionAttributePair> random_mapping_baseline(const Dataset& dataset, std::uint64_t seed) {
  std::vector<RegionAttributePair> out;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& s = dataset.samples[i];
    const auto regions = s.regions();
    if (regions.empty()) continue;
    auto rng = Rng::stream(splitmix64(seed ^ 0x72616e64ULL), i);
    for (AttrId k : dataset.catalog.attributes_in(s.sentences)) {
      out.push_back({i, regions[rng.below(regions.size())], k, 0.0, {}});
    }
  }
  return out;
}

namespace {

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::optional<double> mean_present(const std::vector<std::optional<double>>& v) {
  std::vector<double> xs;
  for (const auto& x : v)
    if (x) xs.push_back(*x);
  if (xs.empty()) return std::nullopt;
  return mean(xs);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> opt_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

double RetrievalMetrics::t2r_rprec_mean() const { return mean(t2r_rprec); }
std::optional<double> RetrievalMetrics::p25_mean() const { return mean_present(t2r_p25); }
std::optional<double> RetrievalMetrics::p100_mean() const { return mean_present(t2r_p100); }

RetrievalMetrics evaluate_retrieval(const Dataset& test, const VlmParams& vlm, const EncoderConfig& enc, int threads) {
  const auto index = build_index(test, vlm, enc, threads);
  const Mat queries = query_embeddings(test.catalog, vlm, enc);
  const auto rankings = text_to_region(queries, index, threads);

  RetrievalMetrics m;
  for (std::size_t k = 0; k < rankings.size(); ++k) {
    std::vector<std::size_t> gt;
    for (std::size_t r = 0; r < index.size(); ++r)
      if (std::binary_search(index.gt[r].begin(), index.gt[r].end(), static_cast<AttrId>(k))) gt.push_back(r);
    if (gt.empty()) continue;
    m.t2r_rprec.push_back(r_precision_t2r(rankings[k], gt));
    m.t2r_p25.push_back(gt.size() >= 25 ? std::optional(precision_at_k(rankings[k], gt, 25)) : std::nullopt);
    m.t2r_p100.push_back(gt.size() >= 100 && rankings[k].size() >= 100
                             ? std::optional(precision_at_k(rankings[k], gt, 100))
                             : std::nullopt);
  }

  std::vector<double> r2t(index.size());
  const Mat scores = index.embs * queries.transpose();
  parallel_for(index.size(), threads, [&](std::size_t r) {
    r2t[r] = region_to_text(scores.row(static_cast<Eigen::Index>(r)).transpose(), test.catalog, index.gt[r]);
  });
  m.r2t_rprec = mean(r2t);
  return m;
}

std::string metrics_csv_header() { return "variant,c,task,metric,value\n"; }

std::string MetricsReport::to_csv() const {
  std::string out = metrics_csv_header();
  const std::string cs = fmt(c);
  const auto row = [&](const std::string& v, const char* task, const char* metric, double value) {
    out += v + "," + cs + "," + task + "," + metric + "," + fmt(value) + "\n";
  };
  for (const auto& [name, m] : variants) {
    row(name, "text_to_region", "r_precision", m.t2r_rprec_mean());
    if (auto p = m.p25_mean()) row(name, "text_to_region", "p_at_25", *p);
    if (auto p = m.p100_mean()) row(name, "text_to_region", "p_at_100", *p);
    row(name, "region_to_text", "r_precision", m.r2t_rprec);
  }
  for (const auto& [name, q] : mappings) {
    row(name, "mapping", "precision", q.precision);
    row(name, "mapping", "recall", q.recall);
    row(name, "mapping", "f1", q.f1);
  }
  return out;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j{{"config_hash", config_hash}, {"c", c}};
  j["variants"] = nlohmann::json::array();
  for (const auto& [name, m] : variants) {
    nlohmann::json p25 = nlohmann::json::array(), p100 = nlohmann::json::array();
    for (const auto& x : m.t2r_p25) p25.push_back(opt_json(x));
    for (const auto& x : m.t2r_p100) p100.push_back(opt_json(x));
    j["variants"].push_back(
        {{"name", name}, {"t2r_rprec", m.t2r_rprec}, {"t2r_p25", p25}, {"t2r_p100", p100}, {"r2t_rprec", m.r2t_rprec}});
  }
  j["mappings"] = nlohmann::json::array();
  for (const auto& [name, q] : mappings)
    j["mappings"].push_back({{"name", name}, {"precision", q.precision}, {"recall", q.recall}, {"f1", q.f1}});
  return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.config_hash = j.at("config_hash").get<std::string>();
  r.c = j.at("c").get<double>();
  for (const auto& v : j.at("variants")) {
    RetrievalMetrics m;
    m.t2r_rprec = v.at("t2r_rprec").get<std::vector<double>>();
    for (const auto& x : v.at("t2r_p25")) m.t2r_p25.push_back(opt_from(x));
    for (const auto& x : v.at("t2r_p100")) m.t2r_p100.push_back(opt_from(x));
    m.r2t_rprec = v.at("r2t_rprec").get<double>();
    r.variants.emplace_back(v.at("name").get<std::string>(), std::move(m));
  }
  for (const auto& q : j.at("mappings")) {
    r.mappings.emplace_back(q.at("name").get<std::string>(),
                            MappingQuality{q.at("precision").get<double>(), q.at("recall").get<double>(),
                                           q.at("f1").get<double>()});
  }
  return r;
}

}  // namespace villa
