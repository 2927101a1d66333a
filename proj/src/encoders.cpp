#include "villa/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <tuple>

namespace villa {

namespace {

constexpr int kContentThreshold = 24;
constexpr int kWhiteMin = 200;
constexpr int kWhiteSpread = 40;

// Group weights balance the feature families after normalization.
constexpr double kMeanWeight = 1.0;
constexpr double kVarWeight = 4.0;
constexpr double kHueWeight = 1.5;
constexpr double kGridWeight = 1.5;
constexpr double kEdgeWeight = 1.0;
constexpr double kFillWeight = 1.0;
constexpr double kWhiteWeight = 2.0;
constexpr double kWhiteFillWeight = 1.0;
constexpr double kBias = 0.5;

Vec normalized(Vec v) {
  const double n = v.norm();
  if (n > 0.0) v /= n;
  return v;
}

// d x kRawFeatureCount block of a seeded random orthogonal matrix.
const Mat& projection(const EncoderConfig& cfg) {
  static std::mutex mu;
  static std::map<std::tuple<int, std::uint64_t, int>, std::unique_ptr<Mat>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[{cfg.d, cfg.token_seed, cfg.feature_version}];
  if (!slot) {
    const int n = std::max(cfg.d, kRawFeatureCount);
    Rng rng(splitmix64(cfg.token_seed ^ 0x70726f6aULL) + static_cast<std::uint64_t>(cfg.feature_version));
    Eigen::MatrixXd g(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) g(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    slot = std::make_unique<Mat>(q.topLeftCorner(cfg.d, kRawFeatureCount));
  }
  return *slot;
}

Vec token_vector(const std::string& token, const EncoderConfig& cfg) {
  Rng rng(splitmix64(fnv1a(token) ^ splitmix64(cfg.token_seed)));
  Vec v(cfg.d);
  for (int i = 0; i < cfg.d; ++i) v[i] = rng.normal();
  return normalized(std::move(v));
}

int hue_bin(int r, int g, int b) {
  const int mx = std::max({r, g, b});
  const int mn = std::min({r, g, b});
  const double delta = mx - mn;
  double h;
  if (mx == r) {
    h = 60.0 * std::fmod((g - b) / delta + 6.0, 6.0);
  } else if (mx == g) {
    h = 60.0 * ((b - r) / delta + 2.0);
  } else {
    h = 60.0 * ((r - g) / delta + 4.0);
  }
  return std::clamp(static_cast<int>(h / 45.0), 0, 7);
}

}  // namespace

void EncoderConfig::validate() const {
  if (d < 8) throw Error(ErrorKind::InvalidArgument, "encoder dimension d must be >= 8");
}

std::string EncoderConfig::describe() const {
  return "d=" + std::to_string(d) + ";token_seed=" + std::to_string(token_seed) +
         ";feature_version=" + std::to_string(feature_version);
}

std::uint64_t EncoderConfig::hash() const { return fnv1a(describe()); }

Vec raw_features(const Image& w) {
  const int total = w.width * w.height;
  if (total == 0) throw Error(ErrorKind::ShapeMismatch, "empty window");
  Vec f = Vec::Zero(kRawFeatureCount);

  std::vector<std::uint8_t> kind(static_cast<std::size_t>(total), 0);  // 0 bg, 1 chromatic, 2 white
  double sum[3] = {0, 0, 0}, sq[3] = {0, 0, 0};
  double hue[8] = {0};
  double hue_mass = 0.0;
  int content = 0, white = 0;
  int cx0 = w.width, cy0 = w.height, cx1 = -1, cy1 = -1;
  int wx0 = w.width, wy0 = w.height, wx1 = -1, wy1 = -1;

  for (int y = 0; y < w.height; ++y) {
    for (int x = 0; x < w.width; ++x) {
      const auto* px = w.pixel(x, y);
      const int r = px[0], g = px[1], b = px[2];
      for (int c = 0; c < 3; ++c) {
        const double v = px[c] / 255.0;
        sum[c] += v;
        sq[c] += v * v;
      }
      const int mx = std::max({r, g, b}), mn = std::min({r, g, b});
      if (mx <= kContentThreshold) continue;
      ++content;
      auto& k = kind[static_cast<std::size_t>(y * w.width + x)];
      if (mn >= kWhiteMin && mx - mn <= kWhiteSpread) {
        k = 2;
        ++white;
        wx0 = std::min(wx0, x), wy0 = std::min(wy0, y), wx1 = std::max(wx1, x), wy1 = std::max(wy1, y);
      } else {
        k = 1;
        const double mass = mx / 255.0;
        hue[hue_bin(r, g, b)] += mass;
        hue_mass += mass;
        cx0 = std::min(cx0, x), cy0 = std::min(cy0, y), cx1 = std::max(cx1, x), cy1 = std::max(cy1, y);
      }
    }
  }

  int i = 0;
  for (int c = 0; c < 3; ++c) f[i++] = kMeanWeight * sum[c] / total;
  for (int c = 0; c < 3; ++c) {
    const double mean = sum[c] / total;
    f[i++] = kVarWeight * std::max(0.0, sq[c] / total - mean * mean);
  }
  for (int bin = 0; bin < 8; ++bin) f[i++] = hue_mass > 0 ? kHueWeight * hue[bin] / hue_mass : 0.0;

  // Intensity grid over the chromatic bounding box, as a mass distribution.
  double grid[9] = {0};
  if (cx1 >= 0) {
    const int bw = cx1 - cx0 + 1, bh = cy1 - cy0 + 1;
    double mass = 0.0;
    for (int y = cy0; y <= cy1; ++y) {
      for (int x = cx0; x <= cx1; ++x) {
        if (kind[static_cast<std::size_t>(y * w.width + x)] != 1) continue;
        const auto* px = w.pixel(x, y);
        const double v = std::max({px[0], px[1], px[2]}) / 255.0;
        grid[((y - cy0) * 3 / bh) * 3 + (x - cx0) * 3 / bw] += v;
        mass += v;
      }
    }
    for (double& g : grid) g /= mass;
  }
  for (double g : grid) f[i++] = kGridWeight * g;

  int edge = 0;
  for (int y = 0; y < w.height; ++y) {
    for (int x = 0; x < w.width; ++x) {
      if (!kind[static_cast<std::size_t>(y * w.width + x)]) continue;
      const auto bg = [&](int xx, int yy) {
        return xx < 0 || yy < 0 || xx >= w.width || yy >= w.height ||
               !kind[static_cast<std::size_t>(yy * w.width + xx)];
      };
      if (bg(x - 1, y) || bg(x + 1, y) || bg(x, y - 1) || bg(x, y + 1)) ++edge;
    }
  }
  f[i++] = content ? kEdgeWeight * edge / content : 0.0;
  f[i++] = kFillWeight * static_cast<double>(content) / total;
  f[i++] = content ? kWhiteWeight * white / content : 0.0;
  f[i++] = white ? kWhiteFillWeight * white / static_cast<double>((wx1 - wx0 + 1) * (wy1 - wy0 + 1)) : 0.0;
  f[i++] = kBias;
  return f;
}

Embedding encode_region(const Image& region, const EncoderConfig& cfg) {
  if (region.width != kCell || region.height != kCell || region.rgb.size() != kCell * kCell * 3) {
    throw Error(ErrorKind::ShapeMismatch, "region must be 3x28x28");
  }
  cfg.validate();
  return {normalized(projection(cfg) * raw_features(region)), true};
}

Embedding encode_image(const Image& image, const EncoderConfig& cfg) {
  if (image.width != kCanvas || image.height != kCanvas || image.rgb.size() != kCanvas * kCanvas * 3) {
    throw Error(ErrorKind::ShapeMismatch, "image must be 3x84x84");
  }
  cfg.validate();
  return {normalized(projection(cfg) * raw_features(image)), true};
}

Embedding encode_sentence(const std::string& sentence, const EncoderConfig& cfg) {
  cfg.validate();
  const auto tokens = tokenize(sentence);
  if (tokens.empty()) throw Error(ErrorKind::EmptyText, "sentence has no tokens");
  Vec acc = Vec::Zero(cfg.d);
  for (const auto& t : tokens) acc += token_vector(t, cfg);
  acc /= static_cast<double>(tokens.size());
  return {normalized(std::move(acc)), true};
}

Embedding encode_attribute(AttrId attr, const AttributeCatalog& catalog, const EncoderConfig& cfg) {
  const auto& a = catalog.at(attr);
  const auto& tmpls = catalog.templates(a.category);
  Vec acc = Vec::Zero(cfg.d);
  for (const auto& t : tmpls) acc += encode_sentence(AttributeCatalog::instantiate(t, a.name), cfg).values;
  acc /= static_cast<double>(tmpls.size());
  return {normalized(std::move(acc)), true};
}

Embedding encode_description(const std::vector<std::string>& sentences, const EncoderConfig& cfg) {
  if (sentences.empty()) throw Error(ErrorKind::EmptyText, "description has no sentences");
  Vec acc = Vec::Zero(cfg.d);
  for (const auto& s : sentences) acc += encode_sentence(s, cfg).values;
  acc /= static_cast<double>(sentences.size());
  return {normalized(std::move(acc)), true};
}

Mat attribute_table(const AttributeCatalog& catalog, const EncoderConfig& cfg) {
  Mat out(static_cast<Eigen::Index>(catalog.size()), cfg.d);
  for (const auto& a : catalog.attributes()) out.row(a.id) = encode_attribute(a.id, catalog, cfg).values.transpose();
  return out;
}

}  // namespace villa
