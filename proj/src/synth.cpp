#include "villa/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace villa {

namespace {

constexpr int kCircleRadius[] = {1, 3, 5};
constexpr int kRectSide[] = {1, 4, 7};
constexpr int kRetryLimit = 100;

std::uint32_t read_be32(const std::string& bytes, std::size_t offset) {
  return (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset])) << 24) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + 1])) << 16) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + 2])) << 8) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + 3]));
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void paste_digit(Image& img, const RegionSpec& reg, const Bitmap& glyph, Rgb color) {
  for (int y = 0; y < kCell; ++y) {
    for (int x = 0; x < kCell; ++x) {
      const unsigned v = glyph[static_cast<std::size_t>(y * kCell + x)];
      auto* px = img.pixel(reg.x0 + x, reg.y0 + y);
      px[0] = static_cast<std::uint8_t>((v * color.r + 127) / 255);
      px[1] = static_cast<std::uint8_t>((v * color.g + 127) / 255);
      px[2] = static_cast<std::uint8_t>((v * color.b + 127) / 255);
    }
  }
}

void draw_white(Image& img, int x, int y) {
  auto* px = img.pixel(x, y);
  px[0] = px[1] = px[2] = 255;
}

// shape 0 = rectangle, 1 = circle; the shape lies fully inside the region.
void draw_shape(Image& img, const RegionSpec& reg, int shape, int size, Rng& rng) {
  if (shape == 0) {
    const int side = kRectSide[size];
    const int ox = static_cast<int>(rng.below(static_cast<std::uint64_t>(kCell - side + 1)));
    const int oy = static_cast<int>(rng.below(static_cast<std::uint64_t>(kCell - side + 1)));
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) draw_white(img, reg.x0 + ox + x, reg.y0 + oy + y);
  } else {
    const int r = kCircleRadius[size];
    const int span = kCell - 2 * r;
    const int cx = r + static_cast<int>(rng.below(static_cast<std::uint64_t>(span)));
    const int cy = r + static_cast<int>(rng.below(static_cast<std::uint64_t>(span)));
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx)
        if (dx * dx + dy * dy <= r * r) draw_white(img, reg.x0 + cx + dx, reg.y0 + cy + dy);
  }
}

bool feasible_remainder(int rem_after, int regions_left) {
  if (rem_after == 0) return true;
  return rem_after >= 2 && rem_after % 2 == 0 && rem_after <= 4 * regions_left;
}

}  // namespace

const std::array<RegionSpec, kRegionCount>& region_grid() {
  static const auto grid = [] {
    std::array<RegionSpec, kRegionCount> g{};
    for (int i = 0; i < kRegionCount; ++i) {
      const int row = i / kGrid, col = i % kGrid;
      g[static_cast<std::size_t>(i)] = {i, row, col, col * kCell, row * kCell, (col + 1) * kCell, (row + 1) * kCell};
    }
    return g;
  }();
  return grid;
}

Image crop_region(const Image& image, int region) {
  if (image.width != kCanvas || image.height != kCanvas) {
    throw Error(ErrorKind::ShapeMismatch, "expected an 84x84 canvas");
  }
  if (region < 0 || region >= kRegionCount) {
    throw Error(ErrorKind::InvalidArgument, "region index " + std::to_string(region));
  }
  const auto& reg = region_grid()[static_cast<std::size_t>(region)];
  Image out(kCell, kCell);
  for (int y = 0; y < kCell; ++y) {
    const auto* src = image.pixel(reg.x0, reg.y0 + y);
    std::copy(src, src + kCell * 3, out.pixel(0, y));
  }
  return out;
}

std::size_t DigitPool::total() const {
  std::size_t n = 0;
  for (const auto& v : by_digit) n += v.size();
  return n;
}

void GenConfig::validate() const {
  if (!(c >= 2.0 && c <= kMaxComplexity)) {
    throw Error(ErrorKind::InvalidArgument, "c must lie in [2, 36]");
  }
  if (static_cast<double>(b) < c) throw Error(ErrorKind::InvalidArgument, "budget b must be >= c");
}

std::vector<int> Sample::regions() const {
  std::vector<int> out;
  for (const auto& [r, a] : gt_pairs) {
    if (out.empty() || out.back() != r) out.push_back(r);
  }
  return out;
}

std::vector<AttrId> Sample::attributes_of(int region) const {
  std::vector<AttrId> out;
  for (const auto& [r, a] : gt_pairs)
    if (r == region) out.push_back(a);
  return out;
}

long Dataset::total_pairs() const {
  long n = 0;
  for (const auto& s : samples) n += s.complexity_m;
  return n;
}

DigitPool load_mnist_idx(const std::filesystem::path& images_path,
                         const std::filesystem::path& labels_path) {
  const std::string images = slurp(images_path);
  const std::string labels = slurp(labels_path);
  if (images.size() < 16) throw Error(ErrorKind::TruncatedFile, images_path.string() + ": header too short");
  if (labels.size() < 8) throw Error(ErrorKind::TruncatedFile, labels_path.string() + ": header too short");
  if (read_be32(images, 0) != 0x00000803) {
    throw Error(ErrorKind::BadMagic, images_path.string() + ": expected image magic 0x00000803");
  }
  if (read_be32(labels, 0) != 0x00000801) {
    throw Error(ErrorKind::BadMagic, labels_path.string() + ": expected label magic 0x00000801");
  }
  const std::uint32_t n_images = read_be32(images, 4);
  const std::uint32_t rows = read_be32(images, 8);
  const std::uint32_t cols = read_be32(images, 12);
  const std::uint32_t n_labels = read_be32(labels, 4);
  if (n_images != n_labels) {
    throw Error(ErrorKind::CountMismatch, images_path.string() + " has " + std::to_string(n_images) +
                                             " images but " + labels_path.string() + " has " +
                                             std::to_string(n_labels) + " labels");
  }
  if (rows != kCell || cols != kCell) {
    throw Error(ErrorKind::ShapeMismatch, images_path.string() + ": expected 28x28 images");
  }
  const std::size_t px = static_cast<std::size_t>(rows) * cols;
  if (images.size() < 16 + px * n_images) {
    throw Error(ErrorKind::TruncatedFile, images_path.string() + ": pixel data shorter than header count");
  }
  if (labels.size() < 8 + static_cast<std::size_t>(n_labels)) {
    throw Error(ErrorKind::TruncatedFile, labels_path.string() + ": label data shorter than header count");
  }
  DigitPool pool;
  for (std::size_t i = 0; i < n_images; ++i) {
    const auto label = static_cast<unsigned char>(labels[8 + i]);
    if (label > 9) throw Error(ErrorKind::InvalidArgument, labels_path.string() + ": label out of range");
    Bitmap bm;
    std::copy_n(reinterpret_cast<const std::uint8_t*>(images.data()) + 16 + i * px, px, bm.begin());
    pool.by_digit[label].push_back(bm);
  }
  return pool;
}

Bitmap render_glyph(int digit) {
  if (digit < 0 || digit > 9) throw Error(ErrorKind::InvalidArgument, "digit out of range");
  // Segments a..g as (x0, y0, x1, y1), inclusive.
  static constexpr int kSeg[7][4] = {
      {8, 4, 19, 6},     // a top
      {18, 5, 20, 13},   // b upper right
      {18, 14, 20, 22},  // c lower right
      {8, 21, 19, 23},   // d bottom
      {7, 14, 9, 22},    // e lower left
      {7, 5, 9, 13},     // f upper left
      {8, 13, 19, 15},   // g middle
  };
  static constexpr const char* kOn[10] = {"abcdef", "bc",    "abdeg", "abcdg",   "bcfg",
                                          "acdfg",  "acdefg", "abc",  "abcdefg", "abcdfg"};
  Bitmap bm{};
  for (const char* s = kOn[digit]; *s; ++s) {
    const auto& seg = kSeg[*s - 'a'];
    for (int y = seg[1]; y <= seg[3]; ++y)
      for (int x = seg[0]; x <= seg[2]; ++x) bm[static_cast<std::size_t>(y * kCell + x)] = 255;
  }
  return bm;
}

DigitPool synthetic_pool() {
  DigitPool pool;
  for (int d = 0; d < 10; ++d) pool.by_digit[static_cast<std::size_t>(d)].push_back(render_glyph(d));
  return pool;
}

DigitPool load_pool(const DigitSource& source) {
  if (const auto* idx = std::get_if<MnistIdx>(&source)) {
    auto pool = load_mnist_idx(idx->images, idx->labels);
    for (int d = 0; d < 10; ++d) {
      if (pool.by_digit[static_cast<std::size_t>(d)].empty()) {
        throw Error(ErrorKind::CountMismatch, "MNIST source has no images of digit " + std::to_string(d));
      }
    }
    return pool;
  }
  return synthetic_pool();
}

Sample generate_sample(Rng& rng, int target_m, const DigitPool& pool, const AttributeCatalog& catalog) {
  if (target_m < 2 || target_m > kMaxComplexity) {
    throw Error(ErrorKind::UnreachableComplexity, "target m=" + std::to_string(target_m) + " outside [2, 36]");
  }
  Sample s;
  s.image = Image(kCanvas, kCanvas);
  std::vector<int> unused(kRegionCount);
  std::iota(unused.begin(), unused.end(), 0);
  int remaining = target_m;

  while (remaining > 0) {
    if (unused.empty()) {
      throw Error(ErrorKind::UnreachableComplexity, "regions exhausted with " + std::to_string(remaining) + " pairs left");
    }
    const auto pick = rng.below(unused.size());
    const int region = unused[pick];
    unused.erase(unused.begin() + static_cast<std::ptrdiff_t>(pick));
    const int regions_left = static_cast<int>(unused.size());

    const int digit = static_cast<int>(rng.below(10));
    const int color = static_cast<int>(rng.below(kColorValues.size()));
    int shape_branch = static_cast<int>(rng.below(3));  // 0 none, 1 rectangle, 2 circle
    for (int retry = 0; !feasible_remainder(remaining - (shape_branch == 0 ? 2 : 4), regions_left); ++retry) {
      if (retry >= kRetryLimit) {
        throw Error(ErrorKind::UnreachableComplexity, "cannot reach m=" + std::to_string(target_m));
      }
      shape_branch = static_cast<int>(rng.below(3));
    }

    const auto& reg = region_grid()[static_cast<std::size_t>(region)];
    const auto& glyphs = pool.by_digit[static_cast<std::size_t>(digit)];
    if (glyphs.empty()) throw Error(ErrorKind::InvalidArgument, "digit pool missing class " + std::to_string(digit));
    paste_digit(s.image, reg, glyphs[rng.below(glyphs.size())], kColorValues[static_cast<std::size_t>(color)]);
    s.gt_pairs.emplace_back(region, catalog.digit(digit));
    s.gt_pairs.emplace_back(region, catalog.color(color));
    remaining -= 2;
    if (shape_branch != 0) {
      const int shape = shape_branch - 1;
      const int size = static_cast<int>(rng.below(3));
      draw_shape(s.image, reg, shape, size, rng);
      s.gt_pairs.emplace_back(region, catalog.shape(shape));
      s.gt_pairs.emplace_back(region, catalog.size_attr(size));
      remaining -= 2;
    }
  }
  std::sort(s.gt_pairs.begin(), s.gt_pairs.end());
  s.complexity_m = static_cast<int>(s.gt_pairs.size());
  auto rendered = render_text(s.gt_pairs, catalog, rng);
  s.text = std::move(rendered.text);
  s.sentences = std::move(rendered.sentences);
  return s;
}

RenderedText render_text(const std::vector<RegionAttr>& gt_pairs, const AttributeCatalog& catalog, Rng& rng) {
  if (gt_pairs.empty()) throw Error(ErrorKind::InvalidArgument, "render_text needs at least one pair");
  std::vector<std::string> sentences;
  sentences.reserve(gt_pairs.size());
  for (const auto& [region, attr] : gt_pairs) {
    const auto& a = catalog.at(attr);
    const auto& tmpls = catalog.templates(a.category);
    sentences.push_back(AttributeCatalog::instantiate(tmpls[rng.below(tmpls.size())], a.name));
  }
  rng.shuffle(sentences);
  RenderedText out;
  std::set<std::string> seen;
  for (auto& s : sentences) {
    if (seen.insert(s).second) out.sentences.push_back(std::move(s));
  }
  for (std::size_t i = 0; i < out.sentences.size(); ++i) {
    if (i) out.text += ". ";
    out.text += out.sentences[i];
  }
  return out;
}

int draw_target(Rng& rng, double c) {
  const int lo = 2 * static_cast<int>(std::floor(c / 2.0));
  const double p_hi = (c - lo) / 2.0;
  if (p_hi <= 0.0) return lo;
  return rng.uniform() < p_hi ? lo + 2 : lo;
}

namespace {

Dataset assemble(const GenConfig& cfg, const AttributeCatalog& catalog, const DigitPool& pool,
                 const std::vector<int>& targets, int threads) {
  Dataset ds{{}, catalog, cfg, 0.0};
  ds.samples.resize(targets.size());
  parallel_for(targets.size(), threads, [&](std::size_t i) {
    auto rng = Rng::stream(cfg.seed, i);
    (void)draw_target(rng, cfg.c);  // replays the scheduling draw
    ds.samples[i] = generate_sample(rng, targets[i], pool, catalog);
  });
  ds.realized_s = ds.samples.empty() ? 0.0 : complexity_score(ds);
  return ds;
}

}  // namespace

Dataset generate_dataset(const GenConfig& cfg, const AttributeCatalog& catalog, const DigitPool& pool,
                         int threads) {
  cfg.validate();
  std::vector<int> targets;
  long total = 0;
  while (total < cfg.b) {
    auto rng = Rng::stream(cfg.seed, targets.size());
    targets.push_back(draw_target(rng, cfg.c));
    total += targets.back();
  }
  return assemble(cfg, catalog, pool, targets, threads);
}

Dataset generate_dataset(const GenConfig& cfg, const AttributeCatalog& catalog, int threads) {
  return generate_dataset(cfg, catalog, load_pool(cfg.digit_source), threads);
}

Dataset generate_fixed(const GenConfig& cfg, std::size_t n_samples, const AttributeCatalog& catalog,
                       const DigitPool& pool, int threads) {
  if (!(cfg.c >= 2.0 && cfg.c <= kMaxComplexity)) throw Error(ErrorKind::InvalidArgument, "c must lie in [2, 36]");
  std::vector<int> targets(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    auto rng = Rng::stream(cfg.seed, i);
    targets[i] = draw_target(rng, cfg.c);
  }
  return assemble(cfg, catalog, pool, targets, threads);
}

double complexity_score(const Dataset& dataset) {
  if (dataset.samples.empty()) throw Error(ErrorKind::EmptyDataset, "complexity of an empty dataset");
  return static_cast<double>(dataset.total_pairs()) / static_cast<double>(dataset.samples.size());
}

std::string encode_ppm(const Image& image) {
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.rgb.data()), image.rgb.size());
  return out;
}

Image decode_ppm(const std::string& bytes) {
  std::istringstream in(bytes);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255 || w <= 0 || h <= 0) throw Error(ErrorKind::BadMagic, "not a P6/255 PPM");
  in.get();  // single whitespace after maxval
  Image img(w, h);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.rgb.size())) throw Error(ErrorKind::TruncatedFile, "PPM pixel data");
  return img;
}

nlohmann::json to_json(const GenConfig& cfg) {
  nlohmann::json j{{"c", cfg.c}, {"b", cfg.b}, {"seed", cfg.seed}};
  if (const auto* idx = std::get_if<MnistIdx>(&cfg.digit_source)) {
    j["digit_source"] = {{"kind", "mnist_idx"}, {"images", idx->images.string()}, {"labels", idx->labels.string()}};
  } else {
    j["digit_source"] = {{"kind", "synthetic_glyphs"}};
  }
  return j;
}

GenConfig gen_config_from_json(const nlohmann::json& j) {
  GenConfig cfg;
  cfg.c = j.at("c").get<double>();
  cfg.b = j.at("b").get<long>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  const auto& src = j.at("digit_source");
  if (src.at("kind") == "mnist_idx") {
    cfg.digit_source = MnistIdx{src.at("images").get<std::string>(), src.at("labels").get<std::string>()};
  }
  return cfg;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir, const std::string& config_hash) {
  namespace fs = std::filesystem;
  auto staging = dir;
  staging += ".tmp";
  fs::remove_all(staging);
  fs::create_directories(staging / "images");
  std::string manifest;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& s = dataset.samples[i];
    char name[32];
    std::snprintf(name, sizeof name, "images/%06zu.ppm", i);
    write_file_atomic(staging / name, encode_ppm(s.image));
    nlohmann::json rec{{"image", name}, {"text", s.text}, {"sentences", s.sentences}, {"m", s.complexity_m}};
    rec["gt_pairs"] = nlohmann::json::array();
    for (const auto& [r, a] : s.gt_pairs) rec["gt_pairs"].push_back({r, a});
    manifest += rec.dump() + "\n";
  }
  write_file_atomic(staging / "manifest.jsonl", manifest);
  write_file_atomic(staging / "catalog.json", dataset.catalog.to_json().dump(2) + "\n");
  nlohmann::json meta{{"gen_config", to_json(dataset.gen_config)},
                      {"realized_s", dataset.realized_s},
                      {"num_samples", dataset.samples.size()},
                      {"total_pairs", dataset.total_pairs()},
                      {"config_hash", config_hash}};
  write_file_atomic(staging / "dataset.json", meta.dump(2) + "\n");
  fs::remove_all(dir);
  if (dir.has_parent_path()) fs::create_directories(dir.parent_path());
  fs::rename(staging, dir);
}

Dataset load_dataset(const std::filesystem::path& dir, std::string* config_hash) {
  const auto meta = nlohmann::json::parse(read_file(dir / "dataset.json"));
  Dataset ds{{}, AttributeCatalog::from_json(nlohmann::json::parse(read_file(dir / "catalog.json"))),
             gen_config_from_json(meta.at("gen_config")), meta.at("realized_s").get<double>()};
  if (config_hash) *config_hash = meta.value("config_hash", "");
  std::istringstream manifest(read_file(dir / "manifest.jsonl"));
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const auto rec = nlohmann::json::parse(line);
    Sample s;
    s.image = decode_ppm(read_file(dir / rec.at("image").get<std::string>()));
    s.text = rec.at("text").get<std::string>();
    s.sentences = rec.at("sentences").get<std::vector<std::string>>();
    for (const auto& p : rec.at("gt_pairs")) s.gt_pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<AttrId>());
    s.complexity_m = rec.at("m").get<int>();
    if (s.complexity_m != static_cast<int>(s.gt_pairs.size())) {
      throw Error(ErrorKind::CountMismatch, dir.string() + ": m disagrees with gt_pairs");
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace villa
