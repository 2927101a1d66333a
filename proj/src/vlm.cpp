#include "villa/vlm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace villa {

namespace {

std::string num(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

struct TowerPass {
  Mat z, a, y;
  Vec norms;
};

TowerPass run_tower(const VlmParams& p, const Mat& x) {
  if (x.cols() != p.d) throw Error(ErrorKind::DimensionMismatch, "tower input width");
  TowerPass t;
  t.z = (x * p.w1.transpose()).rowwise() + p.b1.transpose();
  t.a = t.z.cwiseMax(0.0);
  Mat o = x + ((t.a * p.w2.transpose()).rowwise() + p.b2.transpose());
  t.norms = o.rowwise().norm();
  for (Eigen::Index r = 0; r < o.rows(); ++r)
    if (t.norms[r] > 0.0) o.row(r) /= t.norms[r];
  t.y = std::move(o);
  return t;
}

void check_encoder(const VlmParams& params, const EncoderConfig& enc) {
  if (params.encoder_hash != enc.hash()) {
    throw Error(ErrorKind::EncoderMismatch, "VLM was trained with encoder " + hex64(params.encoder_hash) +
                                                ", got " + hex64(enc.hash()));
  }
}

}  // namespace

const char* to_string(VlmVariant v) {
  switch (v) {
    case VlmVariant::ZeroShot: return "zero_shot";
    case VlmVariant::FtImg: return "ft_img";
    case VlmVariant::FtReg: return "ft_reg";
    case VlmVariant::ZsMap: return "zs_map";
    case VlmVariant::Villa: return "villa";
  }
  return "?";
}

VlmVariant vlm_variant_from_string(const std::string& name) {
  for (auto v : kAllVariants)
    if (name == to_string(v)) return v;
  throw Error(ErrorKind::InvalidArgument, "unknown VLM variant '" + name + "'");
}

Vec VlmParams::flatten() const {
  Vec flat(parameter_count());
  Eigen::Index o = 0;
  flat.segment(o, w1.size()) = Eigen::Map<const Vec>(w1.data(), w1.size());
  o += w1.size();
  flat.segment(o, b1.size()) = b1;
  o += b1.size();
  flat.segment(o, w2.size()) = Eigen::Map<const Vec>(w2.data(), w2.size());
  o += w2.size();
  flat.segment(o, b2.size()) = b2;
  return flat;
}

void VlmParams::assign(const Vec& flat) {
  if (flat.size() != parameter_count()) throw Error(ErrorKind::DimensionMismatch, "flat parameter length");
  Eigen::Index o = 0;
  Eigen::Map<Vec>(w1.data(), w1.size()) = flat.segment(o, w1.size());
  o += w1.size();
  b1 = flat.segment(o, b1.size());
  o += b1.size();
  Eigen::Map<Vec>(w2.data(), w2.size()) = flat.segment(o, w2.size());
  o += w2.size();
  b2 = flat.segment(o, b2.size());
}

bool VlmParams::operator==(const VlmParams& o) const {
  return tau == o.tau && d == o.d && encoder_hash == o.encoder_hash && variant == o.variant && w1 == o.w1 &&
         w2 == o.w2 && b1 == o.b1 && b2 == o.b2;
}

std::string VlmHyper::describe() const {
  return train.describe() + ";patience=" + std::to_string(patience) + ";tau=" + num(tau) +
         ";mask=" + (mask_same_image ? "1" : "0");
}

VlmParams init_vlm(int d, double tau, std::uint64_t seed, std::uint64_t encoder_hash, VlmVariant variant) {
  VlmParams p;
  p.d = d;
  p.tau = tau;
  p.encoder_hash = encoder_hash;
  p.variant = variant;
  p.w1 = Mat::Zero(d, d);
  p.w2 = Mat::Zero(d, d);
  p.b1 = Vec::Zero(d);
  p.b2 = Vec::Zero(d);
  Rng rng(splitmix64(seed ^ 0x766c6dULL));
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  for (Eigen::Index i = 0; i < p.w1.size(); ++i) p.w1.data()[i] = rng.uniform(-bound, bound);
  return p;
}

Mat apply_tower(const VlmParams& params, const Mat& features) { return run_tower(params, features).y; }

double bidir_contrastive_loss_grad(const Mat& image_embs, const Mat& text_embs, double tau,
                                   const std::vector<long>& groups, Mat& d_image) {
  const Eigen::Index n = image_embs.rows();
  if (n == 0 || text_embs.rows() != n || image_embs.cols() != text_embs.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "image and text embeddings must have matching shapes");
  }
  if (!groups.empty() && static_cast<Eigen::Index>(groups.size()) != n) {
    throw Error(ErrorKind::DimensionMismatch, "one group id per row");
  }
  const auto masked = [&](Eigen::Index i, Eigen::Index j) {
    return i != j && !groups.empty() && groups[static_cast<std::size_t>(i)] == groups[static_cast<std::size_t>(j)];
  };
  const Mat logits = image_embs * text_embs.transpose() / tau;
  Mat dlogits = Mat::Zero(n, n);
  const double scale = 1.0 / (2.0 * static_cast<double>(n));
  double loss = 0.0;

  for (int dir = 0; dir < 2; ++dir) {
    for (Eigen::Index i = 0; i < n; ++i) {
      // dir 0: row i over texts j; dir 1: column i over images j.
      const auto at = [&](Eigen::Index j) { return dir == 0 ? logits(i, j) : logits(j, i); };
      double top = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < n; ++j)
        if (!masked(i, j)) top = std::max(top, at(j));
      double denom = 0.0;
      for (Eigen::Index j = 0; j < n; ++j)
        if (!masked(i, j)) denom += std::exp(at(j) - top);
      const double lse = top + std::log(denom);
      loss += scale * (lse - at(i));
      for (Eigen::Index j = 0; j < n; ++j) {
        if (masked(i, j)) continue;
        const double g = scale * (std::exp(at(j) - lse) - (i == j ? 1.0 : 0.0));
        if (dir == 0) dlogits(i, j) += g; else dlogits(j, i) += g;
      }
    }
  }
  d_image = dlogits * text_embs / tau;
  return loss;
}

double bidir_contrastive_loss(const Mat& image_embs, const Mat& text_embs, double tau, const std::vector<long>& groups) {
  Mat unused;
  return bidir_contrastive_loss_grad(image_embs, text_embs, tau, groups, unused);
}

VlmBatchGradient vlm_loss_and_grad(const VlmParams& params, const std::vector<const VlmItem*>& batch, bool mask) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  Mat x(n, params.d), t(n, params.d);
  std::vector<long> groups;
  for (Eigen::Index i = 0; i < n; ++i) {
    x.row(i) = batch[static_cast<std::size_t>(i)]->features.transpose();
    t.row(i) = batch[static_cast<std::size_t>(i)]->text.transpose();
    if (mask) groups.push_back(batch[static_cast<std::size_t>(i)]->group);
  }
  const auto pass = run_tower(params, x);
  Mat dy;
  VlmBatchGradient out;
  out.loss = bidir_contrastive_loss_grad(pass.y, t, params.tau, groups, dy);

  Mat d_o(n, params.d);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double nr = pass.norms[r];
    d_o.row(r) = nr > 0.0 ? ((dy.row(r) - pass.y.row(r).dot(dy.row(r)) * pass.y.row(r)) / nr).eval()
                          : Eigen::RowVectorXd::Zero(params.d).eval();
  }
  VlmParams g = params;
  g.w2 = d_o.transpose() * pass.a;
  g.b2 = d_o.colwise().sum().transpose();
  Mat dz = d_o * params.w2;
  dz.array() *= (pass.z.array() > 0.0).cast<double>();
  g.w1 = dz.transpose() * x;
  g.b1 = dz.colwise().sum().transpose();
  out.grad = g.flatten();
  if (!out.grad.allFinite() || !std::isfinite(out.loss)) {
    throw Error(ErrorKind::NonFiniteGradient, "VLM gradient is not finite");
  }
  return out;
}

std::vector<VlmItem> build_vlm_items(VlmVariant variant, const Dataset& dataset, const AugmentedDataset* augmented,
                                     const EncoderConfig& enc, int threads) {
  const bool wants_aug = variant == VlmVariant::ZsMap || variant == VlmVariant::Villa;
  if (wants_aug != (augmented != nullptr)) {
    throw Error(ErrorKind::VariantInputMismatch,
                std::string(to_string(variant)) + (wants_aug ? " requires" : " does not take") + " an augmented stream");
  }
  if (augmented) {
    const auto expected = variant == VlmVariant::ZsMap ? PairSource::ZeroShotMapping : PairSource::TrainedMapping;
    if (augmented->source != expected) {
      throw Error(ErrorKind::VariantInputMismatch, std::string(to_string(variant)) + " needs pairs from " +
                                                       to_string(expected) + " mapping, got " + to_string(augmented->source));
    }
  }
  if (variant == VlmVariant::ZeroShot) return {};

  // (sample, region or -1, sentences) triples in stream order.
  struct Spec {
    std::size_t sample;
    int region;
    const std::vector<std::string>* sentences;
  };
  std::vector<Spec> specs;
  if (augmented) {
    for (const auto& it : augmented->items) {
      if (it.sample >= dataset.samples.size()) throw Error(ErrorKind::DanglingReference, "augmented item sample");
      specs.push_back({it.sample, it.origin == AugmentedItem::Origin::Image ? -1 : it.region, &it.sentences});
    }
  } else {
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) specs.push_back({i, -1, &dataset.samples[i].sentences});
    if (variant == VlmVariant::FtReg) {
      for (std::size_t i = 0; i < dataset.samples.size(); ++i)
        for (int r : dataset.samples[i].regions()) specs.push_back({i, r, &dataset.samples[i].sentences});
    }
  }

  std::vector<VlmItem> items(specs.size());
  parallel_for(specs.size(), threads, [&](std::size_t k) {
    const auto& s = specs[k];
    const auto& img = dataset.samples[s.sample].image;
    items[k].features = s.region < 0 ? encode_image(img, enc).values : encode_region(crop_region(img, s.region), enc).values;
    items[k].text = encode_description(*s.sentences, enc).values;
    items[k].group = static_cast<long>(s.sample);
  });
  return items;
}

VlmTrainResult train_vlm(const std::vector<VlmItem>& items, VlmVariant variant, const VlmHyper& hyper,
                         const EncoderConfig& enc) {
  hyper.train.validate();
  VlmTrainResult result{init_vlm(enc.d, hyper.tau, hyper.train.seed, enc.hash(), variant), {}};
  if (variant == VlmVariant::ZeroShot) return result;
  if (items.empty()) throw Error(ErrorKind::EmptyDataset, "no VLM training items");

  Vec flat = result.params.flatten();
  Optimizer opt(hyper.train, flat.size());
  Rng rng(splitmix64(hyper.train.seed ^ 0x73747265616dULL));
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto bs = static_cast<std::size_t>(hyper.train.batch_size);
  const bool mask = hyper.mask_same_image && variant != VlmVariant::FtImg;

  double best = std::numeric_limits<double>::infinity();
  int stale = 0;
  std::vector<const VlmItem*> batch;
  for (int epoch = 0; epoch < hyper.train.epochs; ++epoch) {
    rng.shuffle(order);
    double sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) batch.push_back(&items[order[i]]);
      const auto g = vlm_loss_and_grad(result.params, batch, mask);
      opt.step(flat, g.grad);
      result.params.assign(flat);
      sum += g.loss;
      ++batches;
    }
    const double mean = sum / batches;
    result.loss_curve.push_back(mean);
    if (mean < best) {
      best = mean;
      stale = 0;
    } else if (++stale >= hyper.patience) {
      break;
    }
  }
  return result;
}

VlmTrainResult train_vlm(const Dataset& dataset, const AugmentedDataset* augmented, VlmVariant variant,
                         const VlmHyper& hyper, const EncoderConfig& enc, int threads) {
  return train_vlm(build_vlm_items(variant, dataset, augmented, enc, threads), variant, hyper, enc);
}

Embedding vlm_embed_region(const Image& region, const VlmParams& params, const EncoderConfig& enc) {
  check_encoder(params, enc);
  Mat x = encode_region(region, enc).values.transpose();
  return {apply_tower(params, x).row(0).transpose(), true};
}

Embedding vlm_embed_image(const Image& image, const VlmParams& params, const EncoderConfig& enc) {
  check_encoder(params, enc);
  Mat x = encode_image(image, enc).values.transpose();
  return {apply_tower(params, x).row(0).transpose(), true};
}

Embedding vlm_embed_text(const std::vector<std::string>& sentences, const VlmParams& params, const EncoderConfig& enc) {
  check_encoder(params, enc);
  return encode_description(sentences, enc);
}

Checkpoint to_checkpoint(const VlmParams& params, const std::map<std::string, std::string>& extra) {
  Checkpoint ckpt;
  ckpt.encoder_hash = params.encoder_hash;
  ckpt.config = extra;
  ckpt.config["kind"] = "vlm";
  ckpt.config["variant"] = to_string(params.variant);
  ckpt.config["d"] = std::to_string(params.d);
  ckpt.config["tau"] = num(params.tau);
  ckpt.tensors.push_back(to_tensor(-1, "W1", params.w1));
  ckpt.tensors.push_back(to_tensor(-1, "b1", params.b1));
  ckpt.tensors.push_back(to_tensor(-1, "W2", params.w2));
  ckpt.tensors.push_back(to_tensor(-1, "b2", params.b2));
  return ckpt;
}

VlmParams vlm_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.get("kind") != "vlm") throw Error(ErrorKind::InvalidArgument, "checkpoint is not a VLM");
  VlmParams p;
  p.encoder_hash = ckpt.encoder_hash;
  p.variant = vlm_variant_from_string(ckpt.get("variant"));
  p.d = std::stoi(ckpt.get("d"));
  p.tau = std::stod(ckpt.get("tau"));
  p.w1 = mat_from(ckpt.tensor(-1, "W1"));
  p.b1 = vec_from(ckpt.tensor(-1, "b1"));
  p.w2 = mat_from(ckpt.tensor(-1, "W2"));
  p.b2 = vec_from(ckpt.tensor(-1, "b2"));
  return p;
}

}  // namespace villa
