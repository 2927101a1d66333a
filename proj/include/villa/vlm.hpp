#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "villa/assignment.hpp"
#include "villa/checkpoint.hpp"
#include "villa/encoders.hpp"
#include "villa/optim.hpp"

namespace villa {

enum class VlmVariant { ZeroShot, FtImg, FtReg, ZsMap, Villa };

const char* to_string(VlmVariant v);
VlmVariant vlm_variant_from_string(const std::string& name);
inline constexpr VlmVariant kAllVariants[] = {VlmVariant::ZeroShot, VlmVariant::FtImg, VlmVariant::FtReg,
                                              VlmVariant::ZsMap, VlmVariant::Villa};

// Residual image tower over frozen features:
//   y = normalize(x + W2 relu(W1 x + b1) + b2)
// W2 and b2 start at zero, so an untrained tower is the identity on unit inputs.
// The text tower is frozen and has no parameters.
struct VlmParams {
  Mat w1, w2;
  Vec b1, b2;
  double tau = 0.07;
  int d = 0;
  std::uint64_t encoder_hash = 0;
  VlmVariant variant = VlmVariant::ZeroShot;

  Eigen::Index parameter_count() const { return 2 * w1.size() + 2 * b1.size(); }
  Vec flatten() const;
  void assign(const Vec& flat);
  bool operator==(const VlmParams& o) const;
};

struct VlmHyper {
  TrainHyper train{5e-5, 64, 100, 1};
  int patience = 5;
  double tau = 0.07;
  bool mask_same_image = true;

  std::string describe() const;
};

VlmParams init_vlm(int d, double tau, std::uint64_t seed, std::uint64_t encoder_hash, VlmVariant variant);

/// Applies the image tower to each row of frozen features.
Mat apply_tower(const VlmParams& params, const Mat& features);

/// Symmetric InfoNCE, averaged over rows and over both directions. Entries
/// that share a group id (other than the diagonal) are dropped from each
/// other's negative sets. An empty `groups` means all rows are distinct.
double bidir_contrastive_loss(const Mat& image_embs, const Mat& text_embs, double tau,
                              const std::vector<long>& groups = {});
/// Same loss plus its gradient with respect to image_embs.
double bidir_contrastive_loss_grad(const Mat& image_embs, const Mat& text_embs, double tau,
                                   const std::vector<long>& groups, Mat& d_image);

/// One training example: frozen image-side features, frozen text embedding,
/// and the id of the image it came from.
struct VlmItem {
  Vec features;
  Vec text;
  long group = 0;
};

struct VlmBatchGradient {
  double loss = 0.0;
  Vec grad;  // flattened like VlmParams::flatten
};
VlmBatchGradient vlm_loss_and_grad(const VlmParams& params, const std::vector<const VlmItem*>& batch, bool mask);

/// Builds the training stream a variant sees. FtImg: image-description pairs.
/// FtReg: those plus every filled region paired with the full description.
/// ZsMap / Villa: the augmented stream, which must come from zero-shot or
/// trained mapping pairs respectively. ZeroShot: empty.
std::vector<VlmItem> build_vlm_items(VlmVariant variant, const Dataset& dataset,
                                     const AugmentedDataset* augmented, const EncoderConfig& enc,
                                     int threads = 1);

struct VlmTrainResult {
  VlmParams params;
  std::vector<double> loss_curve;
};

VlmTrainResult train_vlm(const std::vector<VlmItem>& items, VlmVariant variant, const VlmHyper& hyper,
                         const EncoderConfig& enc);
VlmTrainResult train_vlm(const Dataset& dataset, const AugmentedDataset* augmented, VlmVariant variant,
                         const VlmHyper& hyper, const EncoderConfig& enc, int threads = 1);

Embedding vlm_embed_region(const Image& region, const VlmParams& params, const EncoderConfig& enc);
Embedding vlm_embed_image(const Image& image, const VlmParams& params, const EncoderConfig& enc);
Embedding vlm_embed_text(const std::vector<std::string>& sentences, const VlmParams& params,
                         const EncoderConfig& enc);

Checkpoint to_checkpoint(const VlmParams& params, const std::map<std::string, std::string>& extra = {});
VlmParams vlm_from_checkpoint(const Checkpoint& ckpt);

}  // namespace villa
