#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "villa/checkpoint.hpp"
#include "villa/encoders.hpp"
#include "villa/optim.hpp"
#include "villa/synth.hpp"

namespace villa {

// Linear -> ReLU -> linear. Row inputs: out = W2 relu(W1 x + b1) + b2.
struct ProjectionHead {
  Mat w1, w2;  // d x d
  Vec b1, b2;
};

struct MappingConfig {
  int p = 20;                  // number of projection heads
  double tau = 0.07;
  double adapter_alpha = 0.0;  // out <- alpha * input + (1 - alpha) * head(input)
  bool normalize = true;       // L2-normalize head outputs before scoring

  void validate(std::size_t n_attributes) const;
  std::string describe() const;
};

struct MappingParams {
  std::vector<ProjectionHead> heads;
  std::vector<int> head_of_attr;  // attribute id -> head index
  double adapter_alpha = 0.0;
  double tau = 0.07;
  bool normalize = true;
  int d = 0;
  std::uint64_t encoder_hash = 0;

  const ProjectionHead& head_for(AttrId k) const;
  Eigen::Index parameter_count() const;
  Vec flatten() const;
  void assign(const Vec& flat);
  bool operator==(const MappingParams& o) const;
};

/// Heads drawn from U(-1/sqrt(d), 1/sqrt(d)) with zero biases; attribute k is
/// served by head k mod p.
MappingParams init_mapping(std::size_t n_attributes, int d, const MappingConfig& cfg, std::uint64_t seed,
                           std::uint64_t encoder_hash = 0);

/// Frozen encoder outputs for one image-text sample.
struct PrecomputedSample {
  std::size_t sample_id = 0;
  std::vector<int> regions;      // grid index of each row of region_embs
  Mat region_embs;               // r_i x d
  std::vector<AttrId> attr_ids;  // attributes named in the text, ascending
  Mat attr_embs;                 // a_i x d, row order follows attr_ids

  Vec attr_embedding(AttrId k) const;
  bool has(AttrId k) const;
};

/// Encodes every filled region and every text attribute once.
std::vector<PrecomputedSample> precompute(const Dataset& dataset, const EncoderConfig& enc, int threads = 1);

Mat forward_head(const MappingParams& params, AttrId k, const Mat& region_embs);

/// log sigma(a, b) = max_r <a_r, b> / tau. sigma itself may overflow.
double log_sigma(const Mat& rows, const Vec& b, double tau);
double sigma(const Mat& rows, const Vec& b, double tau);

using Batch = std::span<const PrecomputedSample>;

/// Per-sample contrastive loss over the attributes of sample i.
double sample_loss(const MappingParams& params, std::size_t i, Batch batch);
/// Sum of sample losses divided by the total attribute count of the batch.
double batch_loss(const MappingParams& params, Batch batch, int threads = 1);

struct MappingGradient {
  double loss = 0.0;
  std::vector<ProjectionHead> heads;

  Vec flatten() const;
};

/// Exact reverse-mode gradient of batch_loss with respect to every head parameter.
MappingGradient grad_batch(const MappingParams& params, Batch batch, int threads = 1);

struct MappingTrainResult {
  MappingParams params;
  std::vector<double> loss_curve;  // per-epoch mean batch loss
};

MappingTrainResult train_mapping(const std::vector<PrecomputedSample>& samples, MappingParams init,
                                 const TrainHyper& hyper, int threads = 1);
MappingTrainResult train_mapping(const Dataset& dataset, const EncoderConfig& enc, const TrainHyper& hyper,
                                 const MappingConfig& cfg, int threads = 1);

std::string loss_curve_csv(const std::vector<double>& curve);

Checkpoint to_checkpoint(const MappingParams& params, const std::map<std::string, std::string>& extra = {});
MappingParams mapping_from_checkpoint(const Checkpoint& ckpt);

}  // namespace villa
