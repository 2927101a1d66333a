#include "villa/mapping.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <sstream>

namespace villa {

namespace {

std::string num(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

// Activations of one head applied to one sample's regions.
struct HeadPass {
  Mat z;      // pre-ReLU
  Mat a;      // post-ReLU
  Mat y;      // final rows
  Vec norms;  // row norms before normalization
};

HeadPass run_head(const MappingParams& params, const ProjectionHead& head, const Mat& e) {
  if (e.cols() != params.d) {
    throw Error(ErrorKind::DimensionMismatch,
                "region embeddings have " + std::to_string(e.cols()) + " columns, expected " + std::to_string(params.d));
  }
  HeadPass pass;
  pass.z = (e * head.w1.transpose()).rowwise() + head.b1.transpose();
  pass.a = pass.z.cwiseMax(0.0);
  Mat out = (pass.a * head.w2.transpose()).rowwise() + head.b2.transpose();
  if (params.adapter_alpha > 0.0) out = params.adapter_alpha * e + (1.0 - params.adapter_alpha) * out;
  if (params.normalize) {
    pass.norms = out.rowwise().norm();
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      if (pass.norms[r] > 0.0) out.row(r) /= pass.norms[r];
    }
  }
  pass.y = std::move(out);
  return pass;
}

void backprop_head(const MappingParams& params, const ProjectionHead& head, const HeadPass& pass, const Mat& e,
                   const Mat& dy, ProjectionHead& grad) {
  Mat dout = dy;
  if (params.normalize) {
    for (Eigen::Index r = 0; r < dout.rows(); ++r) {
      const double n = pass.norms[r];
      if (n > 0.0) {
        const double proj = pass.y.row(r).dot(dy.row(r));
        dout.row(r) = (dy.row(r) - proj * pass.y.row(r)) / n;
      } else {
        dout.row(r).setZero();
      }
    }
  }
  const Mat dh = (1.0 - params.adapter_alpha) * dout;
  grad.w2.noalias() += dh.transpose() * pass.a;
  grad.b2 += dh.colwise().sum().transpose();
  Mat dz = dh * head.w2;
  dz.array() *= (pass.z.array() > 0.0).cast<double>();  // ReLU'(0) = 0
  grad.w1.noalias() += dz.transpose() * e;
  grad.b1 += dz.colwise().sum().transpose();
}

// Row maximum of rows*b with lowest-index tie break.
std::pair<double, Eigen::Index> max_dot(const Mat& rows, const Vec& b) {
  const Vec dots = rows * b;
  Eigen::Index best = 0;
  for (Eigen::Index r = 1; r < dots.size(); ++r)
    if (dots[r] > dots[best]) best = r;
  return {dots[best], best};
}

ProjectionHead zero_like(int d) {
  return {Mat::Zero(d, d), Mat::Zero(d, d), Vec::Zero(d), Vec::Zero(d)};
}

struct Evaluation {
  std::vector<double> sample_losses;  // indexed like the batch
  double total_attrs = 0.0;
  std::vector<ProjectionHead> grads;
};

// Shared forward/backward over the batch. When `only` is set, only that
// sample's loss is computed (negatives still range over the whole batch).
Evaluation evaluate(const MappingParams& params, Batch batch, int threads, bool want_grad,
                    std::optional<std::size_t> only = std::nullopt) {
  if (batch.empty()) throw Error(ErrorKind::EmptyBatch, "mapping loss over an empty batch");
  const std::size_t n = batch.size();
  Evaluation ev;
  ev.sample_losses.assign(n, 0.0);
  for (const auto& s : batch) ev.total_attrs += static_cast<double>(s.attr_ids.size());

  std::set<AttrId> needed_set;
  for (std::size_t i = 0; i < n; ++i) {
    if (only && *only != i) continue;
    needed_set.insert(batch[i].attr_ids.begin(), batch[i].attr_ids.end());
  }
  const std::vector<AttrId> needed(needed_set.begin(), needed_set.end());
  for (AttrId k : needed) {
    if (k < 0 || static_cast<std::size_t>(k) >= params.head_of_attr.size()) {
      throw Error(ErrorKind::UnknownAttribute, "attribute id " + std::to_string(k));
    }
  }

  // passes[u][j]: head for needed[u] applied to sample j.
  std::vector<std::vector<HeadPass>> passes(needed.size());
  parallel_for(needed.size(), threads, [&](std::size_t u) {
    const auto& head = params.head_for(needed[u]);
    passes[u].reserve(n);
    for (std::size_t j = 0; j < n; ++j) passes[u].push_back(run_head(params, head, batch[j].region_embs));
  });

  std::vector<std::vector<Mat>> dy;
  if (want_grad) {
    dy.resize(needed.size());
    for (std::size_t u = 0; u < needed.size(); ++u) {
      dy[u].reserve(n);
      for (std::size_t j = 0; j < n; ++j) dy[u].push_back(Mat::Zero(batch[j].region_embs.rows(), params.d));
    }
  }

  std::vector<std::size_t> members;
  std::vector<double> scores;
  std::vector<Eigen::Index> argmax;
  for (std::size_t i = 0; i < n; ++i) {
    if (only && *only != i) continue;
    double li = 0.0;
    for (AttrId k : batch[i].attr_ids) {
      const auto u = static_cast<std::size_t>(std::lower_bound(needed.begin(), needed.end(), k) - needed.begin());
      const Vec h = batch[i].attr_embedding(k);
      if (h.size() != params.d) throw Error(ErrorKind::DimensionMismatch, "attribute embedding width");
      members.assign(1, i);
      for (std::size_t j = 0; j < n; ++j)
        if (!batch[j].has(k)) members.push_back(j);
      if (members.size() == 1) continue;  // no negatives: the ratio is exactly one

      scores.clear();
      argmax.clear();
      for (std::size_t j : members) {
        const auto [dot, r] = max_dot(passes[u][j].y, h);
        scores.push_back(dot / params.tau);
        argmax.push_back(r);
      }
      const double top = *std::max_element(scores.begin(), scores.end());
      double denom = 0.0;
      for (double s : scores) denom += std::exp(s - top);
      const double lse = top + std::log(denom);
      li += lse - scores[0];

      if (want_grad) {
        for (std::size_t m = 0; m < members.size(); ++m) {
          const double p = std::exp(scores[m] - lse);
          const double coef = ((m == 0 ? p - 1.0 : p) / ev.total_attrs) / params.tau;
          dy[u][members[m]].row(argmax[m]) += coef * h.transpose();
        }
      }
    }
    ev.sample_losses[i] = li;
  }

  if (want_grad) {
    // Per-attribute gradient buffers, reduced into heads in attribute order.
    std::vector<ProjectionHead> per_attr(needed.size());
    parallel_for(needed.size(), threads, [&](std::size_t u) {
      per_attr[u] = zero_like(params.d);
      const auto& head = params.head_for(needed[u]);
      for (std::size_t j = 0; j < n; ++j) {
        if (dy[u][j].isZero(0.0)) continue;
        backprop_head(params, head, passes[u][j], batch[j].region_embs, dy[u][j], per_attr[u]);
      }
    });
    ev.grads.assign(params.heads.size(), zero_like(params.d));
    for (std::size_t u = 0; u < needed.size(); ++u) {
      auto& g = ev.grads[static_cast<std::size_t>(params.head_of_attr[static_cast<std::size_t>(needed[u])])];
      g.w1 += per_attr[u].w1;
      g.w2 += per_attr[u].w2;
      g.b1 += per_attr[u].b1;
      g.b2 += per_attr[u].b2;
    }
  }
  return ev;
}

}  // namespace

void MappingConfig::validate(std::size_t n_attributes) const {
  if (p < 1 || static_cast<std::size_t>(p) > n_attributes) {
    throw Error(ErrorKind::InvalidArgument, "head count p must lie in [1, |A|]");
  }
  if (!(tau > 0.0)) throw Error(ErrorKind::InvalidArgument, "tau must be positive");
  if (!(adapter_alpha >= 0.0 && adapter_alpha <= 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "adapter_alpha must lie in [0, 1]");
  }
}

std::string MappingConfig::describe() const {
  return "p=" + std::to_string(p) + ";tau=" + num(tau) + ";alpha=" + num(adapter_alpha) +
         ";normalize=" + (normalize ? "1" : "0");
}

const ProjectionHead& MappingParams::head_for(AttrId k) const {
  if (k < 0 || static_cast<std::size_t>(k) >= head_of_attr.size()) {
    throw Error(ErrorKind::UnknownAttribute, "attribute id " + std::to_string(k));
  }
  return heads[static_cast<std::size_t>(head_of_attr[static_cast<std::size_t>(k)])];
}

Eigen::Index MappingParams::parameter_count() const {
  return static_cast<Eigen::Index>(heads.size()) * (2 * d * d + 2 * d);
}

Vec MappingParams::flatten() const {
  Vec flat(parameter_count());
  Eigen::Index o = 0;
  const Eigen::Index dd = static_cast<Eigen::Index>(d) * d;
  for (const auto& h : heads) {
    flat.segment(o, dd) = Eigen::Map<const Vec>(h.w1.data(), dd), o += dd;
    flat.segment(o, d) = h.b1, o += d;
    flat.segment(o, dd) = Eigen::Map<const Vec>(h.w2.data(), dd), o += dd;
    flat.segment(o, d) = h.b2, o += d;
  }
  return flat;
}

void MappingParams::assign(const Vec& flat) {
  if (flat.size() != parameter_count()) throw Error(ErrorKind::DimensionMismatch, "flat parameter length");
  Eigen::Index o = 0;
  const Eigen::Index dd = static_cast<Eigen::Index>(d) * d;
  for (auto& h : heads) {
    Eigen::Map<Vec>(h.w1.data(), dd) = flat.segment(o, dd), o += dd;
    h.b1 = flat.segment(o, d), o += d;
    Eigen::Map<Vec>(h.w2.data(), dd) = flat.segment(o, dd), o += dd;
    h.b2 = flat.segment(o, d), o += d;
  }
}

bool MappingParams::operator==(const MappingParams& o) const {
  return head_of_attr == o.head_of_attr && adapter_alpha == o.adapter_alpha && tau == o.tau &&
         normalize == o.normalize && d == o.d && encoder_hash == o.encoder_hash && flatten() == o.flatten();
}

Vec MappingGradient::flatten() const {
  MappingParams shell;
  shell.heads = heads;
  shell.d = heads.empty() ? 0 : static_cast<int>(heads.front().b1.size());
  return shell.flatten();
}

MappingParams init_mapping(std::size_t n_attributes, int d, const MappingConfig& cfg, std::uint64_t seed,
                           std::uint64_t encoder_hash) {
  cfg.validate(n_attributes);
  MappingParams params;
  params.adapter_alpha = cfg.adapter_alpha;
  params.tau = cfg.tau;
  params.normalize = cfg.normalize;
  params.d = d;
  params.encoder_hash = encoder_hash;
  Rng rng(splitmix64(seed ^ 0x6d6170ULL));
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  for (int h = 0; h < cfg.p; ++h) {
    ProjectionHead head = zero_like(d);
    for (Eigen::Index i = 0; i < head.w1.size(); ++i) head.w1.data()[i] = rng.uniform(-bound, bound);
    for (Eigen::Index i = 0; i < head.w2.size(); ++i) head.w2.data()[i] = rng.uniform(-bound, bound);
    params.heads.push_back(std::move(head));
  }
  for (std::size_t k = 0; k < n_attributes; ++k) params.head_of_attr.push_back(static_cast<int>(k % static_cast<std::size_t>(cfg.p)));
  return params;
}

Vec PrecomputedSample::attr_embedding(AttrId k) const {
  for (std::size_t i = 0; i < attr_ids.size(); ++i)
    if (attr_ids[i] == k) return attr_embs.row(static_cast<Eigen::Index>(i)).transpose();
  throw Error(ErrorKind::UnknownAttribute, "attribute " + std::to_string(k) + " not in sample " + std::to_string(sample_id));
}

bool PrecomputedSample::has(AttrId k) const { return std::binary_search(attr_ids.begin(), attr_ids.end(), k); }

std::vector<PrecomputedSample> precompute(const Dataset& dataset, const EncoderConfig& enc, int threads) {
  const Mat table = attribute_table(dataset.catalog, enc);
  std::vector<PrecomputedSample> out(dataset.samples.size());
  parallel_for(dataset.samples.size(), threads, [&](std::size_t i) {
    const auto& s = dataset.samples[i];
    auto& p = out[i];
    p.sample_id = i;
    p.regions = s.regions();
    p.region_embs.resize(static_cast<Eigen::Index>(p.regions.size()), enc.d);
    for (std::size_t r = 0; r < p.regions.size(); ++r) {
      p.region_embs.row(static_cast<Eigen::Index>(r)) =
          encode_region(crop_region(s.image, p.regions[r]), enc).values.transpose();
    }
    p.attr_ids = dataset.catalog.attributes_in(s.sentences);
    p.attr_embs.resize(static_cast<Eigen::Index>(p.attr_ids.size()), enc.d);
    for (std::size_t a = 0; a < p.attr_ids.size(); ++a) p.attr_embs.row(static_cast<Eigen::Index>(a)) = table.row(p.attr_ids[a]);
  });
  return out;
}

Mat forward_head(const MappingParams& params, AttrId k, const Mat& region_embs) {
  return run_head(params, params.head_for(k), region_embs).y;
}

double log_sigma(const Mat& rows, const Vec& b, double tau) {
  if (!(tau > 0.0)) throw Error(ErrorKind::InvalidArgument, "tau must be positive");
  if (rows.rows() == 0) throw Error(ErrorKind::DimensionMismatch, "sigma over zero rows");
  if (rows.cols() != b.size()) throw Error(ErrorKind::DimensionMismatch, "sigma operand widths differ");
  return max_dot(rows, b).first / tau;
}

double sigma(const Mat& rows, const Vec& b, double tau) { return std::exp(log_sigma(rows, b, tau)); }

double sample_loss(const MappingParams& params, std::size_t i, Batch batch) {
  if (i >= batch.size()) throw Error(ErrorKind::InvalidArgument, "sample index outside batch");
  return evaluate(params, batch, 1, false, i).sample_losses[i];
}

double batch_loss(const MappingParams& params, Batch batch, int threads) {
  const auto ev = evaluate(params, batch, threads, false);
  if (ev.total_attrs == 0.0) return 0.0;
  double sum = 0.0;
  for (double l : ev.sample_losses) sum += l;
  return sum / ev.total_attrs;
}

MappingGradient grad_batch(const MappingParams& params, Batch batch, int threads) {
  auto ev = evaluate(params, batch, threads, true);
  MappingGradient g;
  for (double l : ev.sample_losses) g.loss += l;
  if (ev.total_attrs > 0.0) g.loss /= ev.total_attrs;
  g.heads = std::move(ev.grads);
  for (const auto& h : g.heads) {
    if (!h.w1.allFinite() || !h.w2.allFinite() || !h.b1.allFinite() || !h.b2.allFinite() || !std::isfinite(g.loss)) {
      throw Error(ErrorKind::NonFiniteGradient, "mapping-model gradient is not finite");
    }
  }
  return g;
}

MappingTrainResult train_mapping(const std::vector<PrecomputedSample>& samples, MappingParams init,
                                 const TrainHyper& hyper, int threads) {
  hyper.validate();
  if (samples.empty()) throw Error(ErrorKind::EmptyDataset, "no samples to train on");
  MappingTrainResult result{std::move(init), {}};
  Vec flat = result.params.flatten();
  Optimizer opt(hyper, flat.size());
  Rng rng(splitmix64(hyper.seed ^ 0x7472616eULL));
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto bs = static_cast<std::size_t>(hyper.batch_size);

  std::vector<PrecomputedSample> batch;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    rng.shuffle(order);
    double sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) batch.push_back(samples[order[i]]);
      const auto g = grad_batch(result.params, batch, threads);
      opt.step(flat, g.flatten());
      result.params.assign(flat);
      sum += g.loss;
      ++batches;
    }
    result.loss_curve.push_back(sum / batches);
  }
  return result;
}

MappingTrainResult train_mapping(const Dataset& dataset, const EncoderConfig& enc, const TrainHyper& hyper,
                                 const MappingConfig& cfg, int threads) {
  const auto samples = precompute(dataset, enc, threads);
  auto init = init_mapping(dataset.catalog.size(), enc.d, cfg, hyper.seed, enc.hash());
  return train_mapping(samples, std::move(init), hyper, threads);
}

std::string loss_curve_csv(const std::vector<double>& curve) {
  std::string out = "epoch,mean_loss\n";
  for (std::size_t e = 0; e < curve.size(); ++e) out += std::to_string(e + 1) + "," + num(curve[e]) + "\n";
  return out;
}

Checkpoint to_checkpoint(const MappingParams& params, const std::map<std::string, std::string>& extra) {
  Checkpoint ckpt;
  ckpt.encoder_hash = params.encoder_hash;
  ckpt.config = extra;
  ckpt.config["kind"] = "mapping";
  ckpt.config["d"] = std::to_string(params.d);
  ckpt.config["p"] = std::to_string(params.heads.size());
  ckpt.config["tau"] = num(params.tau);
  ckpt.config["adapter_alpha"] = num(params.adapter_alpha);
  ckpt.config["normalize"] = params.normalize ? "1" : "0";
  std::string heads;
  for (std::size_t k = 0; k < params.head_of_attr.size(); ++k) heads += (k ? "," : "") + std::to_string(params.head_of_attr[k]);
  ckpt.config["head_of_attr"] = heads;
  for (std::size_t h = 0; h < params.heads.size(); ++h) {
    const int hi = static_cast<int>(h);
    ckpt.tensors.push_back(to_tensor(hi, "W1", params.heads[h].w1));
    ckpt.tensors.push_back(to_tensor(hi, "b1", params.heads[h].b1));
    ckpt.tensors.push_back(to_tensor(hi, "W2", params.heads[h].w2));
    ckpt.tensors.push_back(to_tensor(hi, "b2", params.heads[h].b2));
  }
  return ckpt;
}

MappingParams mapping_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.get("kind") != "mapping") throw Error(ErrorKind::InvalidArgument, "checkpoint is not a mapping model");
  MappingParams params;
  params.encoder_hash = ckpt.encoder_hash;
  params.d = std::stoi(ckpt.get("d"));
  params.tau = std::stod(ckpt.get("tau"));
  params.adapter_alpha = std::stod(ckpt.get("adapter_alpha"));
  params.normalize = ckpt.get("normalize") == "1";
  std::istringstream heads(ckpt.get("head_of_attr"));
  std::string item;
  while (std::getline(heads, item, ',')) params.head_of_attr.push_back(std::stoi(item));
  const int p = std::stoi(ckpt.get("p"));
  for (int h = 0; h < p; ++h) {
    params.heads.push_back({mat_from(ckpt.tensor(h, "W1")), mat_from(ckpt.tensor(h, "W2")),
                            vec_from(ckpt.tensor(h, "b1")), vec_from(ckpt.tensor(h, "b2"))});
  }
  return params;
}

}  // namespace villa
