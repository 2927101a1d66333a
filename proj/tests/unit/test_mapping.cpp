#include <doctest.h>

#include "../support/oracles.hpp"
#include "villa/mapping.hpp"
#include "villa/synth.hpp"

using namespace villa;

namespace {

PrecomputedSample single(std::size_t id, std::vector<Vec> regions, std::vector<AttrId> attrs, std::vector<Vec> texts) {
  PrecomputedSample s;
  s.sample_id = id;
  s.region_embs.resize(static_cast<Eigen::Index>(regions.size()), regions.empty() ? 2 : regions[0].size());
  for (std::size_t r = 0; r < regions.size(); ++r) {
    s.regions.push_back(static_cast<int>(r));
    s.region_embs.row(static_cast<Eigen::Index>(r)) = regions[r].transpose();
  }
  s.attr_ids = std::move(attrs);
  s.attr_embs.resize(static_cast<Eigen::Index>(texts.size()), texts.empty() ? 2 : texts[0].size());
  for (std::size_t a = 0; a < texts.size(); ++a) s.attr_embs.row(static_cast<Eigen::Index>(a)) = texts[a].transpose();
  return s;
}

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

// Identity scorer: adapter fully open, so P_k(e) = e.
MappingParams identity_params(std::size_t n_attrs, int d, double tau) {
  MappingConfig cfg;
  cfg.p = 1;
  cfg.tau = tau;
  cfg.adapter_alpha = 1.0;
  return init_mapping(n_attrs, d, cfg, 1);
}

MappingParams random_params(Rng& rng, int d, int n_attrs) {
  MappingConfig cfg;
  cfg.p = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n_attrs)));
  cfg.tau = 0.05 + rng.uniform();
  cfg.adapter_alpha = rng.below(2) ? 0.0 : 0.5 * rng.uniform();
  cfg.normalize = rng.below(4) != 0;
  auto p = init_mapping(static_cast<std::size_t>(n_attrs), d, cfg, rng.next());
  for (auto& h : p.heads) {
    for (Eigen::Index i = 0; i < d; ++i) h.b1[i] = 0.3 * rng.normal(), h.b2[i] = 0.3 * rng.normal();
  }
  return p;
}

}  // namespace

TEST_CASE("single-sample batch has no negatives and zero loss") {
  auto p = identity_params(3, 2, 0.07);
  const std::vector<PrecomputedSample> batch{single(0, {v2(1, 0), v2(0, 1)}, {0, 2}, {v2(1, 0), v2(0.6, 0.8)})};
  CHECK(sample_loss(p, 0, batch) == 0.0);
  CHECK(batch_loss(p, batch) == 0.0);
  const auto g = grad_batch(p, batch);
  CHECK(g.loss == 0.0);
  CHECK(g.flatten().isZero(0.0));
}

TEST_CASE("two-sample worked case") {
  auto p = identity_params(1, 2, 1.0);
  const std::vector<PrecomputedSample> batch{single(0, {v2(1, 0)}, {0}, {v2(1, 0)}),
                                             single(1, {v2(0, 1)}, {}, {})};
  const double expect = -std::log(std::exp(1.0) / (std::exp(1.0) + std::exp(0.0)));
  CHECK(expect == doctest::Approx(0.31326).epsilon(1e-5));
  CHECK(std::abs(sample_loss(p, 0, batch) - expect) < 1e-12);
  CHECK(sample_loss(p, 1, batch) == 0.0);
  CHECK(std::abs(batch_loss(p, batch) - expect) < 1e-12);
}

TEST_CASE("samples sharing the attribute are not negatives") {
  auto p = identity_params(2, 2, 1.0);
  const std::vector<PrecomputedSample> batch{single(0, {v2(1, 0)}, {0}, {v2(1, 0)}),
                                             single(1, {v2(0, 1)}, {0}, {v2(0, 1)})};
  CHECK(batch_loss(p, batch) == 0.0);
}

TEST_CASE("sigma is the max over regions") {
  Mat rows(3, 2);
  rows << 1, 0, 0, 1, 0.6, 0.8;
  const Vec b = v2(0.6, 0.8);
  CHECK(log_sigma(rows, b, 0.5) == doctest::Approx(2.0));
  CHECK(sigma(rows, b, 1.0) == doctest::Approx(std::exp(1.0)));
  CHECK_THROWS_AS(log_sigma(Mat(0, 2), b, 1.0), Error);
  CHECK_THROWS_AS(log_sigma(rows, b, 0.0), Error);
}

TEST_CASE("loss matches the naive formula on random batches") {
  Rng rng(123);
  for (int trial = 0; trial < 40; ++trial) {
    const int d = 2 + static_cast<int>(rng.below(7));
    const auto batch = oracle::random_batch(rng, d, 1 + rng.below(5), 4);
    const auto p = random_params(rng, d, 4);
    for (std::size_t i = 0; i < batch.size(); ++i)
      CHECK(sample_loss(p, i, batch) == doctest::Approx(oracle::sample_loss(p, i, batch)).epsilon(1e-10));
    CHECK(batch_loss(p, batch, 3) == doctest::Approx(oracle::batch_loss(p, batch)).epsilon(1e-10));
  }
}

TEST_CASE("gradient matches central differences") {
  Rng rng(77);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 2 + static_cast<int>(rng.below(7));
    const auto batch = oracle::random_batch(rng, d, 1 + rng.below(4), 4);
    auto p = random_params(rng, d, 4);
    const Vec analytic = grad_batch(p, batch).flatten();
    auto probe = p;
    const Vec fd = oracle::finite_difference(
        [&](const Vec& x) {
          probe.assign(x);
          return batch_loss(probe, batch);
        },
        p.flatten());
    if (fd.cwiseAbs().maxCoeff() == 0.0 && analytic.cwiseAbs().maxCoeff() == 0.0) continue;
    worst = std::max(worst, oracle::max_relative_error(analytic, fd));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("gradient is bit-identical across thread counts") {
  Rng rng(5);
  const auto batch = oracle::random_batch(rng, 6, 12, 5);
  const auto p = random_params(rng, 6, 5);
  CHECK(grad_batch(p, batch, 1).flatten() == grad_batch(p, batch, 4).flatten());
  CHECK(batch_loss(p, batch, 1) == batch_loss(p, batch, 3));
}

TEST_CASE("errors") {
  auto p = identity_params(2, 2, 1.0);
  std::vector<PrecomputedSample> empty;
  CHECK_THROWS_AS(batch_loss(p, empty), Error);
  const std::vector<PrecomputedSample> unknown{single(0, {v2(1, 0)}, {5}, {v2(1, 0)}), single(1, {v2(0, 1)}, {}, {})};
  CHECK_THROWS_AS(batch_loss(p, unknown), Error);
  const std::vector<PrecomputedSample> wide{single(0, {Vec::Ones(3)}, {0}, {Vec::Ones(3)}),
                                            single(1, {Vec::Ones(3)}, {}, {})};
  CHECK_THROWS_AS(batch_loss(p, wide), Error);

  auto bad = identity_params(1, 2, 1.0);
  bad.adapter_alpha = 0.0;
  bad.normalize = false;
  bad.heads[0].b2[0] = std::numeric_limits<double>::infinity();
  const std::vector<PrecomputedSample> batch{single(0, {v2(1, 0)}, {0}, {v2(1, 0)}),
                                             single(1, {v2(0, 1)}, {}, {})};
  try {
    grad_batch(bad, batch);
    FAIL("expected NonFiniteGradient");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NonFiniteGradient);
  }

  MappingConfig cfg;
  cfg.p = 0;
  CHECK_THROWS_AS(init_mapping(20, 8, cfg, 1), Error);
  cfg.p = 21;
  CHECK_THROWS_AS(init_mapping(20, 8, cfg, 1), Error);
}

TEST_CASE("head assignment and initialization") {
  MappingConfig cfg;
  cfg.p = 3;
  const auto p = init_mapping(7, 8, cfg, 9);
  CHECK(p.heads.size() == 3);
  CHECK(p.head_of_attr == std::vector<int>{0, 1, 2, 0, 1, 2, 0});
  const double bound = 1.0 / std::sqrt(8.0);
  for (const auto& h : p.heads) {
    CHECK(h.w1.cwiseAbs().maxCoeff() <= bound);
    CHECK(h.b1.isZero(0.0));
    CHECK(h.b2.isZero(0.0));
  }
  CHECK(init_mapping(7, 8, cfg, 9) == p);
  CHECK_FALSE(init_mapping(7, 8, cfg, 10) == p);
}

TEST_CASE("training lowers the loss and is deterministic") {
  GenConfig g;
  g.c = 9.9;
  g.b = 1200;
  const auto ds = generate_dataset(g, AttributeCatalog::docmnist(), 1);
  EncoderConfig enc;
  TrainHyper hyper;
  hyper.epochs = 4;
  MappingConfig cfg;
  const auto a = train_mapping(ds, enc, hyper, cfg, 1);
  REQUIRE(a.loss_curve.size() == 4);
  CHECK(a.loss_curve.back() < a.loss_curve.front());
  const auto b = train_mapping(ds, enc, hyper, cfg, 3);
  CHECK(a.params == b.params);
  CHECK(a.loss_curve == b.loss_curve);
  CHECK(loss_curve_csv({1.5, 0.25}).rfind("epoch,mean_loss\n1,", 0) == 0);
}

TEST_CASE("precompute keeps filled regions and text attributes") {
  GenConfig g;
  g.c = 6.0;
  g.b = 100;
  const auto ds = generate_dataset(g, AttributeCatalog::docmnist(), 1);
  EncoderConfig enc;
  const auto pre = precompute(ds, enc, 2);
  REQUIRE(pre.size() == ds.samples.size());
  for (std::size_t i = 0; i < pre.size(); ++i) {
    CHECK(pre[i].regions == ds.samples[i].regions());
    CHECK(pre[i].region_embs.rows() == static_cast<Eigen::Index>(pre[i].regions.size()));
    CHECK(pre[i].attr_ids == ds.catalog.attributes_in(ds.samples[i].sentences));
    CHECK(pre[i].has(pre[i].attr_ids.front()));
  }
}

TEST_CASE("checkpoint round trip") {
  MappingConfig cfg;
  cfg.p = 4;
  cfg.adapter_alpha = 0.25;
  const auto p = init_mapping(20, 8, cfg, 3, 0xfeedULL);
  const auto back = mapping_from_checkpoint(parse_checkpoint(serialize_checkpoint(to_checkpoint(p))));
  CHECK(back.head_of_attr == p.head_of_attr);
  CHECK(back.adapter_alpha == 0.25);
  CHECK(back.encoder_hash == 0xfeedULL);
  CHECK((back.flatten() - p.flatten()).cwiseAbs().maxCoeff() < 1e-6);  // stored as f32
}
