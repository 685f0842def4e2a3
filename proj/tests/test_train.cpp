#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "ace/eval.hpp"
#include "ace/train.hpp"

using namespace ace;
using namespace ace::train;

namespace {

data::SyntheticSpec small_spec(double ratio, std::uint64_t seed = 1) {
  data::SyntheticSpec s;
  s.num_classes = 6;
  s.num_meta = 2;
  s.feature_dim = 8;
  s.fine_grained_scale = 0.5;
  s.imbalance_ratio = ratio;
  s.max_count = 40;
  s.noise_std = 0.2;
  s.test_per_class = 10;
  s.seed = seed;
  return s;
}

TrainConfig quick(Method m, int epochs = 5) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 8;
  c.method = m;
  c.lambda = 2.0;
  return c;
}

model::ModelParams fresh(const data::Dataset& ds, model::Architecture arch, std::uint64_t seed = 1) {
  Rng rng = make_stream(seed, "init");
  return model::init_params(arch, ds.feature_dim(), ds.num_classes, 12, rng);
}

void require_same(const model::ModelParams& a, const model::ModelParams& b) {
  REQUIRE(a.layers.size() == b.layers.size());
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    CHECK(a.layers[l].weights == b.layers[l].weights);
    CHECK(a.layers[l].biases == b.layers[l].biases);
  }
}

PredictionBatch<double> pair_batch(const MatrixXd& p, std::vector<int> labels) {
  PredictionBatch<double> b;
  b.P = p;
  b.labels = std::move(labels);
  return b;
}

}  // namespace

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0.05, 0, 90) == 0.05);
  CHECK(cosine_lr(0.05, 45, 90) == doctest::Approx(0.025).epsilon(1e-15));
  CHECK(cosine_lr(1.0, 89, 90) == doctest::Approx(0.000304586490452135).epsilon(1e-12));
  for (int e = 0; e < 90; ++e) {
    const double expected = 0.05 * 0.5 * (1.0 + std::cos(std::numbers::pi * e / 90.0));
    CHECK(cosine_lr(0.05, e, 90) == doctest::Approx(expected).epsilon(1e-15));
    if (e > 0) CHECK(cosine_lr(0.05, e, 90) < cosine_lr(0.05, e - 1, 90));
  }
}

TEST_CASE("samplers") {
  const auto ds = data::generate(small_spec(10)).first;
  const BatchSampler sampler(ds);
  Rng rng = make_stream(1, "sampler");
  for (auto kind : {SamplerKind::instance_balanced, SamplerKind::distinct_class,
                    SamplerKind::class_balanced}) {
    CHECK(sampler.draw(1, kind, rng).size() == 1);
  }
  for (int t = 0; t < 500; ++t) {
    const auto rows = sampler.draw(6, SamplerKind::distinct_class, rng);
    std::set<int> labels;
    for (auto r : rows) labels.insert(ds.labels[static_cast<std::size_t>(r)]);
    CHECK(labels.size() == 6);

    const auto inst = sampler.draw(8, SamplerKind::instance_balanced, rng);
    CHECK(std::set<Eigen::Index>(inst.begin(), inst.end()).size() == 8);
    for (auto r : inst) CHECK((r >= 0 && r < ds.size()));
  }
  CHECK_THROWS_AS(sampler.draw(7, SamplerKind::distinct_class, rng), ValidationError);
}

TEST_CASE("class-balanced sampling is uniform over classes") {
  const auto ds = data::generate(small_spec(20)).first;
  const BatchSampler sampler(ds);
  Rng rng = make_stream(2, "sampler");
  const int draws = 100000;
  std::vector<int> freq(6, 0);
  for (int t = 0; t < draws / 4; ++t) {
    for (auto r : sampler.draw(4, SamplerKind::class_balanced, rng)) {
      ++freq[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(r)])];
    }
  }
  const double p = 1.0 / 6.0;
  const double sd = std::sqrt(draws * p * (1 - p));
  for (int f : freq) CHECK(std::abs(f - draws * p) <= 3 * sd);
}

TEST_CASE("pairwise confusion loss") {
  MatrixXd same(3, 2);
  same << 0.2, 0.2, 0.3, 0.3, 0.5, 0.5;
  CHECK(pc_loss(pair_batch(same, {0, 1})) == 0.0);

  MatrixXd onehots = MatrixXd::Zero(3, 2);
  onehots(0, 0) = onehots(1, 1) = 1;
  CHECK(pc_loss(pair_batch(onehots, {0, 1})) == 2.0);
  CHECK(pc_loss(pair_batch(onehots, {1, 1})) == 0.0);

  // Two pairs, one with equal labels, and a trailing unpaired column.
  MatrixXd four = MatrixXd::Zero(3, 5);
  four(0, 0) = four(1, 1) = four(2, 2) = four(2, 3) = four(0, 4) = 1;
  CHECK(pc_loss(pair_batch(four, {0, 1, 2, 2, 0})) == 1.0);

  CHECK_THROWS_AS(pc_loss(pair_batch(MatrixXd::Constant(3, 1, 1.0 / 3), {0})), ValidationError);
}

TEST_CASE("config validation") {
  TrainConfig c;
  c.method = Method::pc;
  c.learnable_a = true;
  CHECK_THROWS_AS(validate(c), ValidationError);
  c = {};
  c.momentum = 1.0;
  CHECK_THROWS_AS(validate(c), ValidationError);
  c = {};
  c.lr0 = 0.0;
  CHECK_THROWS_AS(validate(c), ValidationError);
  c = {};
  c.lambda = -1;
  CHECK_THROWS_AS(validate(c), ValidationError);
  c = {};
  c.batch_size = 0;
  CHECK_THROWS_AS(validate(c), ValidationError);
}

TEST_CASE("lambda zero reproduces cross-entropy training") {
  const auto [tr, te] = data::generate(small_spec(10));
  const auto init = fresh(tr, model::Architecture::mlp1);
  auto ace_cfg = quick(Method::ace);
  ace_cfg.lambda = 0.0;
  ace_cfg.tau = 0.3;
  const auto a = train::train(init, tr, te, ace_cfg);
  const auto b = train::train(init, tr, te, quick(Method::ce_only));
  require_same(a.params, b.params);
  for (std::size_t e = 0; e < a.log.records.size(); ++e) {
    CHECK(a.log.records[e].val_acc == b.log.records[e].val_acc);
  }
}

TEST_CASE("balanced data gives the identity matrix") {
  const auto [tr, te] = data::generate(small_spec(1));
  const auto init = fresh(tr, model::Architecture::linear);
  auto cfg = quick(Method::ace, 3);
  cfg.tau = 0.7;
  const auto a = train::train(init, tr, te, cfg);
  CHECK(a.a_hat.diag == VectorXd::Ones(6));
  cfg.tau = 0.0;
  const auto b = train::train(init, tr, te, cfg);
  require_same(a.params, b.params);
}

TEST_CASE("separable toy data is fit") {
  data::SyntheticSpec s;
  s.num_classes = 3;
  s.num_meta = 3;
  s.feature_dim = 4;
  s.fine_grained_scale = 1.0;
  s.noise_std = 0.05;
  s.max_count = 30;
  s.test_per_class = 10;
  const auto [tr, te] = data::generate(s);
  const auto r = train::train(fresh(tr, model::Architecture::linear), tr, te, quick(Method::ce_only, 50));
  CHECK(r.log.records.back().train_acc == 1.0);
}

TEST_CASE("training log invariants") {
  const auto [tr, te] = data::generate(small_spec(10));
  const auto init = fresh(tr, model::Architecture::mlp1);
  for (auto m : {Method::ace, Method::pc, Method::ce_only}) {
    auto cfg = quick(m, 6);
    cfg.tau = 0.1;
    cfg.learnable_a = m == Method::ace;
    const auto r = train::train(init, tr, te, cfg);
    REQUIRE(r.log.records.size() == 6);
    for (std::size_t e = 0; e < 6; ++e) {
      const auto& rec = r.log.records[e];
      CHECK(rec.epoch == static_cast<int>(e));
      CHECK(rec.lr == cosine_lr(cfg.lr0, static_cast<int>(e), cfg.epochs));
      const double lambda = m == Method::ce_only ? 0.0 : cfg.lambda;
      CHECK(std::abs(rec.train_loss - (rec.ce + lambda * rec.reg)) <= 1e-10);
      CHECK(rec.a_hat.has_value() == cfg.learnable_a);
    }
    const auto again = train::train(init, tr, te, cfg);
    CHECK(log_to_jsonl(again.log) == log_to_jsonl(r.log));
    require_same(again.params, r.params);
  }
}

TEST_CASE("a huge proximity weight pins the learnable matrix") {
  const auto [tr, te] = data::generate(small_spec(10));
  auto cfg = quick(Method::ace, 5);
  cfg.tau = 0.1;
  cfg.learnable_a = true;
  cfg.eta = 1e6;
  const auto r = train::train(fresh(tr, model::Architecture::mlp1), tr, te, cfg);
  CHECK((r.a_hat.diag - r.a_hat.frozen_reference).cwiseAbs().maxCoeff() <= 1e-3);

  cfg.eta = 0.0;
  const auto loose = train::train(fresh(tr, model::Architecture::mlp1), tr, te, cfg);
  CHECK((loose.a_hat.diag - loose.a_hat.frozen_reference).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("divergence is reported") {
  const auto [tr, te] = data::generate(small_spec(10));
  auto cfg = quick(Method::ce_only, 3);
  cfg.lr0 = 1e300;
  CHECK_THROWS_AS(train::train(fresh(tr, model::Architecture::mlp1), tr, te, cfg), NumericalError);
}

TEST_CASE("second stage freezes the representation") {
  auto spec = small_spec(20);
  spec.num_classes = 9;
  spec.num_meta = 3;
  spec.max_count = 80;
  spec.test_per_class = 30;
  const auto [tr, te] = data::generate(spec);
  const auto stage1 = train::train(fresh(tr, model::Architecture::mlp1), tr, te, quick(Method::ce_only, 20));
  auto cfg = quick(Method::ce_only, 20);
  const auto crt = crt_second_stage(stage1.params, tr, &te, cfg);
  CHECK(crt.params.layers[0].weights == stage1.params.layers[0].weights);
  CHECK(crt.params.layers[0].biases == stage1.params.layers[0].biases);
  CHECK(crt.params.layers[1].weights != stage1.params.layers[1].weights);
  CHECK(crt.log.warnings.empty());
  CHECK(crt.log.records.size() == 20);

  const auto spec_g = eval::GroupSpec::percentile();
  const auto before = eval::group_accuracy(eval::top1(stage1.params, te), tr.class_counts, spec_g);
  const auto after = eval::group_accuracy(eval::top1(crt.params, te), tr.class_counts, spec_g);
  CHECK(*after.few >= *before.few);

  const auto lin1 = train::train(fresh(tr, model::Architecture::linear), tr, te, quick(Method::ce_only, 2));
  const auto lin = crt_second_stage(lin1.params, tr, nullptr, quick(Method::ce_only, 2));
  CHECK(lin.log.warnings.size() == 1);
}
