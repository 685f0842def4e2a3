#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "ace/eval.hpp"
#include "ace/train.hpp"

using namespace ace;
using namespace ace::eval;

namespace {

// Linear model whose logits copy the first C features.
model::ModelParams passthrough(int c, int d) {
  model::ModelParams p;
  p.architecture = model::Architecture::linear;
  p.layers.push_back({MatrixXd::Identity(c, d), VectorXd::Zero(c)});
  return p;
}

data::Dataset balanced_test(int c, int per_class, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  data::Dataset ds;
  ds.split = data::Split::test;
  ds.num_classes = c;
  ds.features.resize(c * per_class, c);
  for (int i = 0; i < c * per_class; ++i) {
    for (int j = 0; j < c; ++j) ds.features(i, j) = n(rng);
    ds.labels.push_back(i % c);
  }
  data::recount(ds);
  return ds;
}

}  // namespace

TEST_CASE("top1 of perfect and constant predictors") {
  std::mt19937_64 rng(1);
  auto ds = balanced_test(4, 5, rng);
  for (Eigen::Index i = 0; i < ds.size(); ++i) ds.features(i, ds.labels[static_cast<std::size_t>(i)]) = 100.0;
  const auto perfect = top1(passthrough(4, 4), ds);
  CHECK(perfect.total == 1.0);
  for (double a : perfect.per_class_accuracy) CHECK(a == 1.0);

  auto constant = passthrough(4, 4);
  constant.layers[0].weights.setZero();
  const auto c = top1(constant, ds);
  CHECK(c.total == doctest::Approx(0.25));
  CHECK(c.per_class_accuracy[0] == 1.0);
  CHECK(c.per_class_accuracy[3] == 0.0);
}

TEST_CASE("argmax ties go to the lowest index") {
  MatrixXd s(3, 3);
  s << 1, 0, 2, 1, 0, 5, 0, 0, 5;
  CHECK(argmax_columns(s) == std::vector<int>{0, 0, 1});
}

TEST_CASE("top1 matches a counting oracle") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto ds = balanced_test(5, 7, rng);
    const auto p = passthrough(5, 5);
    const auto r = top1(p, ds);
    std::vector<int> hit(5, 0), seen(5, 0);
    int total = 0;
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
      int best = 0;
      for (int j = 1; j < 5; ++j) {
        if (ds.features(i, j) > ds.features(i, best)) best = j;
      }
      const int y = ds.labels[static_cast<std::size_t>(i)];
      ++seen[static_cast<std::size_t>(y)];
      if (best == y) {
        ++hit[static_cast<std::size_t>(y)];
        ++total;
      }
    }
    CHECK(r.total == static_cast<double>(total) / static_cast<double>(ds.size()));
    for (std::size_t k = 0; k < 5; ++k) {
      CHECK(r.per_class_accuracy[k] == static_cast<double>(hit[k]) / seen[k]);
      CHECK(r.per_class_samples[k] == seen[k]);
    }
  }
}

TEST_CASE("group assignment") {
  const auto abs = assign_groups({500, 50, 5}, GroupSpec::absolute(100, 20));
  CHECK(abs == std::vector<Group>{Group::many, Group::median, Group::few});
  const auto edges = assign_groups({100, 20}, GroupSpec::absolute(100, 20));
  CHECK(edges == std::vector<Group>{Group::median, Group::median});

  const std::vector<std::int64_t> nine{90, 80, 70, 60, 50, 40, 30, 20, 10};
  const auto pct = assign_groups(nine, GroupSpec::percentile(0.33, 0.33));
  int counts[3] = {0, 0, 0};
  for (auto g : pct) ++counts[static_cast<int>(g)];
  CHECK(counts[0] == 3);
  CHECK(counts[1] == 3);
  CHECK(counts[2] == 3);
  CHECK(pct[0] == Group::many);
  CHECK(pct[8] == Group::few);

  // Order of the input does not matter, only counts do.
  const auto shuffled = assign_groups({10, 90, 50, 30, 70, 20, 80, 40, 60}, GroupSpec::percentile());
  CHECK(shuffled[0] == Group::few);
  CHECK(shuffled[1] == Group::many);
  CHECK(shuffled[2] == Group::median);
}

TEST_CASE("group accuracy") {
  Top1 acc;
  acc.per_class_accuracy = {1.0, 0.5, 0.0};
  acc.per_class_samples = {10, 10, 10};
  acc.total = 0.5;
  const auto g = group_accuracy(acc, {500, 50, 5}, GroupSpec::absolute(100, 20));
  CHECK(*g.many == 1.0);
  CHECK(*g.median == 0.5);
  CHECK(*g.few == 0.0);

  const auto one = group_accuracy(acc, {50, 50, 50}, GroupSpec::absolute(100, 20));
  CHECK_FALSE(one.many.has_value());
  CHECK_FALSE(one.few.has_value());
  CHECK(*one.median == doctest::Approx(acc.total).epsilon(1e-15));
}

TEST_CASE("group accuracies partition the total") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> cnt(1, 400), samples(1, 30), cls(3, 20);
  for (int trial = 0; trial < 200; ++trial) {
    const int c = cls(rng);
    Top1 acc;
    std::vector<std::int64_t> train_counts;
    double hits = 0, n = 0;
    for (int i = 0; i < c; ++i) {
      const int s = samples(rng);
      std::uniform_int_distribution<int> h(0, s);
      const int k = h(rng);
      acc.per_class_accuracy.push_back(static_cast<double>(k) / s);
      acc.per_class_samples.push_back(s);
      train_counts.push_back(cnt(rng));
      hits += k;
      n += s;
    }
    acc.total = hits / n;
    const auto spec = trial % 2 ? GroupSpec::percentile() : GroupSpec::absolute(100, 20);
    const auto groups = assign_groups(train_counts, spec);
    const auto g = group_accuracy(acc, train_counts, spec);
    double weight[3] = {0, 0, 0};
    for (int i = 0; i < c; ++i) weight[static_cast<int>(groups[static_cast<std::size_t>(i)])] += acc.per_class_samples[static_cast<std::size_t>(i)];
    double recombined = 0.0;
    if (g.many) recombined += *g.many * weight[0];
    if (g.median) recombined += *g.median * weight[1];
    if (g.few) recombined += *g.few * weight[2];
    CHECK(std::abs(recombined / n - acc.total) <= 1e-12);
    for (auto v : {g.many, g.median, g.few}) {
      if (v) CHECK((*v >= 0.0 && *v <= 1.0));
    }
  }
}

TEST_CASE("weight norm statistics") {
  VectorXd two(2);
  two << 2, 1;
  const auto s = weight_norm_stats(two);
  CHECK(s.mean == 1.5);
  CHECK(s.stddev == 0.5);
  CHECK(s.flatness == doctest::Approx(1.0 / 3.0));

  const auto id = weight_norm_profile(passthrough(3, 3));
  CHECK(id.stddev == 0.0);
  CHECK(id.flatness == 0.0);

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int k = 0; k < 2; ++k) {
    auto p = passthrough(4, 6);
    for (Eigen::Index i = 0; i < p.layers[0].weights.size(); ++i) p.layers[0].weights.data()[i] = u(rng);
    double norms[4], mean = 0.0;
    for (int i = 0; i < 4; ++i) {
      double sq = 0.0;
      for (int j = 0; j < 6; ++j) sq += p.layers[0].weights(i, j) * p.layers[0].weights(i, j);
      norms[i] = std::sqrt(sq);
      mean += norms[i] / 4;
    }
    double var = 0.0;
    for (double v : norms) var += (v - mean) * (v - mean) / 4;
    const auto st = weight_norm_profile(p);
    CHECK(st.mean == doctest::Approx(mean).epsilon(1e-14));
    CHECK(st.flatness == doctest::Approx(std::sqrt(var) / mean).epsilon(1e-12));
  }
}

TEST_CASE("overfit gap") {
  train::TrainLog log;
  train::EpochRecord r;
  r.train_acc = 0.7;
  r.val_acc = 0.7;
  log.records.push_back(r);
  CHECK(overfit_gap(log) == 0.0);
  r.train_acc = 1.0;
  r.val_acc = 0.6;
  log.records.push_back(r);
  CHECK(overfit_gap(log) == doctest::Approx(0.4));
  r.train_acc = 0.9;
  r.val_acc = 0.8;
  log.records.push_back(r);
  CHECK(overfit_gap(log) == doctest::Approx(0.1));
}

TEST_CASE("report serialization") {
  std::mt19937_64 rng(6);
  const auto ds = balanced_test(3, 4, rng);
  const std::vector<std::int64_t> counts{300, 50, 4};
  const auto rep = make_report(passthrough(3, 3), ds, counts, GroupSpec::absolute(100, 20));
  const std::string json = report_to_json(rep);
  for (const char* key : {"top1_total", "top1_by_group", "per_class_accuracy", "weight_norm_stats"}) {
    CHECK(json.find(key) != std::string::npos);
  }
  const std::string csv = report_to_csv(rep, counts, GroupSpec::absolute(100, 20));
  CHECK(csv.rfind("class,train_count,group,accuracy,weight_norm\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}
