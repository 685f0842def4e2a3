#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "ace/model.hpp"

using namespace ace;
using namespace ace::model;

namespace {

MatrixXd random_features(Eigen::Index m, Eigen::Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  MatrixXd x(m, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  return x;
}

std::vector<int> random_labels(int m, int c, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, c - 1);
  std::vector<int> y(static_cast<std::size_t>(m));
  for (auto& v : y) v = u(rng);
  return y;
}

// CE + lambda * sum_i a_i^2 sum_m P_im^2, written out from the probabilities.
double objective(const ModelParams& p, const MatrixXd& x, const std::vector<int>& y,
                 const VectorXd& a, double lambda) {
  const MatrixXd probs = softmax_columns(logits(p, x));
  double ce = 0.0;
  for (Eigen::Index m = 0; m < probs.cols(); ++m) {
    ce -= std::log(probs(y[static_cast<std::size_t>(m)], m));
  }
  ce /= static_cast<double>(probs.cols());
  double reg = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    for (Eigen::Index m = 0; m < probs.cols(); ++m) reg += a(i) * a(i) * probs(i, m) * probs(i, m);
  }
  return ce + lambda * reg;
}

double max_rel_error(ModelParams p, const ParamGrads& g, const MatrixXd& x,
                     const std::vector<int>& y, const VectorXd& a, double lambda) {
  const double h = 1e-6;
  double num_max = 0.0, diff_max = 0.0;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto visit = [&](double* data, const double* analytic, Eigen::Index n) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double orig = data[i];
        data[i] = orig + h;
        const double fp = objective(p, x, y, a, lambda);
        data[i] = orig - h;
        const double fm = objective(p, x, y, a, lambda);
        data[i] = orig;
        const double num = (fp - fm) / (2 * h);
        num_max = std::max(num_max, std::abs(num));
        diff_max = std::max(diff_max, std::abs(num - analytic[i]));
      }
    };
    visit(p.layers[l].weights.data(), g[l].weights.data(), p.layers[l].weights.size());
    visit(p.layers[l].biases.data(), g[l].biases.data(), p.layers[l].biases.size());
  }
  return diff_max / std::max(num_max, 1e-12);
}

PredictionBatch<double> make_batch(const MatrixXd& p, std::vector<int> labels) {
  PredictionBatch<double> b;
  b.P = p;
  b.labels = std::move(labels);
  return b;
}

}  // namespace

TEST_CASE("forward with zero parameters is uniform") {
  Rng rng = make_stream(1, "init");
  for (auto arch : {Architecture::linear, Architecture::mlp1}) {
    auto p = init_params(arch, 4, 5, 6, rng);
    for (auto& l : p.layers) {
      l.weights.setZero();
      l.biases.setZero();
    }
    std::mt19937_64 r(3);
    const MatrixXd x = random_features(7, 4, r);
    const std::vector<int> y(7, 1);
    auto [batch, cache] = forward(p, x, y);
    CHECK((batch.P.array() - 0.2).abs().maxCoeff() <= 1e-15);
    CHECK(cache.probabilities == batch.P);
    CHECK(cache.inputs.rows() == 4);
    CHECK(cache.inputs.cols() == 7);
  }
}

TEST_CASE("forward columns are distributions") {
  std::mt19937_64 r(5);
  Rng rng = make_stream(2, "init");
  const auto p = init_params(Architecture::mlp1, 8, 6, 16, rng);
  const MatrixXd x = random_features(20, 8, r) * 4.0;
  auto [batch, cache] = forward(p, x, random_labels(20, 6, r));
  for (Eigen::Index m = 0; m < 20; ++m) {
    CHECK(std::abs(batch.P.col(m).sum() - 1.0) <= 1e-9);
    CHECK(batch.P.col(m).minCoeff() >= 0.0);
  }
  CHECK_THROWS_AS(forward(p, random_features(3, 7, r), std::vector<int>{0, 1, 2}), ShapeError);
}

TEST_CASE("softmax shift invariance") {
  std::mt19937_64 r(6);
  const MatrixXd z = random_features(5, 9, r);
  const MatrixXd base = softmax_columns(z);
  MatrixXd shifted = z;
  for (Eigen::Index m = 0; m < 9; ++m) shifted.col(m).array() += 10.0 * (m - 4);
  CHECK((softmax_columns(shifted) - base).cwiseAbs().maxCoeff() <= 1e-12);
  const MatrixXd equal = MatrixXd::Constant(4, 2, 3.7);
  CHECK((softmax_columns(equal).array() - 0.25).abs().maxCoeff() <= 1e-15);
}

TEST_CASE("cross entropy") {
  MatrixXd onehot = MatrixXd::Zero(3, 2);
  onehot(1, 0) = onehot(2, 1) = 1;
  CHECK(cross_entropy(make_batch(onehot, {1, 2})) == 0.0);

  const MatrixXd uniform = MatrixXd::Constant(7, 3, 1.0 / 7);
  CHECK(cross_entropy(make_batch(uniform, {0, 3, 6})) == doctest::Approx(std::log(7.0)).epsilon(1e-14));

  MatrixXd two(2, 1);
  two << 0.25, 0.75;
  CHECK(cross_entropy(make_batch(two, {0})) == doctest::Approx(1.3862943611198906).epsilon(1e-14));

  // A zero probability on the true class hits the clamp instead of -log 0.
  MatrixXd wrong = MatrixXd::Zero(2, 1);
  wrong(1, 0) = 1;
  CHECK(cross_entropy(make_batch(wrong, {0})) == doctest::Approx(-std::log(1e-12)).epsilon(1e-14));

  CHECK_THROWS(cross_entropy(make_batch(two, {2})));
}

TEST_CASE("backward on a linear model is the outer product") {
  std::mt19937_64 r(10);
  Rng rng = make_stream(3, "init");
  const auto p = init_params(Architecture::linear, 4, 3, 0, rng);
  const MatrixXd x = random_features(5, 4, r);
  const auto y = random_labels(5, 3, r);
  auto [batch, cache] = forward(p, x, y);
  MatrixXd combined = batch.P;
  for (int m = 0; m < 5; ++m) combined(y[static_cast<std::size_t>(m)], m) -= 1.0;
  combined /= 5.0;
  const auto g = backward(p, cache, y, MatrixXd(), 0.0);
  REQUIRE(g.size() == 1);
  CHECK((g[0].weights - combined * x).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK((g[0].biases - combined.rowwise().sum()).cwiseAbs().maxCoeff() <= 1e-15);

  // lambda = 0 ignores the regularizer gradient entirely.
  const MatrixXd junk = MatrixXd::Constant(3, 5, 123.0);
  const auto g0 = backward(p, cache, y, junk, 0.0);
  CHECK(g0[0].weights == g[0].weights);
  CHECK(g0[0].biases == g[0].biases);
}

TEST_CASE("backward matches finite differences") {
  std::mt19937_64 r(42);
  std::uniform_real_distribution<double> ad(0.3, 1.8);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    Rng rng = make_stream(static_cast<std::uint64_t>(trial), "init");
    const auto arch = trial % 2 == 0 ? Architecture::mlp1 : Architecture::linear;
    const auto p = init_params(arch, 4, 3, 6, rng);
    const MatrixXd x = random_features(5, 4, r);
    const auto y = random_labels(5, 3, r);
    VectorXd a(3);
    for (Eigen::Index i = 0; i < 3; ++i) a(i) = ad(r);
    const double lambda = trial % 5 == 0 ? 0.0 : 1.7;
    auto [batch, cache] = forward(p, x, y);
    AdaptiveMatrix<double> am{a, a};
    const auto g = backward(p, cache, y, ace_grad_wrt_logits(batch, am), lambda);
    worst = std::max(worst, max_rel_error(p, g, x, y, a, lambda));
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("classifier-only backward matches the last layer of full backward") {
  std::mt19937_64 r(8);
  Rng rng = make_stream(4, "init");
  const auto p = init_params(Architecture::mlp1, 4, 3, 5, rng);
  const MatrixXd x = random_features(6, 4, r);
  const auto y = random_labels(6, 3, r);
  auto [batch, cache] = forward(p, x, y);
  const auto full = backward(p, cache, y, MatrixXd(), 0.0);
  const auto last = backward_classifier_only(p, cache, y);
  CHECK(last.weights == full.back().weights);
  CHECK(last.biases == full.back().biases);
}

TEST_CASE("classifier weight norms") {
  Rng rng = make_stream(5, "init");
  auto p = init_params(Architecture::linear, 3, 3, 0, rng);
  p.layers[0].weights.setIdentity();
  CHECK((classifier_weight_norms(p).array() - 1.0).abs().maxCoeff() == 0.0);
  p.layers[0].weights.row(1).setZero();
  CHECK(classifier_weight_norms(p)(1) == 0.0);

  auto q = init_params(Architecture::mlp1, 5, 4, 7, rng);
  const VectorXd norms = classifier_weight_norms(q);
  for (Eigen::Index i = 0; i < 4; ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < 7; ++j) s += q.layers[1].weights(i, j) * q.layers[1].weights(i, j);
    CHECK(norms(i) == doctest::Approx(std::sqrt(s)).epsilon(1e-14));
  }
}

TEST_CASE("init is Glorot-bounded and deterministic") {
  Rng a = make_stream(9, "init"), b = make_stream(9, "init");
  const auto p = init_params(Architecture::mlp1, 10, 4, 6, a);
  const auto q = init_params(Architecture::mlp1, 10, 4, 6, b);
  REQUIRE(p.layers.size() == 2);
  for (std::size_t l = 0; l < 2; ++l) {
    CHECK(p.layers[l].weights == q.layers[l].weights);
    const double bound = std::sqrt(6.0 / static_cast<double>(p.layers[l].weights.rows() +
                                                              p.layers[l].weights.cols()));
    CHECK(p.layers[l].weights.cwiseAbs().maxCoeff() <= bound);
    CHECK(p.layers[l].biases.isZero(0.0));
  }
  CHECK(p.layers[0].weights.rows() == 6);
  CHECK(p.layers[1].weights.rows() == 4);
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng = make_stream(11, "init");
  auto p = init_params(Architecture::mlp1, 6, 5, 4, rng);
  p.layers[0].biases(2) = 1e-300;
  p.layers[1].biases(0) = -0.1;
  p.layers[1].weights(0, 0) = 1.0 / 3.0;
  std::stringstream ss;
  save_checkpoint(p, ss);
  const auto q = load_checkpoint(ss);
  CHECK(q.architecture == p.architecture);
  CHECK(q.hidden_dim == p.hidden_dim);
  REQUIRE(q.layers.size() == p.layers.size());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    CHECK(q.layers[l].weights == p.layers[l].weights);
    CHECK(q.layers[l].biases == p.layers[l].biases);
  }
}

TEST_CASE("malformed checkpoints are rejected") {
  std::istringstream bad_header("not-a-checkpoint\n");
  CHECK_THROWS_AS(load_checkpoint(bad_header), ParseError);

  Rng rng = make_stream(12, "init");
  const auto p = init_params(Architecture::linear, 2, 2, 0, rng);
  std::stringstream ss;
  save_checkpoint(p, ss);
  std::string text = ss.str();
  text = text.substr(0, text.size() / 2);
  std::istringstream truncated(text);
  CHECK_THROWS_AS(load_checkpoint(truncated), ValidationError);

  CHECK_THROWS_AS(load_checkpoint(std::string("/nonexistent/ckpt.txt")), IoError);
  CHECK_THROWS_AS(parse_architecture("resnet"), ValidationError);
}
