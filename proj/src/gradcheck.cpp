#include "ace/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "ace/ace.hpp"
#include "ace/error.hpp"
#include "ace/format.hpp"
#include "ace/model.hpp"
#include "ace/rng.hpp"
#include "ace/train.hpp"

namespace ace::gradcheck {

MatrixXd central_differences(const std::function<double(const MatrixXd&)>& f, const MatrixXd& x,
                             double step) {
  MatrixXd g(x.rows(), x.cols());
  MatrixXd probe = x;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double orig = probe(i, j);
      probe(i, j) = orig + step;
      const double up = f(probe);
      probe(i, j) = orig - step;
      const double down = f(probe);
      probe(i, j) = orig;
      g(i, j) = (up - down) / (2.0 * step);
    }
  }
  return g;
}

double relative_error(const MatrixXd& analytic, const MatrixXd& numeric) {
  if (analytic.rows() != numeric.rows() || analytic.cols() != numeric.cols()) {
    throw ShapeError("relative_error: shape mismatch");
  }
  const double err = (analytic - numeric).cwiseAbs().maxCoeff();
  const double scale = numeric.cwiseAbs().maxCoeff();
  return scale > 0.0 ? err / scale : err;
}

bool Report::passed() const {
  return std::all_of(families.begin(), families.end(), [](const auto& f) { return f.passed(); });
}

std::string Report::to_text() const {
  std::ostringstream out;
  for (const auto& f : families) {
    out << (f.passed() ? "PASS " : "FAIL ") << f.name << " max_rel_err=" << f.max_relative_error
        << " trials=" << f.trials << " worst_trial=" << f.worst_trial << '\n';
  }
  out << (passed() ? "all gradient families within " : "gradient check FAILED, tolerance ")
      << kTolerance << '\n';
  return out.str();
}

std::string Report::to_json() const {
  nlohmann::ordered_json j;
  j["tolerance"] = kTolerance;
  j["step"] = kStep;
  j["passed"] = passed();
  for (const auto& f : families) {
    j["families"][f.name] = {{"max_relative_error", f.max_relative_error},
                             {"worst_trial", f.worst_trial},
                             {"trials", f.trials},
                             {"passed", f.passed()}};
  }
  return j.dump(2);
}

namespace {

int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  MatrixXd m(r, c);
  for (Eigen::Index j = 0; j < c; ++j) {
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = n(rng);
  }
  return m;
}

std::vector<int> random_labels(Eigen::Index m, int c, Rng& rng) {
  std::vector<int> y(static_cast<std::size_t>(m));
  for (auto& v : y) v = uniform_int(rng, 0, c - 1);
  return y;
}

AdaptiveMatrix<double> random_adaptive(Eigen::Index c, Rng& rng) {
  AdaptiveMatrix<double> a;
  a.diag.resize(c);
  a.frozen_reference.resize(c);
  for (Eigen::Index i = 0; i < c; ++i) {
    a.frozen_reference(i) = uniform(rng, 0.2, 2.0);
    a.diag(i) = a.frozen_reference(i) + uniform(rng, -0.3, 0.3);
  }
  return a;
}

PredictionBatch<double> as_batch(const MatrixXd& p, const std::vector<int>& labels) {
  return {p, labels};
}

// Flattens all model parameters into one column so the finite-difference
// helper can walk them.
MatrixXd flatten(const model::ModelParams& p) {
  Eigen::Index n = 0;
  for (const auto& l : p.layers) n += l.weights.size() + l.biases.size();
  MatrixXd v(n, 1);
  Eigen::Index k = 0;
  for (const auto& l : p.layers) {
    for (Eigen::Index j = 0; j < l.weights.cols(); ++j) {
      for (Eigen::Index i = 0; i < l.weights.rows(); ++i) v(k++, 0) = l.weights(i, j);
    }
    for (Eigen::Index i = 0; i < l.biases.size(); ++i) v(k++, 0) = l.biases(i);
  }
  return v;
}

model::ModelParams unflatten(const model::ModelParams& shape, const MatrixXd& v) {
  model::ModelParams p = shape;
  Eigen::Index k = 0;
  for (auto& l : p.layers) {
    for (Eigen::Index j = 0; j < l.weights.cols(); ++j) {
      for (Eigen::Index i = 0; i < l.weights.rows(); ++i) l.weights(i, j) = v(k++, 0);
    }
    for (Eigen::Index i = 0; i < l.biases.size(); ++i) l.biases(i) = v(k++, 0);
  }
  return p;
}

MatrixXd flatten(const model::ParamGrads& g) {
  model::ModelParams p;
  p.layers = g;
  return flatten(p);
}

void record(FamilyResult& f, double err, int trial) {
  ++f.trials;
  if (std::isnan(err)) err = INFINITY;
  if (f.worst_trial < 0 || err > f.max_relative_error) {
    f.max_relative_error = err;
    f.worst_trial = trial;
  }
}

}  // namespace

Report run(std::uint64_t seed, int trials) {
  if (trials < 1) throw ValidationError("grad-check needs at least one trial");
  Rng rng = make_stream(seed, "gradcheck");

  FamilyResult wrt_p{"ace_grad_wrt_P"};
  FamilyResult wrt_ahat{"ace_grad_wrt_Ahat"};
  FamilyResult wrt_logits{"ace_grad_wrt_logits"};
  FamilyResult pc_logits{"pc_grad_wrt_logits"};
  FamilyResult backward{"model_backward"};

  for (int t = 0; t < trials; ++t) {
    const int c = uniform_int(rng, 2, 10);
    const int m = t == 0 ? 1 : uniform_int(rng, 1, 8);
    const auto labels = random_labels(m, c, rng);
    const MatrixXd logits = random_matrix(c, m, rng, 1.5);
    const MatrixXd p = model::softmax_columns(logits);
    const auto a = random_adaptive(c, rng);
    const double eta = uniform(rng, 0.0, 2.0);

    // The reference (SVD) path is differentiated numerically, so the analytic
    // gradients are checked against the literal nuclear-norm definition.
    {
      auto f = [&](const MatrixXd& x) {
        return ace_energy(as_batch(x, labels), a, BcnPath::svd_reference);
      };
      const MatrixXd analytic = ace_grad_wrt_P(as_batch(p, labels), a);
      record(wrt_p, relative_error(analytic, central_differences(f, p)), t);
    }
    {
      auto f = [&](const MatrixXd& d) {
        AdaptiveMatrix<double> probe = a;
        probe.diag = d.col(0);
        return ace_loss_learnable(as_batch(p, labels), probe, eta, BcnPath::svd_reference);
      };
      const MatrixXd analytic = ace_grad_wrt_Ahat(as_batch(p, labels), a, eta);
      record(wrt_ahat, relative_error(analytic, central_differences(f, MatrixXd(a.diag))), t);
    }
    {
      auto f = [&](const MatrixXd& z) {
        return ace_energy(as_batch(model::softmax_columns(z), labels), a, BcnPath::svd_reference);
      };
      const MatrixXd analytic = ace_grad_wrt_logits(as_batch(p, labels), a);
      record(wrt_logits, relative_error(analytic, central_differences(f, logits)), t);
    }
    if (m >= 2) {
      auto f = [&](const MatrixXd& z) {
        return train::pc_loss(as_batch(model::softmax_columns(z), labels));
      };
      const auto batch = as_batch(p, labels);
      const MatrixXd analytic = softmax_backward(p, train::pc_grad_wrt_P(batch));
      record(pc_logits, relative_error(analytic, central_differences(f, logits)), t);
    }
    {
      const int d = uniform_int(rng, 2, 6);
      const bool mlp = uniform_int(rng, 0, 1) == 1;
      const int hidden = uniform_int(rng, 2, 6);
      const double lambda = t == 1 ? 0.0 : uniform(rng, 0.1, 3.0);
      const auto arch = mlp ? model::Architecture::mlp1 : model::Architecture::linear;
      model::ModelParams params = model::init_params(arch, d, c, hidden, rng);
      // Non-zero biases so ReLU units sit away from the kink at init.
      for (auto& l : params.layers) l.biases = random_matrix(l.biases.size(), 1, rng, 0.5).col(0);
      const MatrixXd x = random_matrix(m, d, rng);

      auto loss = [&](const model::ModelParams& q) {
        auto [batch, cache] = model::forward(q, x, labels);
        return total_loss(model::cross_entropy(batch), ace_energy(batch, a), lambda);
      };
      auto [batch, cache] = model::forward(params, x, labels);
      const auto grads =
          model::backward(params, cache, labels, ace_grad_wrt_logits(batch, a), lambda);
      auto f = [&](const MatrixXd& v) { return loss(unflatten(params, v)); };
      record(backward, relative_error(flatten(grads), central_differences(f, flatten(params))), t);
    }
  }

  Report r;
  r.families = {wrt_p, wrt_ahat, wrt_logits, pc_logits, backward};
  return r;
}

}  // namespace ace::gradcheck
