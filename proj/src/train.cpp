#include "ace/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "ace/error.hpp"
#include "ace/eval.hpp"

namespace ace::train {

std::string to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::instance_balanced: return "instance_balanced";
    case SamplerKind::distinct_class: return "distinct_class";
    case SamplerKind::class_balanced: return "class_balanced";
  }
  return "?";
}

std::string to_string(Method m) {
  switch (m) {
    case Method::ce_only: return "ce_only";
    case Method::pc: return "pc";
    case Method::ace: return "ace";
  }
  return "?";
}

SamplerKind parse_sampler(const std::string& s) {
  if (s == "instance_balanced") return SamplerKind::instance_balanced;
  if (s == "distinct_class") return SamplerKind::distinct_class;
  if (s == "class_balanced") return SamplerKind::class_balanced;
  throw ValidationError("unknown sampler '" + s +
                        "' (expected instance_balanced, distinct_class or class_balanced)");
}

Method parse_method(const std::string& s) {
  if (s == "ce_only") return Method::ce_only;
  if (s == "pc") return Method::pc;
  if (s == "ace") return Method::ace;
  throw ValidationError("unknown method '" + s + "' (expected ce_only, pc or ace)");
}

void validate(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw ValidationError("epochs must be >= 1");
  if (cfg.batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(cfg.lr0 > 0.0) || !std::isfinite(cfg.lr0)) throw ValidationError("lr must be positive");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) {
    throw ValidationError("momentum must lie in [0, 1)");
  }
  if (!(cfg.lambda >= 0.0) || !(cfg.tau >= 0.0) || !(cfg.eta >= 0.0) ||
      !std::isfinite(cfg.lambda) || !std::isfinite(cfg.tau) || !std::isfinite(cfg.eta)) {
    throw ValidationError("lambda, tau and eta must be finite and non-negative");
  }
  if (cfg.method == Method::pc && cfg.learnable_a) {
    throw ValidationError("method pc does not use an adaptive matrix; drop learnable_a");
  }
  if (cfg.method == Method::pc && cfg.batch_size < 2) {
    throw ValidationError("method pc needs batch_size >= 2");
  }
}

double cosine_lr(double lr0, int epoch, int total_epochs) {
  return lr0 * 0.5 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) /
                         static_cast<double>(total_epochs)));
}

// ---- sampling ----

BatchSampler::BatchSampler(const data::Dataset& ds) : size_(ds.size()) {
  by_class_.resize(static_cast<std::size_t>(ds.num_classes));
  for (Eigen::Index r = 0; r < ds.size(); ++r) {
    by_class_[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(r)])].push_back(r);
  }
}

std::vector<Eigen::Index> BatchSampler::draw(int batch_size, SamplerKind kind, Rng& rng) const {
  if (batch_size < 1) throw ValidationError("batch size must be >= 1");
  if (size_ == 0) throw ValidationError("cannot sample from an empty dataset");
  const auto m = static_cast<std::size_t>(batch_size);
  std::vector<Eigen::Index> out;
  out.reserve(m);

  switch (kind) {
    case SamplerKind::instance_balanced: {
      std::uniform_int_distribution<Eigen::Index> pick(0, size_ - 1);
      const bool distinct = static_cast<Eigen::Index>(m) <= size_;
      while (out.size() < m) {
        const Eigen::Index r = pick(rng);
        if (distinct && std::find(out.begin(), out.end(), r) != out.end()) continue;
        out.push_back(r);
      }
      break;
    }
    case SamplerKind::distinct_class: {
      // Uniform over samples conditioned on an unused label: pick a class in
      // proportion to its count among the unused ones, then a row within it.
      std::vector<char> used(by_class_.size(), 0);
      std::size_t available = 0;
      for (const auto& rows : by_class_) available += rows.empty() ? 0 : 1;
      if (m > available) {
        throw ValidationError("distinct_class sampler needs batch_size <= number of classes (" +
                              std::to_string(available) + ")");
      }
      while (out.size() < m) {
        Eigen::Index remaining = 0;
        for (std::size_t c = 0; c < by_class_.size(); ++c) {
          if (!used[c]) remaining += static_cast<Eigen::Index>(by_class_[c].size());
        }
        Eigen::Index k = std::uniform_int_distribution<Eigen::Index>(0, remaining - 1)(rng);
        for (std::size_t c = 0; c < by_class_.size(); ++c) {
          if (used[c]) continue;
          const auto n = static_cast<Eigen::Index>(by_class_[c].size());
          if (k < n) {
            out.push_back(by_class_[c][static_cast<std::size_t>(k)]);
            used[c] = 1;
            break;
          }
          k -= n;
        }
      }
      break;
    }
    case SamplerKind::class_balanced: {
      std::vector<std::size_t> present;
      for (std::size_t c = 0; c < by_class_.size(); ++c) {
        if (!by_class_[c].empty()) present.push_back(c);
      }
      std::uniform_int_distribution<std::size_t> pick_class(0, present.size() - 1);
      while (out.size() < m) {
        const auto& rows = by_class_[present[pick_class(rng)]];
        std::uniform_int_distribution<std::size_t> pick_row(0, rows.size() - 1);
        out.push_back(rows[pick_row(rng)]);
      }
      break;
    }
  }
  return out;
}

std::vector<Eigen::Index> sample_batch(const data::Dataset& ds, int batch_size, SamplerKind kind,
                                       Rng& rng) {
  return BatchSampler(ds).draw(batch_size, kind, rng);
}

// ---- pairwise confusion ----

double pc_loss(const PredictionBatch<double>& batch) {
  const Eigen::Index m = batch.batch_size();
  if (m < 2) throw ValidationError("pairwise confusion needs at least 2 samples");
  const Eigen::Index pairs = m / 2;
  double s = 0.0;
  for (Eigen::Index k = 0; k < pairs; ++k) {
    const auto a = 2 * k;
    const auto b = a + 1;
    if (batch.labels[static_cast<std::size_t>(a)] == batch.labels[static_cast<std::size_t>(b)]) continue;
    s += (batch.P.col(a) - batch.P.col(b)).squaredNorm();
  }
  return s / static_cast<double>(pairs);
}

MatrixXd pc_grad_wrt_P(const PredictionBatch<double>& batch) {
  const Eigen::Index m = batch.batch_size();
  if (m < 2) throw ValidationError("pairwise confusion needs at least 2 samples");
  const Eigen::Index pairs = m / 2;
  MatrixXd g = MatrixXd::Zero(batch.P.rows(), m);
  for (Eigen::Index k = 0; k < pairs; ++k) {
    const auto a = 2 * k;
    const auto b = a + 1;
    if (batch.labels[static_cast<std::size_t>(a)] == batch.labels[static_cast<std::size_t>(b)]) continue;
    const VectorXd diff = (2.0 / static_cast<double>(pairs)) * (batch.P.col(a) - batch.P.col(b));
    g.col(a) = diff;
    g.col(b) = -diff;
  }
  return g;
}

// ---- logging ----

std::string record_to_json(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["lr"] = r.lr;
  j["train_loss"] = r.train_loss;
  j["ce"] = r.ce;
  j["ace_term"] = r.reg;
  j["train_acc"] = r.train_acc;
  j["val_acc"] = r.val_acc;
  if (r.a_hat) j["a_hat"] = *r.a_hat;
  return j.dump();
}

std::string log_to_jsonl(const TrainLog& log) {
  std::string out;
  for (const auto& r : log.records) {
    out += record_to_json(r);
    out += '\n';
  }
  return out;
}

// ---- training ----

namespace {

struct Momentum {
  std::vector<model::Layer> velocity;

  explicit Momentum(const model::ModelParams& p) {
    for (const auto& l : p.layers) {
      velocity.push_back({MatrixXd::Zero(l.weights.rows(), l.weights.cols()),
                          VectorXd::Zero(l.biases.size())});
    }
  }

  void step(model::ModelParams& p, const model::ParamGrads& g, double lr, double mu) {
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      velocity[l].weights = mu * velocity[l].weights + g[l].weights;
      velocity[l].biases = mu * velocity[l].biases + g[l].biases;
      p.layers[l].weights -= lr * velocity[l].weights;
      p.layers[l].biases -= lr * velocity[l].biases;
    }
  }
};

}  // namespace

TrainResult train(const model::ModelParams& init, const data::Dataset& train_ds,
                  const data::Dataset& test_ds, const TrainConfig& cfg) {
  validate(cfg);
  if (train_ds.feature_dim() != init.input_dim() || test_ds.feature_dim() != init.input_dim()) {
    throw ShapeError("dataset feature dimension does not match the model input");
  }
  if (train_ds.num_classes != init.num_classes() || test_ds.num_classes != init.num_classes()) {
    throw ShapeError("dataset class count does not match the model output");
  }
  if (train_ds.size() == 0) throw ValidationError("training set is empty");

  TrainResult res;
  res.params = init;
  if (cfg.method == Method::ace) {
    AdaptiveSpec spec{train_ds.class_counts, cfg.tau};
    res.a_hat = build_adaptive_matrix(spec);
  } else {
    res.a_hat = AdaptiveMatrix<double>::identity(init.num_classes());
  }

  Rng rng = make_stream(cfg.seed, "sampler");
  const BatchSampler sampler(train_ds);
  Momentum opt(res.params);
  VectorXd a_velocity = VectorXd::Zero(res.a_hat.size());

  const Eigen::Index n = train_ds.size();
  const Eigen::Index steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  std::int64_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(cfg.lr0, epoch, cfg.epochs);
    double sum_loss = 0.0, sum_ce = 0.0, sum_reg = 0.0;

    for (Eigen::Index s = 0; s < steps_per_epoch; ++s, ++step) {
      const auto rows = sampler.draw(cfg.batch_size, cfg.sampler, rng);
      const auto [x, y] = train_ds.gather(rows);
      auto [batch, cache] = model::forward(res.params, x, y);

      const double ce = model::cross_entropy(batch);
      double reg = 0.0;
      MatrixXd reg_grad;
      if (cfg.method == Method::ace) {
        reg = ace_energy(batch, res.a_hat, cfg.bcn_path);
        if (cfg.learnable_a) reg += cfg.eta * proximity_penalty(res.a_hat);
        reg_grad = ace_grad_wrt_logits(batch, res.a_hat);
      } else if (cfg.method == Method::pc) {
        reg = pc_loss(batch);
        reg_grad = softmax_backward(batch.P, pc_grad_wrt_P(batch));
      }
      const double loss = total_loss(ce, reg, cfg.lambda);
      if (!std::isfinite(loss)) {
        throw NumericalError("training diverged: non-finite loss at step " + std::to_string(step));
      }
      sum_loss += loss;
      sum_ce += ce;
      sum_reg += reg;

      const auto grads = model::backward(res.params, cache, y, reg_grad, cfg.lambda);
      opt.step(res.params, grads, lr, cfg.momentum);
      if (!res.params.all_finite()) {
        throw NumericalError("training diverged: non-finite parameters at step " +
                             std::to_string(step));
      }

      if (cfg.method == Method::ace && cfg.learnable_a) {
        // Momentum step on the energy term, then the exact proximal step for
        // lambda * eta * |a_hat - a|^2.
        const VectorXd g = cfg.lambda * ace_grad_wrt_Ahat(batch, res.a_hat, 0.0);
        a_velocity = cfg.momentum * a_velocity + g;
        const double c = 2.0 * lr * cfg.lambda * cfg.eta;
        res.a_hat.diag = ((res.a_hat.diag - lr * a_velocity) + c * res.a_hat.frozen_reference) /
                         (1.0 + c);
        if (!res.a_hat.diag.allFinite()) {
          throw NumericalError("learnable adaptive matrix diverged at step " +
                               std::to_string(step));
        }
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    const auto steps = static_cast<double>(steps_per_epoch);
    rec.train_loss = sum_loss / steps;
    rec.ce = sum_ce / steps;
    rec.reg = sum_reg / steps;
    rec.train_acc = eval::top1(res.params, train_ds).total;
    rec.val_acc = eval::top1(res.params, test_ds).total;
    if (cfg.method == Method::ace && cfg.learnable_a) {
      rec.a_hat = std::vector<double>(res.a_hat.diag.data(),
                                      res.a_hat.diag.data() + res.a_hat.diag.size());
    }
    res.log.records.push_back(std::move(rec));
  }
  return res;
}

namespace {

data::Dataset frozen_representation(const model::ModelParams& params, const data::Dataset& ds) {
  data::Dataset rep = ds;
  if (params.layers.size() > 1) {
    MatrixXd h = ds.features.transpose();
    for (std::size_t l = 0; l + 1 < params.layers.size(); ++l) {
      h = params.layers[l].weights * h;
      h.colwise() += params.layers[l].biases;
      h = h.cwiseMax(0.0);
    }
    rep.features = h.transpose();
  }
  return rep;
}

}  // namespace

CrtResult crt_second_stage(const model::ModelParams& stage1, const data::Dataset& train_ds,
                           const data::Dataset* test_ds, const TrainConfig& cfg) {
  CrtResult out;
  if (stage1.layers.size() == 1) {
    out.log.warnings.push_back(
        "crt on a linear model: the frozen representation is the raw features");
  }
  const data::Dataset rep_train = frozen_representation(stage1, train_ds);
  const data::Dataset rep_test = frozen_representation(stage1, test_ds ? *test_ds : train_ds);

  const auto& cls = stage1.classifier();
  Rng init_rng = make_stream(cfg.seed, "crt.init");
  model::ModelParams head = model::init_params(model::Architecture::linear, cls.weights.cols(),
                                               cls.weights.rows(), 0, init_rng);

  TrainConfig stage2 = cfg;
  stage2.method = Method::ce_only;
  stage2.learnable_a = false;
  stage2.sampler = SamplerKind::class_balanced;
  stage2.seed = splitmix64(cfg.seed ^ 0x635254ULL);

  TrainResult r = train(head, rep_train, rep_test, stage2);
  out.params = stage1;
  out.params.layers.back() = r.params.layers.front();
  out.log.records = std::move(r.log.records);
  return out;
}

}  // namespace ace::train
