#include "ace/model.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "ace/format.hpp"

namespace ace::model {

namespace {

Layer glorot_layer(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Layer layer;
  layer.weights.resize(fan_out, fan_in);
  // Row-major draw order so the stream layout matches the checkpoint payload.
  for (Eigen::Index r = 0; r < fan_out; ++r) {
    for (Eigen::Index c = 0; c < fan_in; ++c) layer.weights(r, c) = dist(rng);
  }
  layer.biases = VectorXd::Zero(fan_out);
  return layer;
}

void check_input(const ModelParams& params, const MatrixXd& batch_features) {
  if (params.layers.empty()) throw ShapeError("model has no layers");
  if (batch_features.cols() != params.input_dim()) {
    throw ShapeError("model expects " + std::to_string(params.input_dim()) +
                     " features, batch has " + std::to_string(batch_features.cols()));
  }
}

MatrixXd affine(const Layer& layer, const MatrixXd& x) {
  MatrixXd z = layer.weights * x;
  z.colwise() += layer.biases;
  return z;
}

}  // namespace

bool ModelParams::all_finite() const {
  for (const auto& l : layers) {
    if (!l.weights.allFinite() || !l.biases.allFinite()) return false;
  }
  return true;
}

ModelParams init_params(Architecture arch, Eigen::Index input_dim, Eigen::Index num_classes,
                        int hidden_dim, Rng& rng) {
  if (input_dim < 1 || num_classes < 2) {
    throw ValidationError("model needs input_dim >= 1 and at least 2 classes");
  }
  ModelParams p;
  p.architecture = arch;
  if (arch == Architecture::linear) {
    p.layers.push_back(glorot_layer(input_dim, num_classes, rng));
  } else {
    if (hidden_dim < 1) throw ValidationError("mlp1 needs hidden_dim >= 1");
    p.hidden_dim = hidden_dim;
    p.layers.push_back(glorot_layer(input_dim, hidden_dim, rng));
    p.layers.push_back(glorot_layer(hidden_dim, num_classes, rng));
  }
  return p;
}

MatrixXd softmax_columns(const MatrixXd& logits) {
  MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index m = 0; m < logits.cols(); ++m) {
    const double mx = logits.col(m).maxCoeff();
    p.col(m) = (logits.col(m).array() - mx).exp().matrix();
    p.col(m) /= p.col(m).sum();
  }
  return p;
}

std::pair<PredictionBatch<double>, ForwardCache> forward(const ModelParams& params,
                                                         const MatrixXd& batch_features,
                                                         std::span<const int> labels) {
  check_input(params, batch_features);
  if (static_cast<Eigen::Index>(labels.size()) != batch_features.rows()) {
    throw ShapeError("forward: label count does not match batch rows");
  }
  ForwardCache cache;
  cache.inputs = batch_features.transpose();
  const MatrixXd* x = &cache.inputs;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    cache.pre_activations.push_back(affine(params.layers[l], *x));
    const bool last = l + 1 == params.layers.size();
    if (last) {
      cache.activations.push_back(cache.pre_activations.back());
    } else {
      cache.activations.push_back(cache.pre_activations.back().cwiseMax(0.0));
    }
    x = &cache.activations.back();
  }
  cache.probabilities = softmax_columns(cache.activations.back());

  PredictionBatch<double> batch;
  batch.P = cache.probabilities;
  batch.labels.assign(labels.begin(), labels.end());
  for (int y : batch.labels) {
    if (y < 0 || y >= batch.P.rows()) throw ValidationError("label out of range");
  }
  return {std::move(batch), std::move(cache)};
}

MatrixXd logits(const ModelParams& params, const MatrixXd& batch_features) {
  check_input(params, batch_features);
  MatrixXd x = batch_features.transpose();
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    x = affine(params.layers[l], x);
    if (l + 1 < params.layers.size()) x = x.cwiseMax(0.0);
  }
  return x;
}

double cross_entropy(const PredictionBatch<double>& batch) {
  const auto m = batch.batch_size();
  if (static_cast<Eigen::Index>(batch.labels.size()) != m) {
    throw ShapeError("cross_entropy: label count does not match batch");
  }
  double s = 0.0;
  for (Eigen::Index j = 0; j < m; ++j) {
    const int y = batch.labels[static_cast<std::size_t>(j)];
    if (y < 0 || y >= batch.num_classes()) throw ValidationError("label out of range");
    s -= std::log(std::max(batch.P(y, j), kProbabilityFloor));
  }
  return s / static_cast<double>(m);
}

namespace {

MatrixXd ce_logit_grad(const MatrixXd& probabilities, std::span<const int> labels) {
  MatrixXd g = probabilities;
  for (Eigen::Index j = 0; j < g.cols(); ++j) g(labels[static_cast<std::size_t>(j)], j) -= 1.0;
  return g / static_cast<double>(g.cols());
}

}  // namespace

ParamGrads backward(const ModelParams& params, const ForwardCache& cache,
                    std::span<const int> labels, const MatrixXd& reg_logit_grad, double lambda) {
  const auto& probs = cache.probabilities;
  if (static_cast<Eigen::Index>(labels.size()) != probs.cols() ||
      cache.activations.size() != params.layers.size()) {
    throw ShapeError("backward: cache does not match parameters or labels");
  }
  MatrixXd delta = ce_logit_grad(probs, labels);
  if (reg_logit_grad.size() != 0) {
    if (reg_logit_grad.rows() != probs.rows() || reg_logit_grad.cols() != probs.cols()) {
      throw ShapeError("backward: regularizer gradient shape does not match logits");
    }
    if (lambda != 0.0) delta += lambda * reg_logit_grad;
  }

  ParamGrads grads(params.layers.size());
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const MatrixXd& input = l == 0 ? cache.inputs : cache.activations[l - 1];
    grads[l].weights = delta * input.transpose();
    grads[l].biases = delta.rowwise().sum();
    if (l > 0) {
      MatrixXd back = params.layers[l].weights.transpose() * delta;
      const MatrixXd& pre = cache.pre_activations[l - 1];
      delta = (pre.array() > 0.0).select(back, 0.0);
    }
  }
  return grads;
}

Layer backward_classifier_only(const ModelParams& params, const ForwardCache& cache,
                               std::span<const int> labels) {
  const MatrixXd delta = ce_logit_grad(cache.probabilities, labels);
  const std::size_t last = params.layers.size() - 1;
  const MatrixXd& input = last == 0 ? cache.inputs : cache.activations[last - 1];
  Layer g;
  g.weights = delta * input.transpose();
  g.biases = delta.rowwise().sum();
  return g;
}

VectorXd classifier_weight_norms(const ModelParams& params) {
  return params.classifier().weights.rowwise().norm();
}

std::string to_string(Architecture arch) {
  return arch == Architecture::linear ? "linear" : "mlp1";
}

Architecture parse_architecture(const std::string& name) {
  if (name == "linear") return Architecture::linear;
  if (name == "mlp1") return Architecture::mlp1;
  throw ValidationError("unknown architecture '" + name + "' (expected linear or mlp1)");
}

// ---- checkpoint ----

namespace {

constexpr const char* kMagic = "ace-checkpoint";
constexpr const char* kVersion = "v1";

void write_row(std::ostream& out, const auto& values) {
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (i) out << ' ';
    out << format_double(values(i));
  }
  out << '\n';
}

std::vector<double> read_row(std::istream& in, Eigen::Index expected, std::size_t& line_no) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("checkpoint truncated", line_no + 1);
  ++line_no;
  std::vector<double> vals;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) {
    auto v = parse_double(tok);
    if (!v) throw ParseError("checkpoint: bad number '" + tok + "'", line_no);
    vals.push_back(*v);
  }
  if (static_cast<Eigen::Index>(vals.size()) != expected) {
    throw ParseError("checkpoint: expected " + std::to_string(expected) + " values", line_no);
  }
  return vals;
}

std::vector<std::string> read_fields(std::istream& in, std::size_t& line_no) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("checkpoint truncated", line_no + 1);
  ++line_no;
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

}  // namespace

void save_checkpoint(const ModelParams& params, std::ostream& out) {
  out << kMagic << ' ' << kVersion << '\n';
  out << "architecture " << to_string(params.architecture) << ' ' << params.hidden_dim << '\n';
  out << "layers " << params.layers.size() << '\n';
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    out << "layer " << l << ' ' << layer.weights.rows() << ' ' << layer.weights.cols() << '\n';
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) write_row(out, layer.weights.row(r));
    write_row(out, layer.biases);
  }
}

ModelParams load_checkpoint(std::istream& in) {
  std::size_t line_no = 0;
  auto header = read_fields(in, line_no);
  if (header.size() != 2 || header[0] != kMagic) {
    throw ParseError("not an ace checkpoint", line_no);
  }
  if (header[1] != kVersion) throw ParseError("unsupported checkpoint version " + header[1], line_no);

  ModelParams p;
  auto arch = read_fields(in, line_no);
  if (arch.size() != 3 || arch[0] != "architecture") throw ParseError("expected architecture", line_no);
  p.architecture = parse_architecture(arch[1]);
  auto hidden = parse_int<int>(arch[2]);
  if (!hidden) throw ParseError("bad hidden dimension", line_no);
  p.hidden_dim = *hidden;

  auto count = read_fields(in, line_no);
  if (count.size() != 2 || count[0] != "layers") throw ParseError("expected layer count", line_no);
  auto n_layers = parse_int<std::size_t>(count[1]);
  const std::size_t expected_layers = p.architecture == Architecture::linear ? 1 : 2;
  if (!n_layers || *n_layers != expected_layers) throw ParseError("bad layer count", line_no);

  for (std::size_t l = 0; l < *n_layers; ++l) {
    auto hdr = read_fields(in, line_no);
    if (hdr.size() != 4 || hdr[0] != "layer") throw ParseError("expected layer header", line_no);
    auto rows = parse_int<Eigen::Index>(hdr[2]);
    auto cols = parse_int<Eigen::Index>(hdr[3]);
    if (!rows || !cols || *rows < 1 || *cols < 1) throw ParseError("bad layer shape", line_no);
    Layer layer;
    layer.weights.resize(*rows, *cols);
    for (Eigen::Index r = 0; r < *rows; ++r) {
      auto vals = read_row(in, *cols, line_no);
      for (Eigen::Index c = 0; c < *cols; ++c) layer.weights(r, c) = vals[static_cast<std::size_t>(c)];
    }
    auto b = read_row(in, *rows, line_no);
    layer.biases = Eigen::Map<VectorXd>(b.data(), *rows);
    if (!p.layers.empty() && p.layers.back().weights.rows() != layer.weights.cols()) {
      throw ParseError("layer shapes do not chain", line_no);
    }
    p.layers.push_back(std::move(layer));
  }
  return p;
}

void save_checkpoint(const ModelParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  save_checkpoint(params, out);
  if (!out) throw IoError("failed writing checkpoint " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path);
  return load_checkpoint(in);
}

}  // namespace ace::model
