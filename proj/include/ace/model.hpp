#ifndef ACE_MODEL_HPP
#define ACE_MODEL_HPP

#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ace/ace.hpp"
#include "ace/rng.hpp"

namespace ace::model {

enum class Architecture { linear, mlp1 };

struct Layer {
  MatrixXd weights;  // out x in
  VectorXd biases;   // out
};

struct ModelParams {
  Architecture architecture = Architecture::linear;
  int hidden_dim = 0;  // mlp1 only
  std::vector<Layer> layers;

  Eigen::Index input_dim() const { return layers.front().weights.cols(); }
  Eigen::Index num_classes() const { return layers.back().weights.rows(); }
  const Layer& classifier() const { return layers.back(); }
  bool all_finite() const;
};

using ParamGrads = std::vector<Layer>;

// Everything backward() needs. Matrices are feature-major: column m belongs
// to sample m.
struct ForwardCache {
  MatrixXd inputs;                    // d x M
  std::vector<MatrixXd> pre_activations;  // per layer, out x M
  std::vector<MatrixXd> activations;      // per layer, out x M (last = logits)
  MatrixXd probabilities;             // C x M
};

/// Glorot-uniform weights and zero biases drawn from `rng`.
ModelParams init_params(Architecture arch, Eigen::Index input_dim, Eigen::Index num_classes,
                        int hidden_dim, Rng& rng);

/// Column-wise softmax of a C x M logit matrix.
MatrixXd softmax_columns(const MatrixXd& logits);

/// Runs the classifier on an M x d row-per-sample feature block.
std::pair<PredictionBatch<double>, ForwardCache> forward(const ModelParams& params,
                                                         const MatrixXd& batch_features,
                                                         std::span<const int> labels);

/// Logits only (C x M); used by evaluation.
MatrixXd logits(const ModelParams& params, const MatrixXd& batch_features);

inline constexpr double kProbabilityFloor = 1e-12;

double cross_entropy(const PredictionBatch<double>& batch);

/// Gradients of L_CE + lambda * L_reg. `reg_logit_grad` is dL_reg/dlogits
/// (C x M); pass an empty matrix for plain cross-entropy.
ParamGrads backward(const ModelParams& params, const ForwardCache& cache,
                    std::span<const int> labels, const MatrixXd& reg_logit_grad, double lambda);

/// Same as backward(), but stops after the final layer; earlier layers get
/// no gradient entries (used when the representation is frozen).
Layer backward_classifier_only(const ModelParams& params, const ForwardCache& cache,
                               std::span<const int> labels);

VectorXd classifier_weight_norms(const ModelParams& params);

// Checkpoint container, text format "ace-checkpoint v1"; see README.
void save_checkpoint(const ModelParams& params, std::ostream& out);
ModelParams load_checkpoint(std::istream& in);
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

std::string to_string(Architecture arch);
Architecture parse_architecture(const std::string& name);

}  // namespace ace::model

#endif  // ACE_MODEL_HPP
