#ifndef ACE_TRAIN_HPP
#define ACE_TRAIN_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ace/ace.hpp"
#include "ace/data.hpp"
#include "ace/model.hpp"
#include "ace/rng.hpp"

namespace ace::train {

enum class SamplerKind { instance_balanced, distinct_class, class_balanced };
enum class Method { ce_only, pc, ace };

struct TrainConfig {
  int epochs = 90;
  int batch_size = 16;
  double lr0 = 0.05;
  double momentum = 0.9;
  double lambda = 2.0;
  double tau = 0.0;
  double eta = 1.0;
  bool learnable_a = false;
  SamplerKind sampler = SamplerKind::instance_balanced;
  Method method = Method::ace;
  BcnPath bcn_path = BcnPath::trace_fast;
  std::uint64_t seed = 1;
};

void validate(const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // mean over steps of ce + lambda * reg
  double ce = 0.0;
  double reg = 0.0;  // ACE (or PC) term, mean over steps
  double train_acc = 0.0;
  double val_acc = 0.0;
  std::optional<std::vector<double>> a_hat;
};

struct TrainLog {
  std::vector<EpochRecord> records;
  std::vector<std::string> warnings;
};

std::string record_to_json(const EpochRecord& r);
std::string log_to_jsonl(const TrainLog& log);

/// lr0 * (1 + cos(pi * epoch / total)) / 2.
double cosine_lr(double lr0, int epoch, int total_epochs);

// Per-class row index, built once per dataset.
class BatchSampler {
 public:
  explicit BatchSampler(const data::Dataset& ds);

  /// Row indices of one batch of size M.
  std::vector<Eigen::Index> draw(int batch_size, SamplerKind kind, Rng& rng) const;

  int num_classes() const { return static_cast<int>(by_class_.size()); }

 private:
  Eigen::Index size_ = 0;
  std::vector<std::vector<Eigen::Index>> by_class_;
};

std::vector<Eigen::Index> sample_batch(const data::Dataset& ds, int batch_size, SamplerKind kind,
                                       Rng& rng);

/// Pairwise confusion over disjoint consecutive pairs (2k, 2k+1): squared
/// Euclidean distance for pairs with distinct labels, zero for equal labels,
/// averaged over all floor(M/2) pairs.
double pc_loss(const PredictionBatch<double>& batch);
MatrixXd pc_grad_wrt_P(const PredictionBatch<double>& batch);

struct TrainResult {
  model::ModelParams params;
  TrainLog log;
  AdaptiveMatrix<double> a_hat;
};

TrainResult train(const model::ModelParams& init, const data::Dataset& train_ds,
                  const data::Dataset& test_ds, const TrainConfig& cfg);

struct CrtResult {
  model::ModelParams params;
  TrainLog log;
};

/// Freezes everything below the classifier, re-initializes the classifier
/// and retrains it with class-balanced batches and plain cross-entropy.
CrtResult crt_second_stage(const model::ModelParams& stage1, const data::Dataset& train_ds,
                           const data::Dataset* test_ds, const TrainConfig& cfg);

std::string to_string(SamplerKind k);
std::string to_string(Method m);
SamplerKind parse_sampler(const std::string& s);
Method parse_method(const std::string& s);

}  // namespace ace::train

#endif  // ACE_TRAIN_HPP
