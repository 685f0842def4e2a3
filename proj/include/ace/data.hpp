#ifndef ACE_DATA_HPP
#define ACE_DATA_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ace/linalg.hpp"

namespace ace::data {

enum class Split { train, test };

struct Dataset {
  MatrixXd features;  // n x d, one sample per row
  std::vector<int> labels;
  Split split = Split::train;
  int num_classes = 0;
  std::vector<std::int64_t> class_counts;  // size num_classes

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index feature_dim() const { return features.cols(); }

  /// Gathers the given rows into an M x d block plus labels.
  std::pair<MatrixXd, std::vector<int>> gather(const std::vector<Eigen::Index>& rows) const;
};

/// Rebuilds class_counts from labels; throws if a label is outside [0, C).
void recount(Dataset& ds);

struct SyntheticSpec {
  int num_classes = 10;
  int num_meta = 2;
  int feature_dim = 32;
  double fine_grained_scale = 0.5;  // delta; smaller means more similar siblings
  double imbalance_ratio = 1.0;     // r
  int max_count = 100;              // N_max, count of class 0
  double noise_std = 0.3;
  int test_per_class = 50;
  std::uint64_t seed = 1;
};

void validate(const SyntheticSpec& spec);

/// N_i = max(1, round(N_max * r^(-i/(C-1)))).
std::vector<std::int64_t> long_tail_counts(int num_classes, int max_count, double ratio);

/// Gaussian classes around meta-category centers on the unit sphere.
/// Class i belongs to meta-category i mod K; its mean is the meta center
/// plus delta times a unit offset orthogonal to the centers (to all centers
/// and earlier offsets when d >= K + C, else to its own center).
std::pair<Dataset, Dataset> generate(const SyntheticSpec& spec);

/// Class means of the generator before noise (C x d), exposed for tests.
MatrixXd class_means(const SyntheticSpec& spec);

struct GroupThresholds {
  std::int64_t many_min = 0;  // smallest count among Many classes
  std::int64_t few_max = 0;   // largest count among Few classes
};

struct DatasetStats {
  double imbalance_ratio = 1.0;
  double fine_grained_factor = 0.0;
  std::vector<std::int64_t> per_class_counts;
  GroupThresholds group_thresholds;
};

/// Imbalance ratio and mean pairwise cosine similarity of raw per-class
/// feature means. Every class must be present with a nonzero mean.
DatasetStats compute_stats(const Dataset& ds);

std::string stats_to_json(const DatasetStats& stats, int indent = 2);

/// CSV with header `label,f0,f1,...`. If num_classes is 0 it is inferred as
/// max label + 1.
Dataset load_csv(const std::string& path, int num_classes = 0, Split split = Split::train);
void save_csv(const Dataset& ds, const std::string& path);

}  // namespace ace::data

#endif  // ACE_DATA_HPP
