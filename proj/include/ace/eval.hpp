#ifndef ACE_EVAL_HPP
#define ACE_EVAL_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ace/data.hpp"
#include "ace/model.hpp"

namespace ace::train {
struct TrainLog;
}

namespace ace::eval {

enum class Group { many, median, few };

// Many/Median/Few partition of classes by training-sample count.
struct GroupSpec {
  enum class Mode { absolute_thresholds, percentile };
  Mode mode = Mode::percentile;
  double hi = 1.0 / 3.0;  // count threshold, or fraction of classes in Many
  double lo = 1.0 / 3.0;  // count threshold, or fraction of classes in Few

  static GroupSpec percentile(double p_hi = 1.0 / 3.0, double p_lo = 1.0 / 3.0) {
    return {Mode::percentile, p_hi, p_lo};
  }
  /// Many: N > hi, Few: N < lo, Median otherwise.
  static GroupSpec absolute(double hi = 100, double lo = 20) {
    return {Mode::absolute_thresholds, hi, lo};
  }
};

std::vector<Group> assign_groups(const std::vector<std::int64_t>& train_counts,
                                 const GroupSpec& spec);

struct Top1 {
  std::vector<double> per_class_accuracy;
  std::vector<std::int64_t> per_class_samples;
  double total = 0.0;
};

/// Argmax accuracy; ties go to the lowest class index.
Top1 top1(const model::ModelParams& params, const data::Dataset& ds);

/// Argmax of each column of a C x M score matrix, lowest index on ties.
std::vector<int> argmax_columns(const MatrixXd& scores);

struct GroupAccuracy {
  std::optional<double> many;
  std::optional<double> median;
  std::optional<double> few;
};

/// Sample-weighted accuracy within each group; empty groups stay absent.
GroupAccuracy group_accuracy(const Top1& acc, const std::vector<std::int64_t>& train_counts,
                             const GroupSpec& spec);

struct WeightNormStats {
  std::vector<double> per_class;
  double mean = 0.0;
  double stddev = 0.0;    // population
  double flatness = 0.0;  // stddev / mean
};

WeightNormStats weight_norm_stats(const VectorXd& norms);
WeightNormStats weight_norm_profile(const model::ModelParams& params);

/// Final-epoch train accuracy minus validation accuracy.
double overfit_gap(const train::TrainLog& log);

struct EvalReport {
  Top1 top1;
  GroupAccuracy groups;
  WeightNormStats weight_norms;
  std::optional<double> train_val_gap;
};

EvalReport make_report(const model::ModelParams& params, const data::Dataset& test,
                       const std::vector<std::int64_t>& train_counts, const GroupSpec& spec,
                       const train::TrainLog* log = nullptr);

std::string report_to_json(const EvalReport& report, int indent = 2);
/// One row per class: class,train_count,group,accuracy,weight_norm.
std::string report_to_csv(const EvalReport& report, const std::vector<std::int64_t>& train_counts,
                          const GroupSpec& spec);

std::string to_string(Group g);

}  // namespace ace::eval

#endif  // ACE_EVAL_HPP
