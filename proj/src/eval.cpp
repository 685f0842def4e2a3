#include "ace/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "ace/error.hpp"
#include "ace/format.hpp"
#include "ace/train.hpp"

namespace ace::eval {

std::string to_string(Group g) {
  switch (g) {
    case Group::many: return "many";
    case Group::median: return "median";
    case Group::few: return "few";
  }
  return "?";
}

std::vector<Group> assign_groups(const std::vector<std::int64_t>& counts, const GroupSpec& spec) {
  const std::size_t c = counts.size();
  std::vector<Group> out(c, Group::median);
  if (spec.mode == GroupSpec::Mode::absolute_thresholds) {
    if (!(spec.hi > spec.lo) || spec.lo < 1) {
      throw ValidationError("group thresholds need hi > lo >= 1");
    }
    for (std::size_t i = 0; i < c; ++i) {
      const auto n = static_cast<double>(counts[i]);
      if (n > spec.hi) {
        out[i] = Group::many;
      } else if (n < spec.lo) {
        out[i] = Group::few;
      }
    }
    return out;
  }
  if (spec.hi < 0 || spec.lo < 0 || spec.hi + spec.lo > 1.0 + 1e-12) {
    throw ValidationError("group percentiles must be non-negative and sum to at most 1");
  }
  std::vector<std::size_t> order(c);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
  const auto n_many = static_cast<std::size_t>(std::lround(spec.hi * static_cast<double>(c)));
  const auto n_few = std::min(c - std::min(c, n_many),
                              static_cast<std::size_t>(std::lround(spec.lo * static_cast<double>(c))));
  for (std::size_t k = 0; k < c; ++k) {
    if (k < n_many) {
      out[order[k]] = Group::many;
    } else if (k >= c - n_few) {
      out[order[k]] = Group::few;
    }
  }
  return out;
}

std::vector<int> argmax_columns(const MatrixXd& scores) {
  std::vector<int> out(static_cast<std::size_t>(scores.cols()));
  for (Eigen::Index m = 0; m < scores.cols(); ++m) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < scores.rows(); ++i) {
      if (scores(i, m) > scores(best, m)) best = i;
    }
    out[static_cast<std::size_t>(m)] = static_cast<int>(best);
  }
  return out;
}

Top1 top1(const model::ModelParams& params, const data::Dataset& ds) {
  if (ds.size() == 0) throw ValidationError("top1: empty dataset");
  const auto pred = argmax_columns(model::logits(params, ds.features));
  const auto c = static_cast<std::size_t>(ds.num_classes);
  std::vector<std::int64_t> correct(c, 0);
  Top1 out;
  out.per_class_samples.assign(c, 0);
  std::int64_t total_correct = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const auto y = static_cast<std::size_t>(ds.labels[k]);
    ++out.per_class_samples[y];
    if (pred[k] == ds.labels[k]) {
      ++correct[y];
      ++total_correct;
    }
  }
  out.per_class_accuracy.assign(c, 0.0);
  for (std::size_t i = 0; i < c; ++i) {
    if (out.per_class_samples[i] > 0) {
      out.per_class_accuracy[i] =
          static_cast<double>(correct[i]) / static_cast<double>(out.per_class_samples[i]);
    }
  }
  out.total = static_cast<double>(total_correct) / static_cast<double>(pred.size());
  return out;
}

GroupAccuracy group_accuracy(const Top1& acc, const std::vector<std::int64_t>& train_counts,
                             const GroupSpec& spec) {
  if (train_counts.size() != acc.per_class_accuracy.size()) {
    throw ShapeError("group_accuracy: class count mismatch");
  }
  const auto groups = assign_groups(train_counts, spec);
  double num[3] = {0, 0, 0};
  double den[3] = {0, 0, 0};
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto g = static_cast<std::size_t>(groups[i]);
    const auto w = static_cast<double>(acc.per_class_samples[i]);
    num[g] += w * acc.per_class_accuracy[i];
    den[g] += w;
  }
  auto pick = [&](Group g) -> std::optional<double> {
    const auto k = static_cast<std::size_t>(g);
    if (den[k] == 0.0) return std::nullopt;
    return num[k] / den[k];
  };
  return {pick(Group::many), pick(Group::median), pick(Group::few)};
}

WeightNormStats weight_norm_stats(const VectorXd& norms) {
  WeightNormStats s;
  s.per_class.assign(norms.data(), norms.data() + norms.size());
  s.mean = norms.mean();
  s.stddev = std::sqrt((norms.array() - s.mean).square().mean());
  s.flatness = s.mean > 0.0 ? s.stddev / s.mean : 0.0;
  return s;
}

WeightNormStats weight_norm_profile(const model::ModelParams& params) {
  return weight_norm_stats(model::classifier_weight_norms(params));
}

double overfit_gap(const train::TrainLog& log) {
  if (log.records.empty()) throw ValidationError("overfit_gap: empty training log");
  const auto& last = log.records.back();
  return last.train_acc - last.val_acc;
}

EvalReport make_report(const model::ModelParams& params, const data::Dataset& test,
                       const std::vector<std::int64_t>& train_counts, const GroupSpec& spec,
                       const train::TrainLog* log) {
  EvalReport r;
  r.top1 = top1(params, test);
  r.groups = group_accuracy(r.top1, train_counts, spec);
  r.weight_norms = weight_norm_profile(params);
  if (log != nullptr && !log->records.empty()) r.train_val_gap = overfit_gap(*log);
  return r;
}

std::string report_to_json(const EvalReport& r, int indent) {
  nlohmann::ordered_json j;
  j["top1_total"] = r.top1.total;
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  };
  j["top1_by_group"] = {{"many", opt(r.groups.many)},
                        {"median", opt(r.groups.median)},
                        {"few", opt(r.groups.few)}};
  j["per_class_accuracy"] = r.top1.per_class_accuracy;
  j["weight_norm_stats"] = {{"mean", r.weight_norms.mean},
                            {"std", r.weight_norms.stddev},
                            {"flatness", r.weight_norms.flatness},
                            {"per_class", r.weight_norms.per_class}};
  j["train_val_gap"] = opt(r.train_val_gap);
  return j.dump(indent);
}

std::string report_to_csv(const EvalReport& r, const std::vector<std::int64_t>& train_counts,
                          const GroupSpec& spec) {
  const auto groups = assign_groups(train_counts, spec);
  std::ostringstream out;
  out << "class,train_count,group,accuracy,weight_norm\n";
  for (std::size_t i = 0; i < groups.size(); ++i) {
    out << i << ',' << train_counts[i] << ',' << to_string(groups[i]) << ','
        << format_double(r.top1.per_class_accuracy[i]) << ','
        << format_double(r.weight_norms.per_class[i]) << '\n';
  }
  return out.str();
}

}  // namespace ace::eval
