#include "ace/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "ace/error.hpp"
#include "ace/eval.hpp"
#include "ace/format.hpp"
#include "ace/rng.hpp"

namespace ace::data {

namespace {

constexpr std::int64_t kMaxSamples = 50'000'000;

VectorXd gaussian_vector(Eigen::Index d, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  VectorXd v(d);
  for (Eigen::Index i = 0; i < d; ++i) v(i) = n01(rng);
  return v;
}

// Removes the components of v along each (unit) basis vector, twice for
// numerical stability.
void orthogonalize(VectorXd& v, const std::vector<VectorXd>& basis) {
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& b : basis) v -= b.dot(v) * b;
  }
}

}  // namespace

std::pair<MatrixXd, std::vector<int>> Dataset::gather(const std::vector<Eigen::Index>& rows) const {
  MatrixXd x(static_cast<Eigen::Index>(rows.size()), features.cols());
  std::vector<int> y(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    x.row(static_cast<Eigen::Index>(k)) = features.row(rows[k]);
    y[k] = labels[static_cast<std::size_t>(rows[k])];
  }
  return {std::move(x), std::move(y)};
}

void recount(Dataset& ds) {
  ds.class_counts.assign(static_cast<std::size_t>(ds.num_classes), 0);
  for (int y : ds.labels) {
    if (y < 0 || y >= ds.num_classes) {
      throw ValidationError("label " + std::to_string(y) + " outside [0, " +
                            std::to_string(ds.num_classes) + ")");
    }
    ++ds.class_counts[static_cast<std::size_t>(y)];
  }
}

void validate(const SyntheticSpec& s) {
  if (s.num_classes < 2) throw ValidationError("synthetic spec: need at least 2 classes");
  if (s.num_meta < 1 || s.num_meta > s.num_classes) {
    throw ValidationError("synthetic spec: meta-category count must be in [1, classes]");
  }
  if (s.feature_dim < 1) throw ValidationError("synthetic spec: feature_dim must be >= 1");
  if (!(s.fine_grained_scale > 0.0) || !std::isfinite(s.fine_grained_scale)) {
    throw ValidationError("synthetic spec: delta must be positive");
  }
  if (!(s.imbalance_ratio >= 1.0) || !std::isfinite(s.imbalance_ratio)) {
    throw ValidationError("synthetic spec: imbalance ratio must be >= 1");
  }
  if (s.max_count < 1) throw ValidationError("synthetic spec: max_count must be >= 1");
  if (!(s.noise_std > 0.0) || !std::isfinite(s.noise_std)) {
    throw ValidationError("synthetic spec: noise_std must be positive");
  }
  if (s.test_per_class < 1) throw ValidationError("synthetic spec: test_per_class must be >= 1");
  const std::int64_t total =
      static_cast<std::int64_t>(s.max_count + s.test_per_class) * s.num_classes;
  if (total * s.feature_dim > kMaxSamples * 8) {
    throw ValidationError("synthetic spec: requested dataset is too large to generate");
  }
}

std::vector<std::int64_t> long_tail_counts(int num_classes, int max_count, double ratio) {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(num_classes));
  for (int i = 0; i < num_classes; ++i) {
    const double e = num_classes > 1 ? -static_cast<double>(i) / (num_classes - 1) : 0.0;
    const double n = std::round(static_cast<double>(max_count) * std::pow(ratio, e));
    counts[static_cast<std::size_t>(i)] = std::max<std::int64_t>(1, static_cast<std::int64_t>(n));
  }
  return counts;
}

MatrixXd class_means(const SyntheticSpec& spec) {
  validate(spec);
  const Eigen::Index d = spec.feature_dim;
  const int c = spec.num_classes;
  const int k = spec.num_meta;

  Rng center_rng = make_stream(spec.seed, "data.centers");
  std::vector<VectorXd> centers;
  for (int j = 0; j < k; ++j) {
    VectorXd v = gaussian_vector(d, center_rng);
    const double n = v.norm();
    centers.push_back(n > 0.0 ? VectorXd(v / n) : VectorXd(VectorXd::Unit(d, 0)));
  }

  // Orthonormal basis of the center span, used when there is room for
  // offsets orthogonal to every center.
  const bool full_room = d >= static_cast<Eigen::Index>(k + c);
  std::vector<VectorXd> basis;
  if (full_room) {
    for (const auto& ctr : centers) {
      VectorXd v = ctr;
      orthogonalize(v, basis);
      if (v.norm() > 1e-10) basis.push_back(v / v.norm());
    }
  }

  Rng offset_rng = make_stream(spec.seed, "data.offsets");
  MatrixXd means(c, d);
  for (int i = 0; i < c; ++i) {
    const VectorXd& ctr = centers[static_cast<std::size_t>(i % k)];
    VectorXd u = gaussian_vector(d, offset_rng);
    if (full_room) {
      orthogonalize(u, basis);
    } else if (d >= 2) {
      u -= ctr.dot(u) * ctr;
    }
    double n = u.norm();
    if (!(n > 1e-12)) {
      u = VectorXd::Unit(d, static_cast<Eigen::Index>(i) % d);
      n = 1.0;
    }
    u /= n;
    if (full_room) basis.push_back(u);
    means.row(i) = (ctr + spec.fine_grained_scale * u).transpose();
  }
  return means;
}

std::pair<Dataset, Dataset> generate(const SyntheticSpec& spec) {
  const MatrixXd means = class_means(spec);
  const auto counts = long_tail_counts(spec.num_classes, spec.max_count, spec.imbalance_ratio);
  const Eigen::Index d = spec.feature_dim;

  auto draw = [&](const std::vector<std::int64_t>& per_class, Split split, const char* stream) {
    Rng rng = make_stream(spec.seed, stream);
    std::normal_distribution<double> noise(0.0, spec.noise_std);
    const std::int64_t n = std::accumulate(per_class.begin(), per_class.end(), std::int64_t{0});
    Dataset ds;
    ds.split = split;
    ds.num_classes = spec.num_classes;
    ds.features.resize(n, d);
    ds.labels.reserve(static_cast<std::size_t>(n));
    Eigen::Index row = 0;
    for (int i = 0; i < spec.num_classes; ++i) {
      for (std::int64_t s = 0; s < per_class[static_cast<std::size_t>(i)]; ++s, ++row) {
        for (Eigen::Index j = 0; j < d; ++j) ds.features(row, j) = means(i, j) + noise(rng);
        ds.labels.push_back(i);
      }
    }
    recount(ds);
    return ds;
  };

  std::vector<std::int64_t> test_counts(static_cast<std::size_t>(spec.num_classes),
                                        spec.test_per_class);
  return {draw(counts, Split::train, "data.train"), draw(test_counts, Split::test, "data.test")};
}

DatasetStats compute_stats(const Dataset& ds) {
  if (ds.size() == 0) throw ValidationError("dataset is empty");
  if (ds.num_classes < 2) throw ValidationError("dataset needs at least 2 classes");
  const Eigen::Index d = ds.feature_dim();
  MatrixXd sums = MatrixXd::Zero(ds.num_classes, d);
  std::vector<std::int64_t> counts(static_cast<std::size_t>(ds.num_classes), 0);
  for (Eigen::Index r = 0; r < ds.size(); ++r) {
    const int y = ds.labels[static_cast<std::size_t>(r)];
    sums.row(y) += ds.features.row(r);
    ++counts[static_cast<std::size_t>(y)];
  }

  DatasetStats st;
  st.per_class_counts = counts;
  for (int i = 0; i < ds.num_classes; ++i) {
    if (counts[static_cast<std::size_t>(i)] == 0) {
      throw ValidationError("class " + std::to_string(i) + " has no samples");
    }
  }
  const auto [mn, mx] = std::minmax_element(counts.begin(), counts.end());
  st.imbalance_ratio = static_cast<double>(*mx) / static_cast<double>(*mn);

  MatrixXd unit(ds.num_classes, d);
  for (int i = 0; i < ds.num_classes; ++i) {
    const VectorXd mean = sums.row(i).transpose() / static_cast<double>(counts[static_cast<std::size_t>(i)]);
    const double n = mean.norm();
    if (!(n > 0.0)) {
      throw ValidationError("degenerate geometry: class " + std::to_string(i) +
                            " has a zero feature mean");
    }
    unit.row(i) = mean.transpose() / n;
  }
  double total = 0.0;
  std::int64_t pairs = 0;
  for (int i = 0; i < ds.num_classes; ++i) {
    for (int j = i + 1; j < ds.num_classes; ++j) {
      total += std::clamp(unit.row(i).dot(unit.row(j)), -1.0, 1.0);
      ++pairs;
    }
  }
  st.fine_grained_factor = total / static_cast<double>(pairs);

  const auto groups = eval::assign_groups(counts, eval::GroupSpec::percentile());
  st.group_thresholds.many_min = std::numeric_limits<std::int64_t>::max();
  st.group_thresholds.few_max = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (groups[i] == eval::Group::many) {
      st.group_thresholds.many_min = std::min(st.group_thresholds.many_min, counts[i]);
    } else if (groups[i] == eval::Group::few) {
      st.group_thresholds.few_max = std::max(st.group_thresholds.few_max, counts[i]);
    }
  }
  if (st.group_thresholds.many_min == std::numeric_limits<std::int64_t>::max()) {
    st.group_thresholds.many_min = 0;
  }
  return st;
}

std::string stats_to_json(const DatasetStats& stats, int indent) {
  nlohmann::ordered_json j;
  j["imbalance_ratio"] = stats.imbalance_ratio;
  j["fine_grained_factor"] = stats.fine_grained_factor;
  j["fine_grained_factor_definition"] =
      "mean pairwise cosine similarity of raw per-class feature means";
  j["per_class_counts"] = stats.per_class_counts;
  j["group_thresholds"] = {{"many_min_count", stats.group_thresholds.many_min},
                           {"few_max_count", stats.group_thresholds.few_max}};
  return j.dump(indent);
}

Dataset load_csv(const std::string& path, int num_classes, Split split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read dataset " + path);

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ValidationError("dataset " + path + " is empty");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) header.emplace_back(trim(tok));
  }
  if (header.size() < 2 || header[0] != "label") {
    throw ParseError("header must be label,f0,f1,...", line_no);
  }
  for (std::size_t j = 1; j < header.size(); ++j) {
    if (header[j] != "f" + std::to_string(j - 1)) {
      throw ParseError("unexpected header column '" + header[j] + "'", line_no);
    }
  }
  const std::size_t d = header.size() - 1;

  std::vector<double> values;
  std::vector<int> labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    std::size_t field = 0;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      const std::string_view tok =
          trim(std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos
                                                                               : comma - start));
      if (field == 0) {
        auto y = parse_int<int>(tok);
        if (!y || *y < 0) throw ParseError("bad label '" + std::string(tok) + "'", line_no);
        labels.push_back(*y);
      } else {
        auto v = parse_double(tok);
        if (!v || !std::isfinite(*v)) {
          throw ParseError("non-numeric feature '" + std::string(tok) + "'", line_no);
        }
        values.push_back(*v);
      }
      ++field;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (field != d + 1) {
      throw ParseError("expected " + std::to_string(d + 1) + " fields, got " +
                           std::to_string(field),
                       line_no);
    }
  }
  if (labels.empty()) throw ValidationError("dataset " + path + " has no rows");

  Dataset ds;
  ds.split = split;
  const int max_label = *std::max_element(labels.begin(), labels.end());
  if (num_classes == 0) {
    ds.num_classes = max_label + 1;
  } else if (max_label >= num_classes) {
    throw ValidationError("dataset " + path + " has label " + std::to_string(max_label) +
                          " but only " + std::to_string(num_classes) + " classes");
  } else {
    ds.num_classes = num_classes;
  }
  ds.features = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(d));
  ds.labels = std::move(labels);
  recount(ds);
  return ds;
}

void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset " + path);
  out << "label";
  for (Eigen::Index j = 0; j < ds.feature_dim(); ++j) out << ",f" << j;
  out << '\n';
  for (Eigen::Index r = 0; r < ds.size(); ++r) {
    out << ds.labels[static_cast<std::size_t>(r)];
    for (Eigen::Index j = 0; j < ds.feature_dim(); ++j) out << ',' << format_double(ds.features(r, j));
    out << '\n';
  }
  if (!out) throw IoError("failed writing dataset " + path);
}

}  // namespace ace::data
