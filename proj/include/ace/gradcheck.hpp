#ifndef ACE_GRADCHECK_HPP
#define ACE_GRADCHECK_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ace/linalg.hpp"

namespace ace::gradcheck {

inline constexpr double kStep = 1e-6;
inline constexpr double kTolerance = 1e-5;

/// Central differences of f at x, one coordinate at a time.
MatrixXd central_differences(const std::function<double(const MatrixXd&)>& f, const MatrixXd& x,
                             double step = kStep);

/// max|analytic - numeric| / max|numeric|, or the absolute error when the
/// numeric gradient is identically zero.
double relative_error(const MatrixXd& analytic, const MatrixXd& numeric);

struct FamilyResult {
  std::string name;
  double max_relative_error = 0.0;
  int worst_trial = -1;
  int trials = 0;
  bool passed() const { return max_relative_error <= kTolerance; }
};

struct Report {
  std::vector<FamilyResult> families;
  bool passed() const;
  std::string to_text() const;
  std::string to_json() const;
};

/// Runs every gradient family on `trials` random instances. Trial 0 uses a
/// single-sample batch; trial 1 uses lambda = 0 for the model family.
Report run(std::uint64_t seed, int trials);

}  // namespace ace::gradcheck

#endif  // ACE_GRADCHECK_HPP
