#pragma once

#include <limits>
#include <span>
#include <vector>

namespace hallu {

// Positive class = hallucination throughout.

// Average precision. Examples with equal scores enter the ranking as one
// group. Throws Error unless both classes are present.
double auc_pr(std::span<const double> scores, const std::vector<bool>& labels);

struct PRCurvePoint {
  double threshold = 0.0;  // predict positive iff score >= threshold
  double precision = 0.0;
  double recall = 0.0;
};

// One point per distinct score in increasing order, preceded by the
// threshold -inf endpoint (recall 1, precision = prevalence).
std::vector<PRCurvePoint> pr_curve(std::span<const double> scores, const std::vector<bool>& labels);

double accuracy(std::span<const double> scores, const std::vector<bool>& labels,
                double threshold = 0.5);

double prevalence(const std::vector<bool>& labels);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

inline constexpr double kMinusInfinity = -std::numeric_limits<double>::infinity();

}  // namespace hallu
