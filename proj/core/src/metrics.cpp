#include "hallu/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "hallu/common.hpp"

namespace hallu {

namespace {

void check_sizes(std::size_t a, std::size_t b) {
  if (a != b) throw Error(fmt::format("{} scores but {} labels", a, b));
}

std::vector<std::size_t> by_score_desc(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

double prevalence(const std::vector<bool>& labels) {
  if (labels.empty()) return 0.0;
  const auto pos = std::count(labels.begin(), labels.end(), true);
  return static_cast<double>(pos) / static_cast<double>(labels.size());
}

double auc_pr(std::span<const double> scores, const std::vector<bool>& labels) {
  check_sizes(scores.size(), labels.size());
  const auto total_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
  if (total_pos == 0 || total_pos == labels.size()) {
    throw Error("auc_pr needs at least one positive and one negative label");
  }
  for (double s : scores) {
    if (std::isnan(s)) throw NumericalError("auc_pr: NaN score");
  }
  const auto order = by_score_desc(scores);
  std::size_t tp = 0, seen = 0;
  double ap = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i, group_pos = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      group_pos += labels[order[j]] ? 1 : 0;
      ++j;
    }
    tp += group_pos;
    seen += j - i;
    if (group_pos > 0) {
      ap += static_cast<double>(group_pos) / static_cast<double>(total_pos) *
            (static_cast<double>(tp) / static_cast<double>(seen));
    }
    i = j;
  }
  return ap;
}

std::vector<PRCurvePoint> pr_curve(std::span<const double> scores, const std::vector<bool>& labels) {
  check_sizes(scores.size(), labels.size());
  const auto total_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
  if (total_pos == 0) throw Error("pr_curve needs at least one positive label");
  std::vector<PRCurvePoint> out;
  out.push_back({kMinusInfinity, prevalence(labels), 1.0});

  // Walk thresholds from the highest score down, then reverse.
  const auto order = by_score_desc(scores);
  std::vector<PRCurvePoint> desc;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      tp += labels[order[j]] ? 1 : 0;
      ++j;
    }
    seen += j - i;
    desc.push_back({scores[order[i]], static_cast<double>(tp) / static_cast<double>(seen),
                    static_cast<double>(tp) / static_cast<double>(total_pos)});
    i = j;
  }
  out.insert(out.end(), desc.rbegin(), desc.rend());
  return out;
}

double accuracy(std::span<const double> scores, const std::vector<bool>& labels, double threshold) {
  check_sizes(scores.size(), labels.size());
  if (scores.empty()) throw Error("accuracy of an empty set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    correct += ((scores[i] >= threshold) == labels[i]) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j - 1) + 1.0;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
    i = j;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  check_sizes(x.size(), y.size());
  if (x.size() < 2) throw Error("spearman needs at least two points");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw Error("spearman undefined for a constant series");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace hallu
