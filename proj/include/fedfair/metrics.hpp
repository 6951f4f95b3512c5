#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedfair/common.hpp"
#include "fedfair/example.hpp"

namespace fedfair {

// One test example's outcome: true label, predicted label, group.
struct EvalRecord {
  int label = 0;
  int predicted = 0;
  int group = 1;
};

// Per-(client, timestep) output row. Ratio metrics are nullopt when
// undefined (e.g. a group absent from the batch).
struct MetricsRecord {
  int client = 0;
  int timestep = 0;
  int model_id = 0;
  ConceptId true_concept = ConceptId::A;
  int n_models = 1;
  double accuracy = 0.0;
  std::optional<double> aeq;
  std::optional<double> oeq;
  std::optional<double> opp;
  double loss = 0.0;
  std::map<int, double> group_losses;
  double disparity = 0.0;
};

inline double accuracy(std::span<const EvalRecord> recs) {
  if (recs.empty()) throw EmptyInputError("accuracy: empty records");
  std::size_t correct = 0;
  for (const auto &r : recs) correct += (r.predicted == r.label);
  return static_cast<double>(correct) / static_cast<double>(recs.size());
}

namespace detail {

// min/max ratio with the lowest value as numerator; nullopt when the max
// is zero (both values zero).
inline std::optional<double> lowest_over_highest(double a, double b) {
  double hi = std::max(a, b);
  if (hi <= 0.0) return std::nullopt;
  return std::min(a, b) / hi;
}

struct GroupClassCounts {
  // [group][class]
  std::array<std::vector<double>, 2> truth_count{};
  std::array<std::vector<double>, 2> pred_count{};
  std::array<std::vector<double>, 2> correct_count{};
  std::array<bool, 2> present{false, false};
  int num_classes = 0;
};

inline GroupClassCounts tally(std::span<const EvalRecord> recs) {
  GroupClassCounts gc;
  for (const auto &r : recs) {
    gc.num_classes = std::max({gc.num_classes, r.label + 1, r.predicted + 1});
  }
  for (int g = 0; g < 2; ++g) {
    gc.truth_count[g].assign(gc.num_classes, 0.0);
    gc.pred_count[g].assign(gc.num_classes, 0.0);
    gc.correct_count[g].assign(gc.num_classes, 0.0);
  }
  for (const auto &r : recs) {
    if (r.group != 0 && r.group != 1) continue;
    gc.present[r.group] = true;
    gc.truth_count[r.group][r.label] += 1.0;
    gc.pred_count[r.group][r.predicted] += 1.0;
    if (r.predicted == r.label) gc.correct_count[r.group][r.label] += 1.0;
  }
  return gc;
}

// Shared OEQ/OPP skeleton: `denom` selects the conditioning count
// (true instances for TPR, predicted instances for PPV).
inline std::optional<double> rate_ratio_metric(
    const GroupClassCounts &gc,
    const std::array<std::vector<double>, 2> &denom, bool overlapping) {
  if (!gc.present[0] || !gc.present[1]) return std::nullopt;
  if (overlapping) {
    double sum = 0.0;
    int qualifying = 0;
    for (int c = 0; c < gc.num_classes; ++c) {
      if (denom[0][c] <= 0.0 || denom[1][c] <= 0.0) continue;
      double r0 = gc.correct_count[0][c] / denom[0][c];
      double r1 = gc.correct_count[1][c] / denom[1][c];
      auto ratio = lowest_over_highest(r0, r1);
      if (!ratio) continue;
      sum += *ratio;
      ++qualifying;
    }
    if (qualifying == 0) return std::nullopt;
    return sum / qualifying;
  }
  // Non-overlapping class sets: ratio of the groups' mean rates, each mean
  // taken over the classes where that group's rate is defined.
  double mean[2];
  for (int g = 0; g < 2; ++g) {
    double sum = 0.0;
    int n = 0;
    for (int c = 0; c < gc.num_classes; ++c) {
      if (denom[g][c] <= 0.0) continue;
      sum += gc.correct_count[g][c] / denom[g][c];
      ++n;
    }
    if (n == 0) return std::nullopt;
    mean[g] = sum / n;
  }
  return lowest_over_highest(mean[0], mean[1]);
}

}  // namespace detail

// Accuracy Equality: ratio of the two groups' accuracies, lowest over
// highest. Undefined if either group is absent or both accuracies are 0.
inline std::optional<double> aeq(std::span<const EvalRecord> recs) {
  double correct[2] = {0.0, 0.0};
  double total[2] = {0.0, 0.0};
  for (const auto &r : recs) {
    if (r.group != 0 && r.group != 1) continue;
    total[r.group] += 1.0;
    if (r.predicted == r.label) correct[r.group] += 1.0;
  }
  if (total[0] <= 0.0 || total[1] <= 0.0) return std::nullopt;
  return detail::lowest_over_highest(correct[0] / total[0],
                                     correct[1] / total[1]);
}

// Overall Equality of Opportunity: per-class TPR ratios (lowest over
// highest) averaged over classes where both groups' TPRs are defined; in
// non-overlapping mode, the ratio of the groups' mean TPRs.
inline std::optional<double> oeq(std::span<const EvalRecord> recs,
                                 bool overlapping = true) {
  auto gc = detail::tally(recs);
  return detail::rate_ratio_metric(gc, gc.truth_count, overlapping);
}

// Overall Predictive Parity: as oeq with PPV replacing TPR; classes
// qualify by nonzero prediction counts.
inline std::optional<double> opp(std::span<const EvalRecord> recs,
                                 bool overlapping = true) {
  auto gc = detail::tally(recs);
  return detail::rate_ratio_metric(gc, gc.pred_count, overlapping);
}

// Worst-case disparity: max pairwise |loss_s - loss_s'| = max - min.
inline double disparity(const std::map<int, double> &losses_by_group) {
  if (losses_by_group.empty()) {
    throw EmptyInputError("disparity: no group losses");
  }
  double lo = kInf, hi = -kInf;
  for (const auto &[group, value] : losses_by_group) {
    lo = std::min(lo, value);
    hi = std::max(hi, value);
  }
  return hi - lo;
}

}  // namespace fedfair
