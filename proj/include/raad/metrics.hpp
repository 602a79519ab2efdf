#pragma once

#include "raad/types.hpp"

#include <span>
#include <vector>

namespace raad {

struct ScoredSample {
  double score = 0.0;
  Label label = Label::normal;
};

/// Mann-Whitney AUROC; tied pairs count one half.
/// Throws UndefinedMetricError unless both labels are present.
double auroc(std::span<const ScoredSample> samples);

/// Mean precision at each anomalous sample's rank under a descending score
/// sort in which tied anomalous samples are placed after tied normals.
double average_precision(std::span<const ScoredSample> samples);

/// Component labels 1..n of the set pixels, 0 elsewhere, in raster order
/// of first appearance. `connectivity` is 4 or 8.
std::vector<int> connected_components(const Mask& mask, int connectivity, int* count = nullptr);

struct ProPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double overlap = 0.0;
};

/// (0,0) followed by one point per threshold, thresholds descending, so fpr
/// is nondecreasing.
struct ProCurve {
  std::vector<ProPoint> points;
};

/// Maximum number of thresholds in a PRO sweep; above it thresholds are
/// quantile-spaced over the unique map values.
inline constexpr std::size_t kMaxProThresholds = 512;

/// Pixels with value >= threshold are predicted anomalous. Regions are the
/// connected components of every mask; fpr is over all unset mask pixels.
ProCurve pro_curve(std::span<const Heatmap> maps, std::span<const Mask> masks, int connectivity = 4);

/// Trapezoidal area under overlap(fpr) on [0, fpr_limit], with the last
/// segment interpolated at the limit, divided by fpr_limit.
double integrate_pro(const ProCurve& curve, double fpr_limit);

double au_pro(std::span<const Heatmap> maps, std::span<const Mask> masks, double fpr_limit = 0.3,
              int connectivity = 4);

}  // namespace raad
