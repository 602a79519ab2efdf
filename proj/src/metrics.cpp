#include "raad/metrics.hpp"

#include "raad/errors.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace raad {

namespace {

void count_labels(std::span<const ScoredSample> samples, std::size_t& pos, std::size_t& neg) {
  pos = neg = 0;
  for (const auto& s : samples) {
    if (!std::isfinite(s.score)) throw NumericError("metrics: non-finite score");
    (s.label == Label::anomalous ? pos : neg)++;
  }
}

}  // namespace

double auroc(std::span<const ScoredSample> samples) {
  std::size_t pos, neg;
  count_labels(samples, pos, neg);
  if (pos == 0 || neg == 0) throw UndefinedMetricError("auroc: need at least one sample of each label");
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return samples[a].score < samples[b].score; });

  // U statistic counted in integer halves so the result is exact.
  long long wins2 = 0;
  std::size_t below_neg = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i, tie_pos = 0, tie_neg = 0;
    while (j < order.size() && samples[order[j]].score == samples[order[i]].score) {
      (samples[order[j]].label == Label::anomalous ? tie_pos : tie_neg)++;
      ++j;
    }
    wins2 += static_cast<long long>(tie_pos) * static_cast<long long>(2 * below_neg + tie_neg);
    below_neg += tie_neg;
    i = j;
  }
  return static_cast<double>(wins2) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

double average_precision(std::span<const ScoredSample> samples) {
  std::size_t pos, neg;
  count_labels(samples, pos, neg);
  if (pos == 0) throw UndefinedMetricError("average_precision: no anomalous samples");
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (samples[a].score != samples[b].score) return samples[a].score > samples[b].score;
    return samples[a].label == Label::normal && samples[b].label == Label::anomalous;
  });
  double total = 0.0;
  std::size_t tp = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (samples[order[r]].label != Label::anomalous) continue;
    ++tp;
    total += static_cast<double>(tp) / static_cast<double>(r + 1);
  }
  return total / static_cast<double>(pos);
}

std::vector<int> connected_components(const Mask& mask, int connectivity, int* count) {
  if (connectivity != 4 && connectivity != 8) throw ParameterError("connected_components: connectivity must be 4 or 8");
  const Eigen::Index h = mask.rows(), w = mask.cols();
  std::vector<int> label(static_cast<std::size_t>(h * w), 0);
  int next = 0;
  std::vector<Eigen::Index> stack;
  for (Eigen::Index start = 0; start < h * w; ++start) {
    if (!mask.data()[start] || label[static_cast<std::size_t>(start)]) continue;
    ++next;
    label[static_cast<std::size_t>(start)] = next;
    stack.assign(1, start);
    while (!stack.empty()) {
      const Eigen::Index p = stack.back();
      stack.pop_back();
      const Eigen::Index y = p / w, x = p % w;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if ((dy == 0 && dx == 0) || (connectivity == 4 && dy != 0 && dx != 0)) continue;
          const Eigen::Index ny = y + dy, nx = x + dx;
          if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
          const Eigen::Index q = ny * w + nx;
          if (mask.data()[q] && !label[static_cast<std::size_t>(q)]) {
            label[static_cast<std::size_t>(q)] = next;
            stack.push_back(q);
          }
        }
    }
  }
  if (count) *count = next;
  return label;
}

ProCurve pro_curve(std::span<const Heatmap> maps, std::span<const Mask> masks, int connectivity) {
  if (maps.size() != masks.size()) throw DimensionError("pro_curve: map and mask counts differ");

  struct Pixel {
    double value;
    int region;  // -1 for normal pixels
  };
  std::vector<Pixel> pixels;
  std::vector<double> region_size;
  std::size_t normal_pixels = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i].rows() != masks[i].rows() || maps[i].cols() != masks[i].cols())
      throw DimensionError("pro_curve: map " + std::to_string(i) + " and its mask differ in extent");
    int n = 0;
    const auto labels = connected_components(masks[i], connectivity, &n);
    const int base = static_cast<int>(region_size.size());
    region_size.resize(region_size.size() + static_cast<std::size_t>(n), 0.0);
    for (Eigen::Index p = 0; p < maps[i].size(); ++p) {
      const double v = maps[i].data()[p];
      if (!std::isfinite(v)) throw NumericError("pro_curve: non-finite map value in map " + std::to_string(i));
      const int l = labels[static_cast<std::size_t>(p)];
      if (l) {
        region_size[static_cast<std::size_t>(base + l - 1)] += 1.0;
        pixels.push_back({v, base + l - 1});
      } else {
        ++normal_pixels;
        pixels.push_back({v, -1});
      }
    }
  }
  if (region_size.empty()) throw UndefinedMetricError("au_pro: no anomalous pixels in any mask");
  if (normal_pixels == 0) throw UndefinedMetricError("au_pro: no normal pixels, false positive rate undefined");

  std::sort(pixels.begin(), pixels.end(), [](const Pixel& a, const Pixel& b) { return a.value > b.value; });

  std::vector<double> unique;
  for (const auto& p : pixels)
    if (unique.empty() || unique.back() != p.value) unique.push_back(p.value);
  std::vector<double> thresholds;  // descending
  if (unique.size() <= kMaxProThresholds) {
    thresholds = unique;
  } else {
    const std::size_t u = unique.size(), m = kMaxProThresholds;
    for (std::size_t i = 0; i < m; ++i) thresholds.push_back(unique[(i * (u - 1) + (m - 1) / 2) / (m - 1)]);
    thresholds.back() = unique.back();
  }

  ProCurve curve;
  curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::vector<double> hit(region_size.size(), 0.0);
  double overlap_sum = 0.0;
  std::size_t fp = 0, cursor = 0;
  const double regions = static_cast<double>(region_size.size());
  for (double t : thresholds) {
    while (cursor < pixels.size() && pixels[cursor].value >= t) {
      const int r = pixels[cursor].region;
      if (r < 0) {
        ++fp;
      } else {
        hit[static_cast<std::size_t>(r)] += 1.0;
        overlap_sum += 1.0 / region_size[static_cast<std::size_t>(r)];
      }
      ++cursor;
    }
    curve.points.push_back({t, static_cast<double>(fp) / static_cast<double>(normal_pixels),
                            std::min(1.0, overlap_sum / regions)});
  }
  return curve;
}

double integrate_pro(const ProCurve& curve, double fpr_limit) {
  if (!(fpr_limit > 0.0 && fpr_limit <= 1.0)) throw ParameterError("au_pro: fpr_limit must lie in (0,1]");
  const auto& p = curve.points;
  double area = 0.0;
  for (std::size_t i = 1; i < p.size(); ++i) {
    const double x0 = p[i - 1].fpr, x1 = p[i].fpr;
    if (x0 >= fpr_limit) break;
    const double y0 = p[i - 1].overlap, y1 = p[i].overlap;
    if (x1 <= fpr_limit) {
      area += 0.5 * (x1 - x0) * (y0 + y1);
    } else {
      const double y_lim = y0 + (y1 - y0) * (fpr_limit - x0) / (x1 - x0);
      area += 0.5 * (fpr_limit - x0) * (y0 + y_lim);
      break;
    }
  }
  return area / fpr_limit;
}

double au_pro(std::span<const Heatmap> maps, std::span<const Mask> masks, double fpr_limit, int connectivity) {
  if (!(fpr_limit > 0.0 && fpr_limit <= 1.0)) throw ParameterError("au_pro: fpr_limit must lie in (0,1]");
  return integrate_pro(pro_curve(maps, masks, connectivity), fpr_limit);
}

}  // namespace raad
