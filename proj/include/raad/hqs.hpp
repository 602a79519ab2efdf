#pragma once

#include "raad/models.hpp"

#include <set>
#include <span>
#include <string>
#include <vector>

namespace raad {

struct LayerScore {
  std::size_t layer = 0;  // 1-based
  double raw = 0.0;
  double normalized = 0.0;
};

/// Monotone step function from normalized score to bit width.
struct BitPolicy {
  std::vector<double> thresholds{0.25, 0.5, 0.75};
  std::vector<int> bits{2, 3, 4, 8};
  std::set<std::size_t> forced_layers;  // 1-based layers pinned to 8 bits

  /// Bits for a normalized score; each bucket is closed on the left.
  int bits_for(double normalized) const;
  void validate() const;

  /// Default policy with the first and last of `layers` forced to 8.
  static BitPolicy with_forced_ends(std::size_t layers);
};

/// Per-layer mean of (cwh)^-1 sum_c ||T_c - S_c||_F^2 over calibration
/// images. At the final layer a student with twice the teacher's channels
/// is compared through its first (teacher-matching) half.
std::vector<LayerScore> layer_scores(std::span<const LayerTaps> teacher_taps, std::span<const LayerTaps> student_taps);

/// Min-max normalization across layers; all-equal raw scores map to 0.5.
std::vector<LayerScore> normalize_scores(std::vector<LayerScore> scores);

std::vector<int> assign_bits(const std::vector<LayerScore>& scores, const BitPolicy& policy);

struct HqsResult {
  std::vector<LayerScore> scores;
  std::vector<int> bits;          // shared by teacher and student
  std::vector<int> ae_bits;       // autoencoder, fixed at 8
  std::set<std::size_t> forced;   // 1-based
};

/// Scores the trained teacher/student pair on the calibration images and
/// maps the scores to per-layer bit widths.
HqsResult hqs_pipeline(const Network& teacher, const Network& student, const Network& ae,
                       std::span<const Tensor> calibration_images, const BitPolicy& policy);

/// `layer,raw_score,normalized,bits,forced(bool)`
std::string format_hqs_report(const HqsResult& result);

}  // namespace raad
