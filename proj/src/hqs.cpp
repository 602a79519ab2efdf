#include "raad/hqs.hpp"

#include "raad/errors.hpp"
#include "raad/ops.hpp"
#include "raad/train.hpp"

#include <algorithm>

namespace raad {

int BitPolicy::bits_for(double normalized) const {
  std::size_t bucket = 0;
  while (bucket < thresholds.size() && normalized >= thresholds[bucket]) ++bucket;
  return bits[bucket];
}

void BitPolicy::validate() const {
  if (bits.size() != thresholds.size() + 1) throw ConfigError("bit policy: need one more bit width than thresholds");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > 0.0 && thresholds[i] < 1.0)) throw ConfigError("bit policy: thresholds must lie in (0,1)");
    if (i && thresholds[i] <= thresholds[i - 1]) throw ConfigError("bit policy: thresholds must ascend");
  }
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (!is_supported_bits(bits[i])) throw ConfigError("bit policy: bit width not in {2,3,4,8}");
    if (i && bits[i] < bits[i - 1]) throw ConfigError("bit policy: bit widths must be nondecreasing");
  }
}

BitPolicy BitPolicy::with_forced_ends(std::size_t layers) {
  BitPolicy p;
  if (layers > 0) p.forced_layers = {1, layers};
  return p;
}

std::vector<LayerScore> layer_scores(std::span<const LayerTaps> teacher_taps, std::span<const LayerTaps> student_taps) {
  if (teacher_taps.empty() || teacher_taps.size() != student_taps.size())
    throw ContractError("layer_scores: teacher and student taps must cover the same nonempty image set");
  const std::size_t layers = teacher_taps.front().taps.size();
  std::vector<LayerScore> scores(layers);
  for (std::size_t l = 0; l < layers; ++l) scores[l].layer = l + 1;

  for (std::size_t img = 0; img < teacher_taps.size(); ++img) {
    const auto& t = teacher_taps[img].taps;
    const auto& s = student_taps[img].taps;
    if (t.size() != layers || s.size() != layers) throw ContractError("layer_scores: tap count differs between networks");
    for (std::size_t l = 0; l < layers; ++l) {
      Tensor sl = s[l];
      if (sl.shape() != t[l].shape()) {
        const bool head_split = l + 1 == layers && sl.rank() == 4 && t[l].rank() == 4 &&
                                sl.dim(1) == 2 * t[l].dim(1) && sl.dim(2) == t[l].dim(2) && sl.dim(3) == t[l].dim(3);
        if (!head_split)
          throw ContractError("layer_scores: layer " + std::to_string(l + 1) + " taps differ in shape (" +
                              shape_string(t[l].shape()) + " vs " + shape_string(sl.shape()) + ")");
        sl = slice_channels(sl, 0, t[l].dim(1));
      }
      scores[l].raw += (t[l].data() - sl.data()).squaredNorm() / static_cast<double>(t[l].numel());
    }
  }
  for (auto& sc : scores) sc.raw /= static_cast<double>(teacher_taps.size());
  return scores;
}

std::vector<LayerScore> normalize_scores(std::vector<LayerScore> scores) {
  if (scores.empty()) throw ContractError("normalize_scores: no layers");
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end(),
                                            [](const LayerScore& a, const LayerScore& b) { return a.raw < b.raw; });
  const double mn = lo->raw, mx = hi->raw;
  for (auto& s : scores) s.normalized = mx == mn ? 0.5 : (s.raw - mn) / (mx - mn);
  return scores;
}

std::vector<int> assign_bits(const std::vector<LayerScore>& scores, const BitPolicy& policy) {
  policy.validate();
  std::vector<int> bits;
  bits.reserve(scores.size());
  for (const auto& s : scores) bits.push_back(policy.forced_layers.count(s.layer) ? 8 : policy.bits_for(s.normalized));
  return bits;
}

HqsResult hqs_pipeline(const Network& teacher, const Network& student, const Network& ae,
                       std::span<const Tensor> calibration_images, const BitPolicy& policy) {
  if (student.provenance() == "init" || teacher.provenance() == "init")
    throw PipelineOrderError("hqs: networks are untrained; run stage-1 training first");
  if (calibration_images.empty()) throw ContractError("hqs: empty calibration set");
  NoGrad ng;
  std::vector<LayerTaps> t_taps, s_taps;
  for (const auto& img : calibration_images) {
    t_taps.push_back(forward_with_taps(teacher, img).second);
    s_taps.push_back(forward_with_taps(student, img).second);
  }
  HqsResult r;
  r.scores = normalize_scores(layer_scores(t_taps, s_taps));
  r.bits = assign_bits(r.scores, policy);
  r.ae_bits.assign(ae.conv_count(), 8);
  r.forced = policy.forced_layers;
  return r;
}

std::string format_hqs_report(const HqsResult& result) {
  std::string out = "layer,raw_score,normalized,bits,forced\n";
  for (std::size_t i = 0; i < result.scores.size(); ++i) {
    const auto& s = result.scores[i];
    out += std::to_string(s.layer) + "," + format_double(s.raw) + "," + format_double(s.normalized) + "," +
           std::to_string(result.bits[i]) + "," + (result.forced.count(s.layer) ? "true" : "false") + "\n";
  }
  return out;
}

}  // namespace raad
