#pragma once

#include "raad/models.hpp"
#include "raad/quant_scheme.hpp"
#include "raad/tensor.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace raad {

/// Contiguous run of conv layers [first, last] (0-based conv ordinals)
/// reconstructed together.
struct QuantBlock {
  std::size_t first = 0;
  std::size_t last = 0;
};

/// Full-precision calibration data, per conv layer and per image: the conv
/// input, the conv output z (before activation), and dL/dz.
struct CalibrationCache {
  std::vector<std::vector<Tensor>> inputs;
  std::vector<std::vector<Tensor>> outputs;
  std::vector<std::vector<Tensor>> grads;

  std::size_t layer_count() const { return outputs.size(); }
  std::size_t image_count() const { return outputs.empty() ? 0 : outputs.front().size(); }
  bool covers(const QuantBlock& block) const;
};

/// Scalar loss of a network output for calibration image `index`.
using CalibrationLoss = std::function<Tensor(const Tensor& output, std::size_t index)>;

/// Runs `net` (which must carry no fake-quant) over the images and records
/// inputs, outputs and loss gradients of every conv layer.
CalibrationCache build_calibration_cache(const Network& net, std::span<const Tensor> images,
                                         const CalibrationLoss& loss);

/// Candidate scale multipliers: 100 values (20 + i) / 100, i = 1..100, i.e.
/// linearly spaced over (0.2, 1.2] with 1.0 included exactly.
const std::vector<double>& scale_candidates();

/// Scale(s) minimizing mean squared quantize-dequantize error over the
/// candidate grid times max|x| / qmax. All-zero input (or channel) yields 1.
std::vector<double> calibrate_scale(const Tensor& x, int bits, Granularity granularity);

/// Mean over calibration images of g^2, for the block's output.
Tensor fisher_diagonal(const CalibrationCache& cache, const QuantBlock& block);

/// Mean over images of sum_i g_i^2 (dz_i)^2 where dz is the block output
/// with weights replaced by their quantized images minus the cached z.
/// `schemes` holds one weight scheme per conv in the block.
double block_reconstruction_error(const Network& net, const QuantBlock& block, const CalibrationCache& cache,
                                  std::span<const QuantScheme> schemes);

struct BlockQuantization {
  std::vector<QuantScheme> schemes;   // per conv in block
  std::vector<Tensor> snapped;        // quantize-dequantized weights
  double error_before = 0.0;          // with the max|w|/qmax scale
  double error_after = 0.0;
  std::vector<double> sweep_objective;  // objective after each sweep
};

/// Per-output-channel symmetric weight scheme with scale max|w_c| / qmax.
QuantScheme minmax_weight_scheme(const Tensor& weight, int bits);

/// Chooses each layer's per-channel scales from the candidate grid by
/// coordinate descent (2 sweeps) on block_reconstruction_error.
BlockQuantization quantize_block(const Network& net, const QuantBlock& block, const CalibrationCache& cache,
                                 std::span<const int> bits_per_layer, std::size_t sweeps = 2);

enum class WeightCalibration { fisher_block, minmax };

struct LayerQuantReport {
  std::size_t layer = 0;  // 1-based
  int bits = 8;
  double scale_min = 0, scale_mean = 0, scale_max = 0;
  double error_before = 0, error_after = 0;
};

struct QuantizedNetwork {
  Network net;
  std::vector<int> bits;
  std::vector<LayerQuantReport> report;
};

/// Forces the first and last entries to 8 and rejects widths outside {2,3,4,8}.
std::vector<int> enforce_bit_policy(std::span<const int> bits, std::size_t layer_count);

/// One block per conv layer. Weights are snapped per output channel; an
/// asymmetric per-tensor activation fake-quant is calibrated on each conv
/// tap (layers after the first bilinear upsampling are left unquantized).
QuantizedNetwork quantize_network(const Network& net, const CalibrationCache& cache, std::span<const int> bits,
                                  std::span<const Tensor> calibration_images,
                                  WeightCalibration mode = WeightCalibration::fisher_block);

/// `layer,bits,scale_stats(min/mean/max),block_error_before,block_error_after`
std::string format_quant_report(const std::vector<LayerQuantReport>& report);

}  // namespace raad
