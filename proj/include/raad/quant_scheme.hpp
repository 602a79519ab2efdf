#pragma once

#include "raad/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace raad {

enum class Granularity { per_tensor, per_output_channel };
enum class QuantTarget { weights, activations };

/// Uniform affine quantizer parameters for one tensor.
///
/// Weights are symmetric (zero_point 0, levels [-2^(b-1), 2^(b-1)-1]);
/// activations are asymmetric (levels [0, 2^b - 1]).
struct QuantScheme {
  int bits = 8;
  std::vector<double> scales{1.0};  // one entry, or one per output channel
  std::int64_t zero_point = 0;
  Granularity granularity = Granularity::per_tensor;
  QuantTarget target = QuantTarget::weights;

  double qmin() const;
  double qmax() const;
  void validate() const;
};

bool is_supported_bits(int bits);

/// Largest positive level for symmetric weight quantization.
inline double symmetric_qmax(int bits) { return std::ldexp(1.0, bits - 1) - 1.0; }

/// round(x / scale) + zero_point, clamped to [qmin, qmax], mapped back.
template <typename S>
inline S fake_quant(S x, S scale, S zero_point, S qmin, S qmax) {
  S q = std::nearbyint(x / scale) + zero_point;
  q = q < qmin ? qmin : (q > qmax ? qmax : q);
  return (q - zero_point) * scale;
}

/// Quantize-dequantize. Per-output-channel schemes slice along axis 0.
/// When recording, the gradient is passed straight through inside the
/// representable range and zeroed where the value clamps.
Tensor quantize_dequantize(const Tensor& x, const QuantScheme& scheme);

/// Asymmetric per-tensor activation scheme covering [lo, hi] (always
/// widened to include 0 so that zero is exactly representable).
QuantScheme activation_scheme_from_range(double lo, double hi, int bits);

}  // namespace raad
