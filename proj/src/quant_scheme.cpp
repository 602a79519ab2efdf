#include "raad/quant_scheme.hpp"

#include "raad/errors.hpp"

#include <algorithm>

namespace raad {

bool is_supported_bits(int bits) { return bits == 2 || bits == 3 || bits == 4 || bits == 8; }

double QuantScheme::qmin() const {
  return target == QuantTarget::weights ? -std::ldexp(1.0, bits - 1) : 0.0;
}

double QuantScheme::qmax() const {
  return target == QuantTarget::weights ? std::ldexp(1.0, bits - 1) - 1.0 : std::ldexp(1.0, bits) - 1.0;
}

void QuantScheme::validate() const {
  if (!is_supported_bits(bits)) throw ParameterError("quant: bit width " + std::to_string(bits) + " not in {2,3,4,8}");
  if (scales.empty()) throw ParameterError("quant: no scales");
  for (double s : scales)
    if (!(s > 0.0) || !std::isfinite(s)) throw ParameterError("quant: scale must be positive and finite");
  if (granularity == Granularity::per_tensor && scales.size() != 1)
    throw ParameterError("quant: per-tensor scheme needs exactly one scale");
  if (target == QuantTarget::weights && zero_point != 0)
    throw ParameterError("quant: weight quantization is symmetric (zero_point must be 0)");
}

Tensor quantize_dequantize(const Tensor& x, const QuantScheme& scheme) {
  scheme.validate();
  const std::size_t n = x.numel();
  std::size_t groups = 1;
  if (scheme.granularity == Granularity::per_output_channel) {
    if (x.rank() == 0 || x.dim(0) != scheme.scales.size())
      throw DimensionError("quantize_dequantize: axis 0 has " + std::to_string(x.rank() ? x.dim(0) : 0) +
                           " channels but scheme has " + std::to_string(scheme.scales.size()) + " scales");
    groups = scheme.scales.size();
  }
  const std::size_t per_group = groups ? n / groups : 0;
  const double qmin = scheme.qmin(), qmax = scheme.qmax(), zp = static_cast<double>(scheme.zero_point);
  Tensor out(x.shape());
  std::vector<bool> pass(n);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const double s = scheme.scales[gi];
    const double lo = (qmin - zp) * s, hi = (qmax - zp) * s;
    for (std::size_t i = gi * per_group; i < (gi + 1) * per_group; ++i) {
      out[i] = fake_quant(x[i], s, zp, qmin, qmax);
      pass[i] = x[i] >= lo - 0.5 * s && x[i] <= hi + 0.5 * s;
    }
  }
  record_op("quantize_dequantize", {x}, out, [pass = std::move(pass)](const Buffer& g, GradSinks in) {
    for (Eigen::Index i = 0; i < g.size(); ++i)
      if (pass[static_cast<std::size_t>(i)]) (*in[0])[i] += g[i];
  });
  return out;
}

QuantScheme activation_scheme_from_range(double lo, double hi, int bits) {
  lo = std::min(lo, 0.0);
  hi = std::max(hi, 0.0);
  QuantScheme s;
  s.bits = bits;
  s.target = QuantTarget::activations;
  s.granularity = Granularity::per_tensor;
  const double levels = std::ldexp(1.0, bits) - 1.0;
  double scale = (hi - lo) / levels;
  if (!(scale > 0.0)) scale = 1.0;
  s.scales = {scale};
  s.zero_point = static_cast<std::int64_t>(std::clamp(std::nearbyint(-lo / scale), 0.0, levels));
  s.validate();
  return s;
}

}  // namespace raad
