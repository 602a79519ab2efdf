#include "raad/quant.hpp"

#include "raad/errors.hpp"
#include "raad/ops.hpp"
#include "raad/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace raad {

bool CalibrationCache::covers(const QuantBlock& block) const {
  return block.first <= block.last && block.last < layer_count() && image_count() > 0 &&
         inputs.size() == layer_count() && grads.size() == layer_count();
}

CalibrationCache build_calibration_cache(const Network& net, std::span<const Tensor> images,
                                         const CalibrationLoss& loss) {
  if (net.has_activation_quant())
    throw ContractError("calibration: cache must be built from the full-precision network");
  Network fp = net.clone();
  fp.set_frozen(true);
  const std::size_t layers = fp.conv_count();
  CalibrationCache cache;
  cache.inputs.resize(layers);
  cache.outputs.resize(layers);
  cache.grads.resize(layers);
  for (std::size_t i = 0; i < images.size(); ++i) {
    Tensor x = images[i].detach();
    if (x.rank() == 3) x = x.reshaped(Shape{1, x.dim(0), x.dim(1), x.dim(2)});
    x.set_requires_grad(true);
    Tape tape;
    ForwardTrace trace;
    {
      Tape::Recording rec(tape);
      trace = forward_trace(fp, x);
      Tensor l = loss(trace.output, i);
      if (l.requires_grad()) backward(l, tape);
    }
    for (std::size_t q = 0; q < layers; ++q) {
      const Tensor& z = trace.conv_outputs[q];
      cache.inputs[q].push_back(trace.conv_inputs[q].detach());
      cache.outputs[q].push_back(z.detach());
      cache.grads[q].push_back(z.has_grad() ? Tensor(z.shape(), z.grad()) : Tensor(z.shape()));
    }
  }
  return cache;
}

const std::vector<double>& scale_candidates() {
  static const std::vector<double> grid = [] {
    std::vector<double> g;
    for (int i = 1; i <= 100; ++i) g.push_back(static_cast<double>(20 + i) / 100.0);
    return g;
  }();
  return grid;
}

namespace {

double weight_qmax(int bits) { return symmetric_qmax(bits); }

QuantScheme weight_scheme(int bits, std::vector<double> scales) {
  QuantScheme s;
  s.bits = bits;
  s.target = QuantTarget::weights;
  s.granularity = Granularity::per_output_channel;
  s.scales = std::move(scales);
  return s;
}

// Channel-wise base scale max|w_c| / qmax (1 for all-zero channels).
std::vector<double> base_scales(const Tensor& w, int bits) {
  const std::size_t cout = w.dim(0), per = w.numel() / cout;
  std::vector<double> out(cout);
  for (std::size_t c = 0; c < cout; ++c) {
    const double m = w.data().segment(static_cast<Eigen::Index>(c * per), static_cast<Eigen::Index>(per)).cwiseAbs().maxCoeff();
    out[c] = m > 0.0 ? m / weight_qmax(bits) : 0.0;
  }
  return out;
}

double candidate_scale(double base, std::size_t i) { return base > 0.0 ? scale_candidates()[i] * base : 1.0; }

Tensor run_block(const Network& net, const QuantBlock& block, const Tensor& input, std::span<const Tensor> weights) {
  NoGrad ng;
  Tensor x = input;
  const std::size_t begin = net.conv_layer_index(block.first), end = net.conv_layer_index(block.last);
  std::size_t q = block.first;
  for (std::size_t i = begin; i <= end; ++i) {
    const auto& l = net.layers()[i];
    switch (l.kind) {
      case LayerKind::conv:
        x = conv2d(x, weights[q - block.first], net.bias(q), l.stride, l.padding);
        ++q;
        break;
      case LayerKind::relu: x = relu(x); break;
      case LayerKind::avgpool: x = avg_pool2d(x, l.kernel, l.stride); break;
      case LayerKind::bilinear_up: x = bilinear_resize(x, l.out_h, l.out_w); break;
    }
  }
  return x;
}

double weighted_error(const Network& net, const QuantBlock& block, const CalibrationCache& cache,
                      std::span<const Tensor> weights) {
  double total = 0.0;
  const std::size_t n = cache.image_count();
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor z = run_block(net, block, cache.inputs[block.first][i], weights);
    const Buffer& z_fp = cache.outputs[block.last][i].data();
    const Buffer& g = cache.grads[block.last][i].data();
    total += (g.array().square() * (z.data() - z_fp).array().square()).sum();
  }
  return total / static_cast<double>(n);
}

void require_cache(const CalibrationCache& cache, const QuantBlock& block) {
  if (!cache.covers(block))
    throw ContractError("quantizer: calibration cache missing for block [" + std::to_string(block.first + 1) + "," +
                        std::to_string(block.last + 1) + "]");
}

// Per-channel weighted error of every candidate for a single-conv block.
// Row c*K + i holds channel c, candidate i.
Buffer single_layer_candidate_errors(const Network& net, std::size_t q, const CalibrationCache& cache, int bits) {
  const Tensor& w = net.weight(q);
  const auto& spec = net.layers()[net.conv_layer_index(q)];
  const std::size_t cout = w.dim(0), k = w.numel() / cout;
  const std::size_t ncand = scale_candidates().size();
  const auto base = base_scales(w, bits);
  const double qmin = -std::ldexp(1.0, bits - 1), qmax = weight_qmax(bits);

  RowMatrix<Scalar> delta(static_cast<Eigen::Index>(cout * ncand), static_cast<Eigen::Index>(k));
  for (std::size_t c = 0; c < cout; ++c)
    for (std::size_t i = 0; i < ncand; ++i) {
      const double s = candidate_scale(base[c], i);
      for (std::size_t j = 0; j < k; ++j) {
        const double v = w[c * k + j];
        delta(static_cast<Eigen::Index>(c * ncand + i), static_cast<Eigen::Index>(j)) = fake_quant(v, s, 0.0, qmin, qmax) - v;
      }
    }

  Buffer err = Buffer::Zero(static_cast<Eigen::Index>(cout * ncand));
  RowMatrix<Scalar> cols, dz;
  for (std::size_t img = 0; img < cache.image_count(); ++img) {
    const Tensor& x = cache.inputs[q][img];
    const Tensor& g = cache.grads[q][img];
    const std::size_t cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t oh = g.dim(2), ow = g.dim(3), p = oh * ow;
    kernels::im2col(x.data().data(), cin, h, wd, spec.kernel, spec.kernel, spec.stride, spec.padding, oh, ow, cols);
    dz.noalias() = delta * cols;
    for (std::size_t c = 0; c < cout; ++c) {
      const auto g2 = g.data().segment(static_cast<Eigen::Index>(c * p), static_cast<Eigen::Index>(p)).array().square();
      for (std::size_t i = 0; i < ncand; ++i) {
        const auto row = static_cast<Eigen::Index>(c * ncand + i);
        err[row] += (dz.row(row).transpose().array().square() * g2).sum();
      }
    }
  }
  return err / static_cast<double>(cache.image_count());
}

}  // namespace

std::vector<double> calibrate_scale(const Tensor& x, int bits, Granularity granularity) {
  if (x.numel() == 0) throw ContractError("calibrate_scale: empty tensor");
  if (!is_supported_bits(bits)) throw ParameterError("calibrate_scale: bit width not in {2,3,4,8}");
  const double qmin = -std::ldexp(1.0, bits - 1), qmax = weight_qmax(bits);
  const std::size_t groups = granularity == Granularity::per_output_channel ? x.dim(0) : 1;
  const std::size_t per = x.numel() / groups;
  std::vector<double> scales(groups, 1.0);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const auto seg = x.data().segment(static_cast<Eigen::Index>(gi * per), static_cast<Eigen::Index>(per));
    const double m = seg.cwiseAbs().maxCoeff();
    if (m == 0.0) continue;
    double best = std::numeric_limits<double>::infinity();
    for (double f : scale_candidates()) {
      const double s = f * m / qmax;
      double e = 0.0;
      for (Eigen::Index j = 0; j < seg.size(); ++j) {
        const double d = fake_quant(seg[j], s, 0.0, qmin, qmax) - seg[j];
        e += d * d;
      }
      e /= static_cast<double>(per);
      if (e < best) {
        best = e;
        scales[gi] = s;
      }
    }
  }
  return scales;
}

Tensor fisher_diagonal(const CalibrationCache& cache, const QuantBlock& block) {
  require_cache(cache, block);
  const auto& grads = cache.grads[block.last];
  Tensor out(grads.front().shape());
  for (const auto& g : grads) out.data() += g.data().cwiseAbs2();
  out.data() /= static_cast<double>(grads.size());
  return out;
}

double block_reconstruction_error(const Network& net, const QuantBlock& block, const CalibrationCache& cache,
                                  std::span<const QuantScheme> schemes) {
  require_cache(cache, block);
  const std::size_t count = block.last - block.first + 1;
  if (schemes.size() != count) throw ParameterError("block_reconstruction_error: need one scheme per layer in block");
  std::vector<Tensor> weights;
  for (std::size_t j = 0; j < count; ++j) weights.push_back(quantize_dequantize(net.weight(block.first + j), schemes[j]));
  return weighted_error(net, block, cache, weights);
}

QuantScheme minmax_weight_scheme(const Tensor& weight, int bits) {
  if (!is_supported_bits(bits)) throw ParameterError("quant: bit width " + std::to_string(bits) + " not in {2,3,4,8}");
  auto base = base_scales(weight, bits);
  for (auto& s : base)
    if (s == 0.0) s = 1.0;
  return weight_scheme(bits, std::move(base));
}

BlockQuantization quantize_block(const Network& net, const QuantBlock& block, const CalibrationCache& cache,
                                 std::span<const int> bits_per_layer, std::size_t sweeps) {
  require_cache(cache, block);
  const std::size_t count = block.last - block.first + 1;
  if (bits_per_layer.size() != count) throw ParameterError("quantize_block: need one bit width per layer in block");
  for (int b : bits_per_layer)
    if (!is_supported_bits(b)) throw ParameterError("quantize_block: bit width " + std::to_string(b) + " not in {2,3,4,8}");

  // choice[j][c] indexes scale_candidates(); the max|w|/qmax start is index 79.
  constexpr std::size_t kUnitIndex = 79;
  std::vector<std::vector<double>> base(count);
  std::vector<std::vector<std::size_t>> choice(count);
  for (std::size_t j = 0; j < count; ++j) {
    base[j] = base_scales(net.weight(block.first + j), bits_per_layer[j]);
    choice[j].assign(base[j].size(), kUnitIndex);
  }
  auto schemes_of = [&] {
    std::vector<QuantScheme> s;
    for (std::size_t j = 0; j < count; ++j) {
      std::vector<double> sc(base[j].size());
      for (std::size_t c = 0; c < sc.size(); ++c) sc[c] = candidate_scale(base[j][c], choice[j][c]);
      s.push_back(weight_scheme(bits_per_layer[j], std::move(sc)));
    }
    return s;
  };

  BlockQuantization out;
  out.error_before = block_reconstruction_error(net, block, cache, schemes_of());
  const std::size_t ncand = scale_candidates().size();

  if (count == 1) {
    // Channels of one conv contribute independent terms; pick each channel's
    // minimizer directly. Further sweeps cannot move the objective.
    const Buffer err = single_layer_candidate_errors(net, block.first, cache, bits_per_layer[0]);
    for (std::size_t c = 0; c < choice[0].size(); ++c) {
      if (base[0][c] == 0.0) continue;
      std::size_t best = kUnitIndex;
      for (std::size_t i = 0; i < ncand; ++i)
        if (err[static_cast<Eigen::Index>(c * ncand + i)] < err[static_cast<Eigen::Index>(c * ncand + best)]) best = i;
      choice[0][c] = best;
    }
    const double obj = block_reconstruction_error(net, block, cache, schemes_of());
    out.sweep_objective.assign(std::max<std::size_t>(sweeps, 1), obj);
  } else {
    double current = out.error_before;
    for (std::size_t sweep = 0; sweep < sweeps; ++sweep) {
      for (std::size_t j = 0; j < count; ++j)
        for (std::size_t c = 0; c < choice[j].size(); ++c) {
          if (base[j][c] == 0.0) continue;
          const std::size_t keep = choice[j][c];
          std::size_t best = keep;
          double best_err = current;
          for (std::size_t i = 0; i < ncand; ++i) {
            if (i == keep) continue;
            choice[j][c] = i;
            const double e = block_reconstruction_error(net, block, cache, schemes_of());
            if (e < best_err) {
              best_err = e;
              best = i;
            }
          }
          choice[j][c] = best;
          current = best_err;
        }
      out.sweep_objective.push_back(current);
    }
  }

  out.schemes = schemes_of();
  out.error_after = block_reconstruction_error(net, block, cache, out.schemes);
  for (std::size_t j = 0; j < count; ++j)
    out.snapped.push_back(quantize_dequantize(net.weight(block.first + j).detach(), out.schemes[j]));
  return out;
}

std::vector<int> enforce_bit_policy(std::span<const int> bits, std::size_t layer_count) {
  if (bits.size() != layer_count)
    throw ParameterError("quantize_network: bit assignment has " + std::to_string(bits.size()) + " entries, network has " +
                         std::to_string(layer_count) + " conv layers");
  std::vector<int> out(bits.begin(), bits.end());
  for (int b : out)
    if (!is_supported_bits(b)) throw ParameterError("quantize_network: bit width " + std::to_string(b) + " not in {2,3,4,8}");
  if (!out.empty()) {
    out.front() = 8;
    out.back() = 8;
  }
  return out;
}

QuantizedNetwork quantize_network(const Network& net, const CalibrationCache& cache, std::span<const int> bits,
                                  std::span<const Tensor> calibration_images, WeightCalibration mode) {
  QuantizedNetwork out{net.clone(), enforce_bit_policy(bits, net.conv_count()), {}};
  out.net.clear_activation_quant();
  const bool have_cache = cache.layer_count() == net.conv_count() && cache.image_count() > 0;
  if (mode == WeightCalibration::fisher_block && !have_cache)
    throw ContractError("quantize_network: calibration cache missing for '" + net.name() + "'");

  for (std::size_t q = 0; q < net.conv_count(); ++q) {
    const QuantBlock block{q, q};
    const int b = out.bits[q];
    LayerQuantReport rep;
    rep.layer = q + 1;
    rep.bits = b;
    QuantScheme scheme;
    Tensor snapped;
    if (mode == WeightCalibration::fisher_block) {
      const int bq[1] = {b};
      auto res = quantize_block(net, block, cache, bq);
      scheme = res.schemes.front();
      snapped = res.snapped.front();
      rep.error_before = res.error_before;
      rep.error_after = res.error_after;
    } else {
      scheme = minmax_weight_scheme(net.weight(q), b);
      snapped = quantize_dequantize(net.weight(q).detach(), scheme);
      if (have_cache) {
        const QuantScheme s[1] = {scheme};
        rep.error_before = rep.error_after = block_reconstruction_error(net, block, cache, s);
      }
    }
    out.net.weight(q).data() = snapped.data();
    const auto [mn, mx] = std::minmax_element(scheme.scales.begin(), scheme.scales.end());
    rep.scale_min = *mn;
    rep.scale_max = *mx;
    double acc = 0.0;
    for (double s : scheme.scales) acc += s;
    rep.scale_mean = acc / static_cast<double>(scheme.scales.size());
    out.report.push_back(rep);
  }

  std::size_t first_up = net.layers().size();
  for (std::size_t i = 0; i < net.layers().size(); ++i)
    if (net.layers()[i].kind == LayerKind::bilinear_up) {
      first_up = i;
      break;
    }

  if (calibration_images.empty()) throw ContractError("quantize_network: no calibration images for activations");
  NoGrad ng;
  for (std::size_t q = 0; q < net.conv_count(); ++q) {
    if (net.tap_layer_index(q) > first_up) continue;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& img : calibration_images) {
      const auto trace = forward_trace(out.net, img);
      lo = std::min(lo, trace.taps[q].data().minCoeff());
      hi = std::max(hi, trace.taps[q].data().maxCoeff());
    }
    out.net.set_activation_quant(q, activation_scheme_from_range(lo, hi, out.bits[q]));
  }
  out.net.set_provenance("quantized");
  return out;
}

std::string format_quant_report(const std::vector<LayerQuantReport>& report) {
  std::string out = "layer,bits,scale_stats(min/mean/max),block_error_before,block_error_after\n";
  for (const auto& r : report)
    out += std::to_string(r.layer) + "," + std::to_string(r.bits) + "," + format_double(r.scale_min) + "/" +
           format_double(r.scale_mean) + "/" + format_double(r.scale_max) + "," + format_double(r.error_before) + "," +
           format_double(r.error_after) + "\n";
  return out;
}

}  // namespace raad
