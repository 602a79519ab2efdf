#include "raad/models.hpp"

#include "raad/errors.hpp"
#include "raad/ops.hpp"
#include "raad/rng.hpp"

#include <cmath>
#include <cstdio>

namespace raad {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::relu: return "relu";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::bilinear_up: return "bilinear-up";
  }
  return "?";
}

std::size_t feature_map_size(std::size_t image_size) {
  // conv5/p2 -> pool2 -> conv5/valid -> pool2 -> conv3/p1 -> conv3/p1
  if (image_size < 16 || image_size % 4 != 0)
    throw DimensionError("image size " + std::to_string(image_size) + " must be a multiple of 4 and >= 16");
  return image_size / 4 - 2;
}

namespace {

LayerSpec conv(std::size_t in, std::size_t out, std::size_t k, std::size_t stride = 1, std::size_t pad = 0) {
  return {LayerKind::conv, in, out, k, stride, pad, 0, 0};
}
LayerSpec relu_layer() { return {LayerKind::relu}; }
LayerSpec pool(std::size_t k) { return {LayerKind::avgpool, 0, 0, k, k, 0, 0, 0}; }
LayerSpec up(std::size_t h, std::size_t w) { return {LayerKind::bilinear_up, 0, 0, 0, 0, 0, h, w}; }

}  // namespace

Network::Network(std::string name, std::vector<LayerSpec> layers, std::uint64_t seed)
    : name_(std::move(name)), layers_(std::move(layers)) {
  Rng rng(derive_seed(seed, fnv1a64(name_)));
  std::size_t q = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.kind != LayerKind::conv) continue;
    if (l.in_channels == 0 || l.out_channels == 0 || l.kernel == 0 || l.stride == 0)
      throw ParameterError("network '" + name_ + "': conv layer " + std::to_string(i) + " has a zero extent");
    ++q;
    const std::size_t fan_in = l.in_channels * l.kernel * l.kernel;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    Tensor w(Shape{l.out_channels, l.in_channels, l.kernel, l.kernel});
    for (std::size_t j = 0; j < w.numel(); ++j) w[j] = rng.uniform(-bound, bound);
    params_.emplace_back("conv" + std::to_string(q) + ".weight", w.set_requires_grad(true));
    params_.emplace_back("conv" + std::to_string(q) + ".bias", Tensor(Shape{l.out_channels}).set_requires_grad(true));
    conv_layers_.push_back(i);
    tap_after_.push_back(i + 1 < layers_.size() && layers_[i + 1].kind == LayerKind::relu ? i + 1 : i);
  }
  act_quant_.resize(conv_layers_.size());
}

void Network::set_frozen(bool frozen) {
  frozen_ = frozen;
  for (auto& [n, t] : params_) t.set_requires_grad(!frozen);
}

bool Network::has_activation_quant() const {
  for (const auto& a : act_quant_)
    if (a) return true;
  return false;
}

void Network::clear_activation_quant() {
  for (auto& a : act_quant_) a.reset();
}

Network Network::clone() const {
  Network copy = *this;
  for (auto& [n, t] : copy.params_) t = t.clone();
  return copy;
}

Tensor Network::forward(const Tensor& image) const { return forward_trace(*this, image).output; }

ForwardTrace forward_trace(const Network& net, const Tensor& image) {
  Tensor x = image;
  if (x.rank() == 3) x = x.reshaped(Shape{1, x.dim(0), x.dim(1), x.dim(2)});
  if (x.rank() != 4) throw DimensionError("network '" + net.name() + "': input must be CHW or NCHW");
  if (!net.layers().empty() && net.layers().front().kind == LayerKind::conv &&
      x.dim(1) != net.layers().front().in_channels)
    throw DimensionError("network '" + net.name() + "': axis 1 has " + std::to_string(x.dim(1)) +
                         " channels, expected " + std::to_string(net.layers().front().in_channels));

  ForwardTrace trace;
  const auto& layers = net.layers();
  std::size_t q = 0;  // next conv ordinal
  std::size_t pending = 0;
  bool have_pending = false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    switch (l.kind) {
      case LayerKind::conv:
        trace.conv_inputs.push_back(x);
        x = conv2d(x, net.weight(q), net.bias(q), l.stride, l.padding);
        trace.conv_outputs.push_back(x);
        pending = q++;
        have_pending = true;
        break;
      case LayerKind::relu: x = relu(x); break;
      case LayerKind::avgpool: x = avg_pool2d(x, l.kernel, l.stride); break;
      case LayerKind::bilinear_up: x = bilinear_resize(x, l.out_h, l.out_w); break;
    }
    if (have_pending && net.tap_layer_index(pending) == i) {
      if (const auto& aq = net.activation_quant(pending)) x = quantize_dequantize(x, *aq);
      trace.taps.push_back(x);
      have_pending = false;
    }
  }
  check_finite(x, ("forward of '" + net.name() + "'").c_str());
  trace.output = x;
  return trace;
}

std::pair<Tensor, LayerTaps> forward_with_taps(const Network& net, const Tensor& image) {
  auto trace = forward_trace(net, image);
  return {trace.output, LayerTaps{std::move(trace.taps)}};
}

Network build_pdn(std::size_t out_channels, std::size_t width_multiplier, const ModelGeometry& geo,
                  std::uint64_t seed, std::string name) {
  if (out_channels == 0 || width_multiplier == 0) throw ParameterError("build_pdn: channel counts must be >= 1");
  const std::size_t h = geo.hidden_channels;
  std::vector<LayerSpec> layers{
      conv(geo.image_channels, h, 5, 1, 2), relu_layer(), pool(2),
      conv(h, h, 5),                        relu_layer(), pool(2),
      conv(h, h, 3, 1, 1),                  relu_layer(),
      conv(h, out_channels * width_multiplier, 3, 1, 1),
  };
  return Network(std::move(name), std::move(layers), seed);
}

Network build_autoencoder(std::size_t latent, std::size_t out_channels, const ModelGeometry& geo,
                          std::uint64_t seed, std::string name) {
  if (latent == 0 || out_channels == 0) throw ParameterError("build_autoencoder: latent and channels must be >= 1");
  const std::size_t s = geo.image_size;
  if (s < 32 || s % 16 != 0)
    throw DimensionError("build_autoencoder: image size " + std::to_string(s) + " must be a multiple of 16 and >= 32");
  const std::size_t h = geo.hidden_channels;
  const std::size_t t = feature_map_size(s);
  std::vector<LayerSpec> layers{
      conv(geo.image_channels, h, 4, 2, 1), relu_layer(),
      conv(h, h, 4, 2, 1),                  relu_layer(),
      conv(h, h, 4, 2, 1),                  relu_layer(),
      conv(h, h, 4, 2, 1),                  relu_layer(),
      conv(h, latent, s / 16),
      up((t + 3) / 4, (t + 3) / 4), conv(latent, h, 3, 1, 1), relu_layer(),
      up((t + 1) / 2, (t + 1) / 2), conv(h, h, 3, 1, 1),      relu_layer(),
      up(t, t),                     conv(h, h, 3, 1, 1),      relu_layer(),
      conv(h, out_channels, 3, 1, 1),
  };
  return Network(std::move(name), std::move(layers), seed);
}

Network build_extractor(std::uint64_t seed, const ModelGeometry& geo, std::string name) {
  const std::size_t h = geo.hidden_channels;
  std::vector<LayerSpec> layers{
      conv(geo.image_channels, h, 3, 1, 1), relu_layer(), pool(2),
      conv(h, h, 3, 1, 1),                  relu_layer(), pool(2),
      conv(h, h, 3),                        relu_layer(),
      conv(h, geo.teacher_channels, 1),
  };
  Network net(std::move(name), std::move(layers), seed);
  net.set_frozen(true);
  net.set_provenance("fixed");
  return net;
}

std::string architecture_summary(const Network& net, const Shape& input_chw) {
  std::string out = "# " + net.name() + "\nidx,kind,in_ch,out_ch,kernel,stride,padding,output\n";
  std::size_t c = input_chw.at(0), h = input_chw.at(1), w = input_chw.at(2);
  char line[160];
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    const auto& l = net.layers()[i];
    const std::size_t in_c = c;
    std::size_t k = 0, s = 0, p = 0;
    switch (l.kind) {
      case LayerKind::conv:
        k = l.kernel, s = l.stride, p = l.padding;
        c = l.out_channels;
        h = (h + 2 * p - k) / s + 1;
        w = (w + 2 * p - k) / s + 1;
        break;
      case LayerKind::avgpool:
        k = l.kernel, s = l.stride;
        h = (h - k) / s + 1;
        w = (w - k) / s + 1;
        break;
      case LayerKind::bilinear_up:
        h = l.out_h, w = l.out_w;
        break;
      case LayerKind::relu: break;
    }
    std::snprintf(line, sizeof line, "%zu,%s,%zu,%zu,%zu,%zu,%zu,%zux%zux%zu\n", i + 1, to_string(l.kind), in_c, c, k,
                  s, p, c, h, w);
    out += line;
  }
  return out;
}

void store_network(Checkpoint& ckpt, const Network& net, const std::string& prefix) {
  for (const auto& [n, t] : net.parameters()) ckpt.put(prefix + "/" + n, t.detach());
  for (std::size_t q = 0; q < net.conv_count(); ++q) {
    const auto& aq = net.activation_quant(q);
    if (!aq) continue;
    ckpt.put(prefix + "/conv" + std::to_string(q + 1) + ".act_quant",
             Tensor(Shape{3}, {static_cast<double>(aq->bits), aq->scales.at(0), static_cast<double>(aq->zero_point)}));
  }
}

void load_network(Network& net, const Checkpoint& ckpt, const std::string& prefix) {
  for (auto& [n, t] : net.parameters()) {
    const Tensor& src = ckpt.get(prefix + "/" + n);
    if (src.shape() != t.shape())
      throw DimensionError("checkpoint tensor '" + prefix + "/" + n + "' has shape " + shape_string(src.shape()) +
                           ", network expects " + shape_string(t.shape()));
    t.data() = src.data();
  }
  for (std::size_t q = 0; q < net.conv_count(); ++q) {
    const std::string key = prefix + "/conv" + std::to_string(q + 1) + ".act_quant";
    if (!ckpt.contains(key)) {
      net.set_activation_quant(q, std::nullopt);
      continue;
    }
    const Tensor& a = ckpt.get(key);
    QuantScheme s;
    s.bits = static_cast<int>(a[0]);
    s.scales = {a[1]};
    s.zero_point = static_cast<std::int64_t>(a[2]);
    s.target = QuantTarget::activations;
    s.validate();
    net.set_activation_quant(q, s);
  }
}

}  // namespace raad
