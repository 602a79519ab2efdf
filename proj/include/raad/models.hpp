#pragma once

#include "raad/checkpoint.hpp"
#include "raad/optim.hpp"
#include "raad/quant_scheme.hpp"
#include "raad/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace raad {

enum class LayerKind { conv, relu, avgpool, bilinear_up };

const char* to_string(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t out_h = 0;  // bilinear_up target
  std::size_t out_w = 0;
};

/// Desk-scale geometry shared by every network of one pipeline.
struct ModelGeometry {
  std::size_t image_size = 64;
  std::size_t image_channels = 3;
  std::size_t teacher_channels = 8;
  std::size_t hidden_channels = 16;
  std::size_t latent = 16;
  std::size_t student_multiplier = 2;
};

/// Spatial size of the PDN / extractor output for a square input.
std::size_t feature_map_size(std::size_t image_size);

class Network {
 public:
  Network() = default;
  Network(std::string name, std::vector<LayerSpec> layers, std::uint64_t seed);

  const std::string& name() const { return name_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }

  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  /// Number of conv layers, i.e. the N of the per-layer bit assignment.
  std::size_t conv_count() const { return conv_layers_.size(); }
  /// Index into layers() of the q-th conv (0-based q).
  std::size_t conv_layer_index(std::size_t q) const { return conv_layers_.at(q); }
  /// Index of the layer after which the q-th conv's tap is taken.
  std::size_t tap_layer_index(std::size_t q) const { return tap_after_.at(q); }
  const Tensor& weight(std::size_t q) const { return params_.at(2 * q).second; }
  Tensor& weight(std::size_t q) { return params_.at(2 * q).second; }
  const Tensor& bias(std::size_t q) const { return params_.at(2 * q + 1).second; }
  Tensor& bias(std::size_t q) { return params_.at(2 * q + 1).second; }

  bool frozen() const { return frozen_; }
  void set_frozen(bool frozen);

  /// Free-form stage tag ("init", "pretrained", "trained", "quantized", "finetuned").
  const std::string& provenance() const { return provenance_; }
  void set_provenance(std::string p) { provenance_ = std::move(p); }

  /// Fake-quant applied to the q-th conv's tap, when set.
  const std::optional<QuantScheme>& activation_quant(std::size_t q) const { return act_quant_.at(q); }
  void set_activation_quant(std::size_t q, std::optional<QuantScheme> scheme) { act_quant_.at(q) = std::move(scheme); }
  bool has_activation_quant() const;
  void clear_activation_quant();

  /// Accepts CHW or NCHW; returns NCHW.
  Tensor forward(const Tensor& image) const;

  /// Deep copy: parameters are cloned, not aliased.
  Network clone() const;

 private:
  std::string name_;
  std::vector<LayerSpec> layers_;
  ParameterSet params_;
  std::vector<std::size_t> conv_layers_;
  std::vector<std::size_t> tap_after_;  // layer index after which conv q's tap is taken
  std::vector<std::optional<QuantScheme>> act_quant_;
  bool frozen_ = false;
  std::string provenance_ = "init";
};

/// Post-activation outputs of each conv layer of one forward pass.
struct LayerTaps {
  std::vector<Tensor> taps;
};

/// Everything the quantizer needs from one forward pass.
struct ForwardTrace {
  Tensor output;
  std::vector<Tensor> conv_inputs;   // input to conv q
  std::vector<Tensor> conv_outputs;  // conv q before its activation
  std::vector<Tensor> taps;          // conv q after activation (and fake-quant)
};

ForwardTrace forward_trace(const Network& net, const Tensor& image);
std::pair<Tensor, LayerTaps> forward_with_taps(const Network& net, const Tensor& image);

/// Four-conv patch description network. Final channels are
/// out_channels * width_multiplier; hidden widths come from the geometry.
Network build_pdn(std::size_t out_channels, std::size_t width_multiplier, const ModelGeometry& geo,
                  std::uint64_t seed, std::string name = "pdn");

/// Strided-conv encoder to a 1x1 latent, bilinear-up + conv decoder back to
/// the teacher's feature-map shape.
Network build_autoencoder(std::size_t latent, std::size_t out_channels, const ModelGeometry& geo,
                          std::uint64_t seed, std::string name = "ae");

/// Frozen random CNN standing in for the pretrained backbone.
Network build_extractor(std::uint64_t seed, const ModelGeometry& geo, std::string name = "extractor");

/// Plain-text table: index, kind, in/out channels, kernel, stride, padding, output shape.
std::string architecture_summary(const Network& net, const Shape& input_chw);

/// Writes parameters (and activation quant state, if any) under `prefix/`.
void store_network(Checkpoint& ckpt, const Network& net, const std::string& prefix);
/// Restores what store_network wrote. Layer structure must already match.
void load_network(Network& net, const Checkpoint& ckpt, const std::string& prefix);

}  // namespace raad
