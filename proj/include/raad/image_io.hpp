#pragma once

#include "raad/tensor.hpp"
#include "raad/types.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace raad {

/// 8-bit interleaved image, 1 (gray) or 3 (RGB) channels.
struct Image8 {
  std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;
};

/// Parses binary P5/P6. Malformed input raises ParseError naming the byte offset.
Image8 decode_pnm(const std::string& bytes);
/// P5 for one channel, P6 for three; maxval 255.
std::string encode_pnm(const Image8& image);

/// Channel-major [3,H,W] tensor with values v/maxval; gray input is
/// replicated to three channels.
Tensor load_image(const std::filesystem::path& path);
Tensor image_to_tensor(const Image8& image);
/// [3,H,W] or [1,3,H,W] in [0,1] to 8-bit RGB (values are clamped and rounded).
Image8 tensor_to_image(const Tensor& chw);

/// PGM mask: any nonzero byte is set.
Mask load_mask(const std::filesystem::path& path);
Image8 mask_to_image(const Mask& mask);

/// Per-image min-max stretch to [0,255]; a flat map becomes all zeros.
Image8 heatmap_to_gray(const Heatmap& map);

/// Input blended with a blue-to-red heat ramp at alpha 0.5.
Image8 heat_overlay(const Tensor& chw, const Heatmap& map);

}  // namespace raad
