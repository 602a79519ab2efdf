#pragma once

#include "raad/tensor.hpp"

#include <cstddef>
#include <vector>

namespace raad {

// Differentiable operations. Each one records itself on the active tape when
// any input requires gradients; outside a Tape::Recording they are plain
// forward computations.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar alpha);
Tensor square(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// 2-D cross-correlation over NCHW input with OIHW weight.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding);

/// Mean over k x k windows, no padding.
Tensor avg_pool2d(const Tensor& input, std::size_t k, std::size_t stride);

/// max(0, x); the subgradient at 0 is 0.
Tensor relu(const Tensor& input);

/// Align-corners bilinear interpolation of the two trailing axes.
Tensor bilinear_resize(const Tensor& input, std::size_t out_h, std::size_t out_w);

/// Mean over all elements of (a - b)^2.
Tensor mse_mean(const Tensor& a, const Tensor& b);

/// Channels [begin, end) of an NCHW tensor.
Tensor slice_channels(const Tensor& input, std::size_t begin, std::size_t end);

/// Stacks same-shape CHW tensors into NCHW (or NCHW tensors along N).
Tensor concat_batch(const std::vector<Tensor>& items);

/// Batch item n of an NCHW tensor, keeping a leading axis of 1.
Tensor batch_item(const Tensor& input, std::size_t n);

/// Number of entries kept by top_k_mean for a given fraction.
std::size_t top_k_count(std::size_t n, double fraction);

/// Mean of the ceil(fraction * n) largest entries. Ties are broken by
/// ascending linear index; gradient flows only through the selected entries.
Tensor top_k_mean(const Tensor& input, double fraction);

/// Linear indices selected by top_k_mean, in selection order.
std::vector<std::size_t> top_k_indices(const Buffer& values, std::size_t k);

/// Raises NumericError if any entry is non-finite.
void check_finite(const Tensor& t, const char* where);

namespace kernels {

/// Unfolds one CHW image into a (C*kh*kw) x (out_h*out_w) column matrix.
template <typename S>
void im2col(const S* image, std::size_t channels, std::size_t height, std::size_t width, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t padding, std::size_t out_h, std::size_t out_w,
            RowMatrix<S>& cols) {
  cols.resize(static_cast<Eigen::Index>(channels * kh * kw), static_cast<Eigen::Index>(out_h * out_w));
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < kh; ++i)
      for (std::size_t j = 0; j < kw; ++j) {
        S* row = cols.row(static_cast<Eigen::Index>((c * kh + i) * kw + j)).data();
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy * stride + i) - static_cast<std::ptrdiff_t>(padding);
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const auto x = static_cast<std::ptrdiff_t>(ox * stride + j) - static_cast<std::ptrdiff_t>(padding);
            const bool inside = y >= 0 && x >= 0 && y < static_cast<std::ptrdiff_t>(height) &&
                                x < static_cast<std::ptrdiff_t>(width);
            row[oy * out_w + ox] = inside ? image[(c * height + static_cast<std::size_t>(y)) * width +
                                                  static_cast<std::size_t>(x)]
                                          : S(0);
          }
        }
      }
}

/// Adjoint of im2col: scatters columns back, accumulating into `image`.
template <typename S>
void col2im(const RowMatrix<S>& cols, std::size_t channels, std::size_t height, std::size_t width, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t padding, std::size_t out_h, std::size_t out_w, S* image) {
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < kh; ++i)
      for (std::size_t j = 0; j < kw; ++j) {
        const S* row = cols.row(static_cast<Eigen::Index>((c * kh + i) * kw + j)).data();
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy * stride + i) - static_cast<std::ptrdiff_t>(padding);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(height)) continue;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const auto x = static_cast<std::ptrdiff_t>(ox * stride + j) - static_cast<std::ptrdiff_t>(padding);
            if (x < 0 || x >= static_cast<std::ptrdiff_t>(width)) continue;
            image[(c * height + static_cast<std::size_t>(y)) * width + static_cast<std::size_t>(x)] +=
                row[oy * out_w + ox];
          }
        }
      }
}

/// Source coordinate and weights for one output index under align-corners.
struct LerpTap {
  std::size_t lo, hi;
  double w_hi;
};

inline LerpTap align_corners_tap(std::size_t out_index, std::size_t in_size, std::size_t out_size) {
  if (in_size == 1 || out_size == 1) return {0, 0, 0.0};
  const double src = static_cast<double>(out_index) * static_cast<double>(in_size - 1) /
                     static_cast<double>(out_size - 1);
  auto lo = static_cast<std::size_t>(src);
  if (lo >= in_size - 1) lo = in_size - 1;
  const std::size_t hi = lo + 1 < in_size ? lo + 1 : lo;
  return {lo, hi, src - static_cast<double>(lo)};
}

}  // namespace kernels

}  // namespace raad
