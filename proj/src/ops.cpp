#include "raad/ops.hpp"

#include "raad/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace raad {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return;
  if (a.rank() != b.rank())
    throw DimensionError(std::string(op) + ": rank mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  for (std::size_t axis = 0; axis < a.rank(); ++axis)
    if (a.dim(axis) != b.dim(axis))
      throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " differs (" +
                           std::to_string(a.dim(axis)) + " vs " + std::to_string(b.dim(axis)) + ")");
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank)
    throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
}

Tensor scalar_tensor(Scalar v) { return Tensor(Shape{}, Buffer::Constant(1, v)); }

}  // namespace

void check_finite(const Tensor& t, const char* where) {
  if (!t.is_finite()) throw NumericError(std::string(where) + ": non-finite value");
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape(), Buffer(a.data() + b.data()));
  record_op("add", {a, b}, out, [](const Buffer& g, GradSinks in) {
    if (in[0]) *in[0] += g;
    if (in[1]) *in[1] += g;
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape(), Buffer(a.data() - b.data()));
  record_op("sub", {a, b}, out, [](const Buffer& g, GradSinks in) {
    if (in[0]) *in[0] += g;
    if (in[1]) *in[1] -= g;
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape(), Buffer(a.data().cwiseProduct(b.data())));
  record_op("mul", {a, b}, out, [a, b](const Buffer& g, GradSinks in) {
    if (in[0]) *in[0] += g.cwiseProduct(b.data());
    if (in[1]) *in[1] += g.cwiseProduct(a.data());
  });
  return out;
}

Tensor scale(const Tensor& a, Scalar alpha) {
  Tensor out(a.shape(), Buffer(alpha * a.data()));
  record_op("scale", {a}, out, [alpha](const Buffer& g, GradSinks in) { *in[0] += alpha * g; });
  return out;
}

Tensor square(const Tensor& a) {
  Tensor out(a.shape(), Buffer(a.data().array().square().matrix()));
  record_op("square", {a}, out, [a](const Buffer& g, GradSinks in) { *in[0] += 2.0 * g.cwiseProduct(a.data()); });
  return out;
}

Tensor sum(const Tensor& a) {
  Tensor out = scalar_tensor(a.data().sum());
  record_op("sum", {a}, out, [](const Buffer& g, GradSinks in) { in[0]->array() += g[0]; });
  return out;
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ContractError("mean: empty tensor");
  const double n = static_cast<double>(a.numel());
  Tensor out = scalar_tensor(a.data().sum() / n);
  record_op("mean", {a}, out, [n](const Buffer& g, GradSinks in) { in[0]->array() += g[0] / n; });
  return out;
}

Tensor mse_mean(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse_mean");
  if (a.numel() == 0) throw ContractError("mse_mean: empty tensors");
  const double n = static_cast<double>(a.numel());
  Buffer diff = a.data() - b.data();
  Tensor out = scalar_tensor(diff.squaredNorm() / n);
  record_op("mse_mean", {a, b}, out, [diff = std::move(diff), n](const Buffer& g, GradSinks in) {
    const Buffer d = (2.0 * g[0] / n) * diff;
    if (in[0]) *in[0] += d;
    if (in[1]) *in[1] -= d;
  });
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank(input, 4, "conv2d", "input");
  require_rank(weight, 4, "conv2d", "weight");
  require_rank(bias, 1, "conv2d", "bias");
  if (stride == 0) throw ParameterError("conv2d: stride must be >= 1");
  const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != cin)
    throw DimensionError("conv2d: axis 1 (input channels) differs: input has " + std::to_string(cin) +
                         ", weight expects " + std::to_string(weight.dim(1)));
  if (bias.dim(0) != cout)
    throw DimensionError("conv2d: bias axis 0 has " + std::to_string(bias.dim(0)) + " entries, expected " +
                         std::to_string(cout));
  if (kh == 0 || kw == 0) throw ParameterError("conv2d: kernel extents must be >= 1");
  if (h + 2 * padding < kh) throw DimensionError("conv2d: axis 2 (height) smaller than kernel");
  if (w + 2 * padding < kw) throw DimensionError("conv2d: axis 3 (width) smaller than kernel");

  const std::size_t oh = (h + 2 * padding - kh) / stride + 1;
  const std::size_t ow = (w + 2 * padding - kw) / stride + 1;
  const auto k = static_cast<Eigen::Index>(cin * kh * kw);
  const auto p = static_cast<Eigen::Index>(oh * ow);
  Tensor out(Shape{n, cout, oh, ow});

  const ConstMatrixMap wmat(weight.data().data(), static_cast<Eigen::Index>(cout), k);
  RowMatrix<Scalar> cols;
  for (std::size_t b = 0; b < n; ++b) {
    kernels::im2col(input.data().data() + b * cin * h * w, cin, h, w, kh, kw, stride, padding, oh, ow, cols);
    MatrixMap o(out.data().data() + b * cout * oh * ow, static_cast<Eigen::Index>(cout), p);
    o.noalias() = wmat * cols;
    o.colwise() += bias.data();
  }

  record_op("conv2d", {input, weight, bias}, out,
            [input, weight, n, cin, h, w, cout, kh, kw, stride, padding, oh, ow, k, p](const Buffer& g,
                                                                                    GradSinks in) {
              const ConstMatrixMap wm(weight.data().data(), static_cast<Eigen::Index>(cout), k);
              RowMatrix<Scalar> c;
              RowMatrix<Scalar> dcols;
              for (std::size_t b = 0; b < n; ++b) {
                const ConstMatrixMap go(g.data() + b * cout * oh * ow, static_cast<Eigen::Index>(cout), p);
                if (in[1]) {
                  kernels::im2col(input.data().data() + b * cin * h * w, cin, h, w, kh, kw, stride, padding, oh,
                                  ow, c);
                  MatrixMap dw(in[1]->data(), static_cast<Eigen::Index>(cout), k);
                  dw.noalias() += go * c.transpose();
                }
                if (in[2]) *in[2] += go.rowwise().sum();
                if (in[0]) {
                  dcols.noalias() = wm.transpose() * go;
                  kernels::col2im(dcols, cin, h, w, kh, kw, stride, padding, oh, ow,
                                  in[0]->data() + b * cin * h * w);
                }
              }
            });
  return out;
}

Tensor avg_pool2d(const Tensor& input, std::size_t k, std::size_t stride) {
  if (k == 0 || stride == 0) throw ParameterError("avg_pool2d: k and stride must be >= 1");
  require_rank(input, 4, "avg_pool2d", "input");
  const std::size_t nc = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  if (k > h) throw DimensionError("avg_pool2d: axis 2 (height " + std::to_string(h) + ") smaller than window");
  if (k > w) throw DimensionError("avg_pool2d: axis 3 (width " + std::to_string(w) + ") smaller than window");
  const std::size_t oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
  const double inv = 1.0 / static_cast<double>(k * k);
  Tensor out(Shape{input.dim(0), input.dim(1), oh, ow});
  const Scalar* src = input.data().data();
  Scalar* dst = out.data().data();
  for (std::size_t c = 0; c < nc; ++c)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < k; ++j) acc += src[(c * h + oy * stride + i) * w + ox * stride + j];
        dst[(c * oh + oy) * ow + ox] = acc * inv;
      }
  record_op("avg_pool2d", {input}, out, [nc, h, w, oh, ow, k, stride, inv](const Buffer& g, GradSinks in) {
    Scalar* dx = in[0]->data();
    for (std::size_t c = 0; c < nc; ++c)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const double v = g[static_cast<Eigen::Index>((c * oh + oy) * ow + ox)] * inv;
          for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j) dx[(c * h + oy * stride + i) * w + ox * stride + j] += v;
        }
  });
  return out;
}

Tensor relu(const Tensor& input) {
  Tensor out(input.shape(), Buffer(input.data().cwiseMax(0.0)));
  record_op("relu", {input}, out, [input](const Buffer& g, GradSinks in) {
    *in[0] += (input.data().array() > 0.0).select(g, 0.0).matrix();
  });
  return out;
}

Tensor bilinear_resize(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) throw ParameterError("bilinear_resize: output size must be >= 1");
  if (input.rank() < 2) throw DimensionError("bilinear_resize: input needs at least two axes");
  const std::size_t r = input.rank();
  const std::size_t h = input.dim(r - 2), w = input.dim(r - 1);
  const std::size_t planes = input.numel() / (h * w);
  Shape shape = input.shape();
  shape[r - 2] = out_h;
  shape[r - 1] = out_w;
  Tensor out(shape);

  std::vector<kernels::LerpTap> ty(out_h), tx(out_w);
  for (std::size_t y = 0; y < out_h; ++y) ty[y] = kernels::align_corners_tap(y, h, out_h);
  for (std::size_t x = 0; x < out_w; ++x) tx[x] = kernels::align_corners_tap(x, w, out_w);

  const Scalar* src = input.data().data();
  Scalar* dst = out.data().data();
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const Scalar* s = src + pl * h * w;
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t x = 0; x < out_w; ++x) {
        const auto& a = ty[y];
        const auto& b = tx[x];
        const double top = (1.0 - b.w_hi) * s[a.lo * w + b.lo] + b.w_hi * s[a.lo * w + b.hi];
        const double bot = (1.0 - b.w_hi) * s[a.hi * w + b.lo] + b.w_hi * s[a.hi * w + b.hi];
        dst[(pl * out_h + y) * out_w + x] = (1.0 - a.w_hi) * top + a.w_hi * bot;
      }
  }
  record_op("bilinear_resize", {input}, out, [planes, h, w, out_h, out_w, ty, tx](const Buffer& g, GradSinks in) {
    Scalar* dx = in[0]->data();
    for (std::size_t pl = 0; pl < planes; ++pl) {
      Scalar* d = dx + pl * h * w;
      for (std::size_t y = 0; y < out_h; ++y)
        for (std::size_t x = 0; x < out_w; ++x) {
          const double v = g[static_cast<Eigen::Index>((pl * out_h + y) * out_w + x)];
          const auto& a = ty[y];
          const auto& b = tx[x];
          d[a.lo * w + b.lo] += v * (1.0 - a.w_hi) * (1.0 - b.w_hi);
          d[a.lo * w + b.hi] += v * (1.0 - a.w_hi) * b.w_hi;
          d[a.hi * w + b.lo] += v * a.w_hi * (1.0 - b.w_hi);
          d[a.hi * w + b.hi] += v * a.w_hi * b.w_hi;
        }
    }
  });
  return out;
}

Tensor slice_channels(const Tensor& input, std::size_t begin, std::size_t end) {
  require_rank(input, 4, "slice_channels", "input");
  const std::size_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
  if (begin >= end || end > c)
    throw DimensionError("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for axis 1 of size " + std::to_string(c));
  const std::size_t width = end - begin;
  Tensor out(Shape{n, width, input.dim(2), input.dim(3)});
  for (std::size_t b = 0; b < n; ++b)
    out.data().segment(static_cast<Eigen::Index>(b * width * plane), static_cast<Eigen::Index>(width * plane)) =
        input.data().segment(static_cast<Eigen::Index>((b * c + begin) * plane),
                             static_cast<Eigen::Index>(width * plane));
  record_op("slice_channels", {input}, out, [n, c, plane, begin, width](const Buffer& g, GradSinks in) {
    for (std::size_t b = 0; b < n; ++b)
      in[0]->segment(static_cast<Eigen::Index>((b * c + begin) * plane), static_cast<Eigen::Index>(width * plane)) +=
          g.segment(static_cast<Eigen::Index>(b * width * plane), static_cast<Eigen::Index>(width * plane));
  });
  return out;
}

Tensor concat_batch(const std::vector<Tensor>& items) {
  if (items.empty()) throw ContractError("concat_batch: no inputs");
  Shape item_shape = items.front().shape();
  const bool chw = item_shape.size() == 3;
  if (!chw && item_shape.size() != 4) throw DimensionError("concat_batch: inputs must be CHW or NCHW");
  std::size_t total = 0;
  for (const auto& t : items) {
    if (t.rank() != item_shape.size()) throw DimensionError("concat_batch: mixed ranks");
    for (std::size_t a = chw ? 0 : 1; a < item_shape.size(); ++a)
      if (t.dim(a) != item_shape[a]) throw DimensionError("concat_batch: axis " + std::to_string(a) + " differs");
    total += chw ? 1 : t.dim(0);
  }
  Shape shape = chw ? Shape{total, item_shape[0], item_shape[1], item_shape[2]}
                    : Shape{total, item_shape[1], item_shape[2], item_shape[3]};
  Tensor out(shape);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& t : items) {
    offsets.push_back(off);
    out.data().segment(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(t.numel())) = t.data();
    off += t.numel();
  }
  record_op("concat_batch", items, out, [offsets](const Buffer& g, GradSinks in) {
    for (std::size_t i = 0; i < in.size(); ++i)
      if (in[i]) *in[i] += g.segment(static_cast<Eigen::Index>(offsets[i]), in[i]->size());
  });
  return out;
}

Tensor batch_item(const Tensor& input, std::size_t n) {
  require_rank(input, 4, "batch_item", "input");
  if (n >= input.dim(0)) throw DimensionError("batch_item: index out of range on axis 0");
  const std::size_t len = input.numel() / input.dim(0);
  Tensor out(Shape{1, input.dim(1), input.dim(2), input.dim(3)},
             Buffer(input.data().segment(static_cast<Eigen::Index>(n * len), static_cast<Eigen::Index>(len))));
  record_op("batch_item", {input}, out, [n, len](const Buffer& g, GradSinks in) {
    in[0]->segment(static_cast<Eigen::Index>(n * len), static_cast<Eigen::Index>(len)) += g;
  });
  return out;
}

std::size_t top_k_count(std::size_t n, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ParameterError("top_k: fraction must lie in (0, 1]");
  // The epsilon absorbs products like 0.1 * 30 = 3.0000000000000004.
  auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  return std::clamp<std::size_t>(k, 1, n);
}

std::vector<std::size_t> top_k_indices(const Buffer& values, std::size_t k) {
  std::vector<std::size_t> idx(static_cast<std::size_t>(values.size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto before = [&values](std::size_t a, std::size_t b) {
    const double va = values[static_cast<Eigen::Index>(a)], vb = values[static_cast<Eigen::Index>(b)];
    return va > vb || (va == vb && a < b);
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), before);
  idx.resize(k);
  return idx;
}

Tensor top_k_mean(const Tensor& input, double fraction) {
  if (input.numel() == 0) throw ContractError("top_k_mean: empty input");
  const std::size_t k = top_k_count(input.numel(), fraction);
  auto idx = top_k_indices(input.data(), k);
  double acc = 0.0;
  for (auto i : idx) acc += input[i];
  Tensor out = scalar_tensor(acc / static_cast<double>(k));
  record_op("top_k_mean", {input}, out, [idx = std::move(idx), k](const Buffer& g, GradSinks in) {
    const double v = g[0] / static_cast<double>(k);
    for (auto i : idx) (*in[0])[static_cast<Eigen::Index>(i)] += v;
  });
  return out;
}

}  // namespace raad
