#include "raad/image_io.hpp"

#include "raad/checkpoint.hpp"
#include "raad/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace raad {

namespace {

class HeaderScanner {
 public:
  HeaderScanner(const std::string& bytes, std::size_t pos) : b_(bytes), pos_(pos) {}

  std::size_t pos() const { return pos_; }

  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      const auto c = static_cast<unsigned char>(b_[pos_]);
      if (std::isspace(c)) {
        ++pos_;
      } else if (c == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t v = 0;
    while (pos_ < b_.size() && std::isdigit(static_cast<unsigned char>(b_[pos_]))) {
      v = v * 10 + static_cast<std::size_t>(b_[pos_] - '0');
      if (v > (1u << 24)) throw ParseError(std::string("pnm: ") + what + " too large at byte offset " + std::to_string(start));
      ++pos_;
    }
    if (pos_ == start) throw ParseError(std::string("pnm: expected ") + what + " at byte offset " + std::to_string(start));
    return v;
  }

  void single_whitespace() {
    if (pos_ >= b_.size() || !std::isspace(static_cast<unsigned char>(b_[pos_])))
      throw ParseError("pnm: expected whitespace after header at byte offset " + std::to_string(pos_));
    ++pos_;
  }

 private:
  const std::string& b_;
  std::size_t pos_;
};

}  // namespace

Image8 decode_pnm(const std::string& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw ParseError("pnm: expected magic P5 or P6 at byte offset 0");
  Image8 img;
  img.channels = bytes[1] == '6' ? 3 : 1;
  HeaderScanner h(bytes, 2);
  img.width = h.number("width");
  img.height = h.number("height");
  const std::size_t maxval = h.number("maxval");
  if (maxval == 0 || maxval > 255)
    throw ParseError("pnm: maxval " + std::to_string(maxval) + " unsupported at byte offset " + std::to_string(h.pos()));
  h.single_whitespace();
  if (img.width == 0 || img.height == 0) throw ParseError("pnm: zero image extent at byte offset " + std::to_string(h.pos()));
  const std::size_t need = img.width * img.height * img.channels;
  const std::size_t start = h.pos();
  if (bytes.size() - start < need)
    throw ParseError("pnm: truncated payload, expected " + std::to_string(need) + " bytes at byte offset " +
                     std::to_string(start) + ", found " + std::to_string(bytes.size() - start));
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start),
                    bytes.begin() + static_cast<std::ptrdiff_t>(start + need));
  if (maxval != 255)
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(std::lround(255.0 * std::min<double>(p, maxval) / maxval));
  return img;
}

std::string encode_pnm(const Image8& image) {
  if (image.channels != 1 && image.channels != 3) throw ParameterError("pnm: channels must be 1 or 3");
  if (image.pixels.size() != image.width * image.height * image.channels)
    throw DimensionError("pnm: pixel buffer does not match extents");
  std::string out = (image.channels == 3 ? "P6\n" : "P5\n") + std::to_string(image.width) + " " +
                    std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
  return out;
}

Tensor image_to_tensor(const Image8& image) {
  const std::size_t hw = image.height * image.width;
  Tensor t(Shape{3, image.height, image.width});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < hw; ++i) {
      const std::size_t src = image.channels == 3 ? i * 3 + c : i;
      t[c * hw + i] = static_cast<double>(image.pixels[src]) / 255.0;
    }
  return t;
}

Tensor load_image(const std::filesystem::path& path) { return image_to_tensor(decode_pnm(read_file(path))); }

Image8 tensor_to_image(const Tensor& chw) {
  Tensor t = chw;
  if (t.rank() == 4 && t.dim(0) == 1) t = t.reshaped(Shape{t.dim(1), t.dim(2), t.dim(3)});
  if (t.rank() != 3 || t.dim(0) != 3) throw DimensionError("tensor_to_image: expected [3,H,W], got " + shape_string(chw.shape()));
  Image8 img{3, t.dim(1), t.dim(2), {}};
  const std::size_t hw = img.height * img.width;
  img.pixels.resize(hw * 3);
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      img.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::lround(std::clamp(t[c * hw + i], 0.0, 1.0) * 255.0));
  return img;
}

Mask load_mask(const std::filesystem::path& path) {
  const Image8 img = decode_pnm(read_file(path));
  Mask m(static_cast<Eigen::Index>(img.height), static_cast<Eigen::Index>(img.width));
  for (std::size_t i = 0; i < img.height * img.width; ++i)
    m.data()[i] = img.pixels[i * img.channels] != 0 ? 1 : 0;
  return m;
}

Image8 mask_to_image(const Mask& mask) {
  Image8 img{1, static_cast<std::size_t>(mask.rows()), static_cast<std::size_t>(mask.cols()), {}};
  img.pixels.resize(static_cast<std::size_t>(mask.size()));
  for (Eigen::Index i = 0; i < mask.size(); ++i) img.pixels[static_cast<std::size_t>(i)] = mask.data()[i] ? 255 : 0;
  return img;
}

Image8 heatmap_to_gray(const Heatmap& map) {
  Image8 img{1, static_cast<std::size_t>(map.rows()), static_cast<std::size_t>(map.cols()), {}};
  img.pixels.resize(static_cast<std::size_t>(map.size()));
  const double lo = map.minCoeff(), hi = map.maxCoeff();
  const double span = hi - lo;
  for (Eigen::Index i = 0; i < map.size(); ++i)
    img.pixels[static_cast<std::size_t>(i)] =
        span > 0.0 ? static_cast<std::uint8_t>(std::lround(255.0 * (map.data()[i] - lo) / span)) : 0;
  return img;
}

Image8 heat_overlay(const Tensor& chw, const Heatmap& map) {
  Image8 base = tensor_to_image(chw);
  const Image8 heat = heatmap_to_gray(map);
  if (heat.height != base.height || heat.width != base.width)
    throw DimensionError("heat_overlay: heatmap and image extents differ");
  for (std::size_t i = 0; i < heat.pixels.size(); ++i) {
    const double v = heat.pixels[i];
    const double ramp[3] = {v, 0.0, 255.0 - v};
    for (std::size_t c = 0; c < 3; ++c) {
      auto& p = base.pixels[i * 3 + c];
      p = static_cast<std::uint8_t>(std::lround(0.5 * p + 0.5 * ramp[c]));
    }
  }
  return base;
}

}  // namespace raad
