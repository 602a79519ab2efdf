#include "raad/maps.hpp"

#include "raad/checkpoint.hpp"
#include "raad/errors.hpp"
#include "raad/image_io.hpp"
#include "raad/ops.hpp"

namespace raad {

namespace {

Tensor as_chw(const Tensor& t, const char* what) {
  if (t.rank() == 4 && t.dim(0) == 1) return t.reshaped(Shape{t.dim(1), t.dim(2), t.dim(3)});
  if (t.rank() == 3) return t;
  throw DimensionError(std::string(what) + ": expected [C,H,W] or [1,C,H,W], got " + shape_string(t.shape()));
}

Heatmap to_heatmap(const Tensor& hw) {
  Heatmap m(static_cast<Eigen::Index>(hw.dim(0)), static_cast<Eigen::Index>(hw.dim(1)));
  m = ConstMatrixMap(hw.data().data(), m.rows(), m.cols());
  return m;
}

}  // namespace

Heatmap channel_mean(const DiffCube& d) {
  const Tensor cube = as_chw(d.values, "channel_mean");
  const std::size_t c = cube.dim(0), h = cube.dim(1), w = cube.dim(2);
  if (c == 0) throw DimensionError("channel_mean: channel axis is empty");
  ConstMatrixMap planes(cube.data().data(), static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(h * w));
  Heatmap m(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(w));
  Eigen::Map<Eigen::RowVectorXd>(m.data(), m.size()) = planes.colwise().mean();
  return m;
}

AnomalyMap compose_maps(const Tensor& teacher_out, const Tensor& student_teacher_head, const Tensor& ae_out,
                        const Tensor& student_ae_head, std::size_t input_h, std::size_t input_w) {
  const Tensor t = as_chw(teacher_out, "compose_maps teacher"), st = as_chw(student_teacher_head, "compose_maps student");
  const Tensor a = as_chw(ae_out, "compose_maps ae"), sa = as_chw(student_ae_head, "compose_maps student ae-head");
  if (t.dim(1) != a.dim(1) || t.dim(2) != a.dim(2))
    throw DimensionError("compose_maps: local and global maps differ in spatial size (" + shape_string(t.shape()) +
                         " vs " + shape_string(a.shape()) + ")");
  NoGrad ng;
  AnomalyMap m;
  m.local = channel_mean(diff_cube(t, st));
  m.global = channel_mean(diff_cube(a, sa));
  m.combined = 0.5 * (m.local + m.global);

  Tensor small(Shape{1, static_cast<std::size_t>(m.combined.rows()), static_cast<std::size_t>(m.combined.cols())});
  Eigen::Map<Heatmap>(small.data().data(), m.combined.rows(), m.combined.cols()) = m.combined;
  const Tensor big = bilinear_resize(small, input_h, input_w);
  m.resized = to_heatmap(big.reshaped(Shape{input_h, input_w}));
  m.image_score = m.resized.maxCoeff();
  return m;
}

AnomalyMap detect(const Network& teacher, const Network& student, const Network& ae, const Tensor& image) {
  NoGrad ng;
  const Tensor chw = as_chw(image, "detect");
  const Tensor t = teacher.forward(chw);
  const Tensor s = student.forward(chw);
  const Tensor a = ae.forward(chw);
  const std::size_t c = t.dim(1);
  if (s.dim(1) != 2 * c)
    throw DimensionError("detect: student must emit twice the teacher's " + std::to_string(c) + " channels, got " +
                         std::to_string(s.dim(1)));
  return compose_maps(t, slice_channels(s, 0, c), a, slice_channels(s, c, 2 * c), chw.dim(1), chw.dim(2));
}

double bias_mass(std::span<const Heatmap> normal_maps, const Mask& region) {
  if (normal_maps.empty()) throw ParameterError("bias_mass: no heatmaps");
  if ((region.array() != 0).count() == 0) throw ParameterError("bias_mass: region mask is empty");
  Heatmap mean = Heatmap::Zero(region.rows(), region.cols());
  for (const auto& m : normal_maps) {
    if (m.rows() != region.rows() || m.cols() != region.cols())
      throw DimensionError("bias_mass: heatmap and region mask extents differ");
    mean += m;
  }
  mean /= static_cast<double>(normal_maps.size());
  const double total = mean.sum();
  if (!(total > 0.0)) return 0.0;
  const double inside = (region.array() != 0).select(mean.array(), 0.0).sum();
  return inside / total;
}

std::string heatmap_stem(const std::string& split, std::size_t index, const std::string& stage) {
  return split + "_" + std::to_string(index) + "_" + stage;
}

void export_heatmap(const std::filesystem::path& dir, const std::string& stem, const Tensor& image,
                    const Heatmap& map) {
  write_file_atomic(dir / (stem + ".pgm"), encode_pnm(heatmap_to_gray(map)));
  write_file_atomic(dir / (stem + "_overlay.ppm"), encode_pnm(heat_overlay(image, map)));
}

}  // namespace raad
