#pragma once

#include "raad/models.hpp"
#include "raad/train.hpp"
#include "raad/types.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace raad {

/// Per-pixel mean over the channel axis of a [C,H,W] or [1,C,H,W] cube.
Heatmap channel_mean(const DiffCube& d);

struct AnomalyMap {
  Heatmap local;
  Heatmap global;
  Heatmap combined;
  Heatmap resized;
  double image_score = 0.0;
};

/// Local map from teacher vs student teacher-head, global map from
/// autoencoder vs student ae-head; their mean is upsampled to the input size
/// and its maximum is the image score.
AnomalyMap compose_maps(const Tensor& teacher_out, const Tensor& student_teacher_head, const Tensor& ae_out,
                        const Tensor& student_ae_head, std::size_t input_h, std::size_t input_w);

/// Runs the three networks on one image (CHW) and composes the maps.
AnomalyMap detect(const Network& teacher, const Network& student, const Network& ae, const Tensor& image);

/// Fraction of the mean heatmap's mass that falls inside `region`.
double bias_mass(std::span<const Heatmap> normal_maps, const Mask& region);

/// `<split>_<index>_<stage>`, the stem shared by the PGM heatmap and PPM overlay.
std::string heatmap_stem(const std::string& split, std::size_t index, const std::string& stage);

/// Writes `<stem>.pgm` and `<stem>_overlay.ppm` into `dir`.
void export_heatmap(const std::filesystem::path& dir, const std::string& stem, const Tensor& image,
                    const Heatmap& map);

}  // namespace raad
