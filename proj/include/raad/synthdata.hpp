#pragma once

#include "raad/tensor.hpp"
#include "raad/types.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace raad {

/// A fixed disk-with-grid object on a textured background whose phase,
/// orientation, frequency, amplitude and brightness change per image.
struct SceneSpec {
  std::size_t image_size = 64;
  double object_radius = 20.0;     // pixels, disk centred in the frame
  std::size_t grid_period = 5;     // pixels between grid lines on the object
  double amplitude_min = 0.15;     // background sinusoid amplitude range
  double amplitude_max = 0.30;
  double brightness_jitter = 0.10;  // +/- uniform offset of the background level
  double noise_sigma = 0.01;        // per-pixel Gaussian noise everywhere
  double min_variance_ratio = 10.0;  // background / object variance, checked at generation

  void validate() const;
};

enum class DefectKind { patch, scratch, hole };

const char* to_string(DefectKind kind);

struct DefectSpec {
  std::vector<DefectKind> kinds{DefectKind::patch, DefectKind::scratch, DefectKind::hole};
  std::size_t size_min = 4;  // pixels
  std::size_t size_max = 9;
  double contrast = 0.35;    // intensity change applied inside the defect
};

/// 1 on the background (the jittered region), 0 on the object.
Mask variable_mask(const SceneSpec& spec);

/// [3,S,S] in [0,1], fully determined by `subseed`.
Tensor render_normal(const SceneSpec& spec, std::uint64_t subseed);

struct AnomalousImage {
  Tensor image;
  Mask mask;
  DefectKind kind = DefectKind::patch;
};

/// The normal image for `subseed` with one defect stamped inside the object.
/// Throws SpecError if the largest allowed defect cannot fit inside it.
AnomalousImage render_anomalous(const SceneSpec& spec, const DefectSpec& defects, std::uint64_t subseed);

/// Per-index sub-seed of one image in one split.
std::uint64_t image_subseed(std::uint64_t seed, const std::string& split, const std::string& label, std::size_t index);

struct SplitCounts {
  std::size_t train = 200;
  std::size_t test_normal = 50;
  std::size_t test_anomalous = 50;
};

/// Writes PPM images, PGM masks, `manifest.csv`
/// (`split,path,label,mask_path_or_dash,subseed`), `checksums.txt`
/// (`path,fnv1a64-hex`) and `variable_mask.pgm` under `dir`.
/// Returns the measured background / object variance ratio.
double generate_split(const SceneSpec& spec, const SplitCounts& counts, const DefectSpec& defects,
                      std::uint64_t seed, const std::filesystem::path& dir);

struct Sample {
  std::string split;
  std::string path;
  Label label = Label::normal;
  Tensor image;
  Mask mask;  // all zero for normal images
  std::uint64_t subseed = 0;
};

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> test;
  Mask variable;
};

/// Reads the manifest, verifies every checksum and loads all images and masks.
Dataset load_dataset(const std::filesystem::path& dir);

std::string checksum_hex(const std::string& bytes);

}  // namespace raad
