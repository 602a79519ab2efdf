#pragma once

#include <Eigen/Core>

#include <cstdint>

namespace raad {

/// Binary per-pixel mask, 1 = set.
using Mask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-pixel anomaly scores at some resolution.
using Heatmap = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Label { normal, anomalous };

inline const char* to_string(Label l) { return l == Label::normal ? "normal" : "anomalous"; }

}  // namespace raad
