#pragma once

#include "raad/models.hpp"
#include "raad/optim.hpp"
#include "raad/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace raad {

struct TrainConfig {
  double lambda_ts = 1.0;
  double lambda_aes = 1.0;
  double lambda_tae = 1.0;
  double lr = 1e-3;
  std::size_t iterations = 2000;
  std::size_t batch = 1;
  double hard_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Elementwise squared difference D = (a - b)^2 of two feature cubes.
struct DiffCube {
  Tensor values;
};

DiffCube diff_cube(const Tensor& a, const Tensor& b);

/// (CWH)^-1 * sum_c ||a_c - b_c||_F^2.
Tensor pair_loss(const Tensor& a, const Tensor& b);

/// Mean of the top ceil(fraction * |D|) entries of D, ranked jointly over
/// all (c, w, h); only those entries receive gradient.
Tensor hard_mined_loss(const DiffCube& d, double fraction);

struct LossBreakdown {
  double ts = 0.0;
  double aes = 0.0;
  double tae = 0.0;
  double total = 0.0;
};

/// Adam states for the two networks updated by joint training.
struct JointOptimizer {
  AdamState student;
  AdamState ae;

  JointOptimizer(const Network& student, const Network& ae, double lr);
};

/// One weighted three-term step on `images` (NCHW), followed by one Adam
/// update of student and autoencoder. `teacher_out` may be supplied when the
/// (frozen) teacher output for this batch is already known.
LossBreakdown joint_step(const Network& teacher, Network& student, Network& ae, const Tensor& images,
                         const TrainConfig& cfg, JointOptimizer& opt, const Tensor* teacher_out = nullptr);

/// Adam on mean ||E(I) - T(I)||^2. Returns the per-iteration loss trace.
std::vector<double> pretrain_teacher(Network& teacher, const Network& extractor, std::span<const Tensor> images,
                                     const TrainConfig& cfg);

/// Joint training over a normal-only image set. Images are drawn with a
/// seed-determined schedule; the frozen teacher's outputs are cached.
std::vector<LossBreakdown> train(const Network& teacher, Network& student, Network& ae,
                                 std::span<const Tensor> images, const TrainConfig& cfg);

/// `iter,L_ts,L_aes,L_tae,total` lines with 17 significant digits.
std::string format_loss_log(const std::vector<LossBreakdown>& log);

/// Shortest-exact style decimal with 17 significant digits.
std::string format_double(double v);

}  // namespace raad
