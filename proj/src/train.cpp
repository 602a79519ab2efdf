#include "raad/train.hpp"

#include "raad/errors.hpp"
#include "raad/ops.hpp"
#include "raad/rng.hpp"

#include <charconv>
#include <optional>

namespace raad {

void TrainConfig::validate() const {
  if (lambda_ts < 0 || lambda_aes < 0 || lambda_tae < 0) throw ConfigError("train: loss weights must be >= 0");
  if (!(hard_fraction > 0.0 && hard_fraction <= 1.0)) throw ConfigError("train: hard_fraction must lie in (0, 1]");
  if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
  if (batch == 0) throw ConfigError("train: batch must be >= 1");
}

DiffCube diff_cube(const Tensor& a, const Tensor& b) { return {square(sub(a, b))}; }

Tensor pair_loss(const Tensor& a, const Tensor& b) { return mse_mean(a, b); }

Tensor hard_mined_loss(const DiffCube& d, double fraction) {
  if (d.values.numel() == 0) throw ContractError("hard_mined_loss: empty difference cube");
  return top_k_mean(d.values, fraction);
}

JointOptimizer::JointOptimizer(const Network& student_net, const Network& ae_net, double lr)
    : student(student_net.parameters(), AdamConfig{lr}), ae(ae_net.parameters(), AdamConfig{lr}) {}

LossBreakdown joint_step(const Network& teacher, Network& student, Network& ae, const Tensor& images,
                         const TrainConfig& cfg, JointOptimizer& opt, const Tensor* teacher_out) {
  if (!teacher.frozen()) throw ContractError("joint_step: teacher must be frozen");
  Tensor t_out;
  if (teacher_out) {
    t_out = *teacher_out;
  } else {
    NoGrad ng;
    t_out = teacher.forward(images);
  }
  const std::size_t c = t_out.dim(1);

  Tape tape;
  LossBreakdown out;
  {
    Tape::Recording rec(tape);
    Tensor s_out = student.forward(images);
    if (s_out.dim(1) != 2 * c)
      throw DimensionError("joint_step: student axis 1 has " + std::to_string(s_out.dim(1)) +
                           " channels, expected twice the teacher's " + std::to_string(c));
    Tensor s_teacher_head = slice_channels(s_out, 0, c);
    Tensor s_ae_head = slice_channels(s_out, c, 2 * c);
    Tensor a_out = ae.forward(images);

    Tensor l_ts = hard_mined_loss(diff_cube(t_out, s_teacher_head), cfg.hard_fraction);
    Tensor l_aes = pair_loss(a_out, s_ae_head);
    Tensor l_tae = pair_loss(t_out, a_out);
    Tensor total = add(add(scale(l_ts, cfg.lambda_ts), scale(l_aes, cfg.lambda_aes)), scale(l_tae, cfg.lambda_tae));
    out = {l_ts.item(), l_aes.item(), l_tae.item(), total.item()};
    backward(total, tape);
  }
  // Parameters off the active loss path (e.g. the autoencoder when both of
  // its weights are 0) still need a gradient entry for the update.
  for (auto* net : {&student, &ae})
    for (auto& [n, p] : net->parameters())
      if (p.requires_grad() && !p.has_grad()) p.accumulate_grad(Buffer::Zero(static_cast<Eigen::Index>(p.numel())));
  adam_step(student.parameters(), opt.student);
  adam_step(ae.parameters(), opt.ae);
  return out;
}

std::vector<double> pretrain_teacher(Network& teacher, const Network& extractor, std::span<const Tensor> images,
                                     const TrainConfig& cfg) {
  if (!extractor.frozen()) throw ContractError("pretrain_teacher: extractor must be frozen");
  if (images.empty()) throw DatasetError("pretrain_teacher: no images");
  std::vector<std::optional<Tensor>> targets(images.size());
  AdamState state(teacher.parameters(), AdamConfig{cfg.lr});
  Rng rng(derive_seed(cfg.seed, 0x7072657472ull));
  std::vector<double> trace;
  trace.reserve(cfg.iterations);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::vector<Tensor> batch, target;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const auto i = static_cast<std::size_t>(rng.below(images.size()));
      if (!targets[i]) {
        NoGrad ng;
        targets[i] = extractor.forward(images[i]);
      }
      batch.push_back(images[i]);
      target.push_back(*targets[i]);
    }
    const Tensor x = concat_batch(batch);
    const Tensor e = concat_batch(target);
    Tape tape;
    Tape::Recording rec(tape);
    Tensor t = teacher.forward(x);
    if (t.shape() != e.shape())
      throw ConfigError("pretrain_teacher: teacher output " + shape_string(t.shape()) + " does not match extractor " +
                        shape_string(e.shape()));
    Tensor loss = mse_mean(e, t);
    trace.push_back(loss.item());
    backward(loss, tape);
    adam_step(teacher.parameters(), state);
  }
  teacher.set_provenance("pretrained");
  return trace;
}

std::vector<LossBreakdown> train(const Network& teacher, Network& student, Network& ae,
                                 std::span<const Tensor> images, const TrainConfig& cfg) {
  cfg.validate();
  if (images.empty()) throw DatasetError("train: no training images");
  JointOptimizer opt(student, ae, cfg.lr);
  std::vector<std::optional<Tensor>> teacher_cache(images.size());
  Rng rng(derive_seed(cfg.seed, 0x747261696eull));
  std::vector<LossBreakdown> log;
  log.reserve(cfg.iterations);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::vector<Tensor> batch, t_out;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const auto i = static_cast<std::size_t>(rng.below(images.size()));
      if (!teacher_cache[i]) {
        NoGrad ng;
        teacher_cache[i] = teacher.forward(images[i]);
      }
      batch.push_back(images[i]);
      t_out.push_back(*teacher_cache[i]);
    }
    const Tensor x = concat_batch(batch);
    const Tensor t = concat_batch(t_out);
    log.push_back(joint_step(teacher, student, ae, x, cfg, opt, &t));
  }
  return log;
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, end);
}

std::string format_loss_log(const std::vector<LossBreakdown>& log) {
  std::string out;
  for (std::size_t i = 0; i < log.size(); ++i) {
    const auto& l = log[i];
    out += std::to_string(i + 1) + "," + format_double(l.ts) + "," + format_double(l.aes) + "," +
           format_double(l.tae) + "," + format_double(l.total) + "\n";
  }
  return out;
}

}  // namespace raad
