#pragma once

#include "raad/checkpoint.hpp"
#include "raad/config.hpp"
#include "raad/maps.hpp"
#include "raad/synthdata.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace raad {

/// Evaluation stages of the ablation, in report order.
inline const std::vector<std::string>& eval_stages() {
  static const std::vector<std::string> s{"baseline", "quant", "raad"};
  return s;
}

struct EvalRow {
  std::string stage;
  double auroc = 0.0;
  double ap = 0.0;
  double aupro = 0.0;
  double bias_mass = 0.0;
  std::size_t n_normal = 0;
  std::size_t n_anom = 0;
  std::uint64_t seed = 0;
};

/// Header line plus one `stage,auroc,ap,aupro,bias_mass,n_normal,n_anom,seed` row each.
std::string format_eval_report(const std::vector<EvalRow>& rows);

/// Artifact metadata embedded in every stage checkpoint.
struct ArtifactMeta {
  std::string stage;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
};

void put_meta(Checkpoint& ckpt, const ArtifactMeta& meta);
ArtifactMeta get_meta(const Checkpoint& ckpt);

/// Worker count: RAAD_THREADS if set (>= 1), else the hardware concurrency.
std::size_t worker_threads();

/// Runs fn(i) for i in [0, n) on up to worker_threads() threads.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

struct StageNetworks {
  Network teacher;
  Network student;
  Network ae;
};

/// The batch stages. Each command checks its predecessor's artifact
/// metadata and writes its own outputs atomically under the output dir.
class Pipeline {
 public:
  explicit Pipeline(PipelineConfig cfg);

  const PipelineConfig& config() const { return cfg_; }
  std::filesystem::path checkpoint_dir() const { return cfg_.out_dir() / "checkpoints"; }
  std::filesystem::path report_dir() const { return cfg_.out_dir() / "reports"; }
  std::filesystem::path heatmap_dir() const { return cfg_.out_dir() / "heatmaps"; }

  void gen_data();
  void pretrain();
  void train();
  void score_layers();
  void quantize();
  void finetune();
  /// All stages unless one is named. Writes reports/eval.csv (or eval_<stage>.csv).
  std::vector<EvalRow> eval(const std::optional<std::string>& stage = std::nullopt);
  void heatmaps(const std::optional<std::string>& stage = std::nullopt);
  /// Writes reports/architecture.csv.
  void arch();

  /// gen-data through heatmaps in order.
  std::vector<EvalRow> run_all();

  /// Networks of one evaluation stage, loaded from the checkpoints.
  StageNetworks load_stage(const std::string& stage) const;

  /// Builds the untrained networks from the config geometry and seed.
  StageNetworks fresh_networks() const;

 private:
  Dataset dataset() const;
  std::vector<Tensor> calibration_images(const Dataset& ds) const;
  Checkpoint require(const std::string& file, const std::string& stage, const std::string& producer) const;
  void save(const std::string& file, Checkpoint ckpt, const std::string& stage) const;
  void report(const std::string& file, const std::string& text) const;

  PipelineConfig cfg_;
};

}  // namespace raad
