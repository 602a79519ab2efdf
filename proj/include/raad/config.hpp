#pragma once

#include "raad/hqs.hpp"
#include "raad/models.hpp"
#include "raad/synthdata.hpp"
#include "raad/train.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace raad {

struct DataConfig {
  std::string dir;  // empty: <out>/data
  SceneSpec scene;
  SplitCounts counts;
  DefectSpec defects;
};

struct PretrainConfig {
  double lr = 1e-3;
  std::size_t iterations = 600;
};

struct CalibrationConfig {
  std::size_t images = 32;
  std::size_t sweeps = 2;
};

struct EvalConfig {
  double fpr_limit = 0.3;
  int connectivity = 4;
};

/// Stage-3 overrides; unset fields fall back to the stage-1 values.
struct FinetuneOverrides {
  std::optional<double> lambda_ts, lambda_aes, lambda_tae, lr, hard_fraction;
  std::optional<std::size_t> iterations, batch;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::string out = "out";
  DataConfig data;
  ModelGeometry model;
  PretrainConfig pretrain;
  TrainConfig train;
  FinetuneOverrides finetune;
  CalibrationConfig calibration;
  BitPolicy bit_policy;
  EvalConfig eval;

  /// Stage-3 training config: stage-1 values with the overrides applied.
  TrainConfig finetune_config() const;

  std::filesystem::path out_dir() const { return out; }
  std::filesystem::path data_dir() const;

  void validate() const;
};

/// Parses a JSON document. Every key is optional; unknown keys and type
/// mismatches raise ConfigError naming the field path (e.g. `train.lr`).
PipelineConfig parse_config(const std::string& json_text);
PipelineConfig load_config(const std::filesystem::path& path);

/// Canonical JSON of the resolved config (defaults filled in). Output
/// locations are left out so reruns into another directory compare equal.
std::string dump_config(const PipelineConfig& cfg);

/// Hash of the config sections an artifact of `stage` depends on.
/// Stages in order: data, pretrain, train, score, quantize, finetune.
std::uint64_t stage_config_hash(const PipelineConfig& cfg, const std::string& stage);

}  // namespace raad
