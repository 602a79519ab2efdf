// raad: batch driver for the train / quantize / fine-tune pipeline.

#include "raad/config.hpp"
#include "raad/errors.hpp"
#include "raad/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace {

int exit_code(const raad::Error& e) {
  if (dynamic_cast<const raad::ConfigError*>(&e)) return 2;
  if (dynamic_cast<const raad::PipelineOrderError*>(&e)) return 3;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Teacher-student anomaly detection with mixed-precision quantization and fine-tuning"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> stage;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "render the synthetic dataset"},
      {"pretrain", "distil the extractor into the teacher"},
      {"train", "jointly train student and autoencoder"},
      {"score-layers", "score layers and assign bit widths"},
      {"quantize", "calibrate and quantize all three networks"},
      {"finetune", "fine-tune student and autoencoder against the quantized teacher"},
      {"eval", "evaluate baseline, quantized and fine-tuned stages"},
      {"heatmaps", "export per-image heatmaps and overlays"},
      {"arch", "write the architecture tables"},
      {"all", "run every stage in order"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "pipeline config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out, "override the output directory");
    if (name == "eval" || name == "heatmaps")
      sub->add_option("--stage", stage, "restrict to one stage")->check(CLI::IsMember({"baseline", "quant", "raad"}));
  }

  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    raad::PipelineConfig cfg = raad::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (out) cfg.out = *out;
    raad::Pipeline p(cfg);

    if (command == "gen-data") p.gen_data();
    else if (command == "pretrain") p.pretrain();
    else if (command == "train") p.train();
    else if (command == "score-layers") p.score_layers();
    else if (command == "quantize") p.quantize();
    else if (command == "finetune") p.finetune();
    else if (command == "eval") std::cout << raad::format_eval_report(p.eval(stage));
    else if (command == "heatmaps") p.heatmaps(stage);
    else if (command == "arch") p.arch();
    else if (command == "all") std::cout << raad::format_eval_report(p.run_all());
  } catch (const raad::Error& e) {
    std::cerr << "raad " << command << ": " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "raad " << command << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
