#include "raad/pipeline.hpp"

#include "raad/errors.hpp"
#include "raad/hqs.hpp"
#include "raad/image_io.hpp"
#include "raad/metrics.hpp"
#include "raad/ops.hpp"
#include "raad/quant.hpp"
#include "raad/rng.hpp"
#include "raad/train.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

namespace raad {

namespace {

Tensor u64_tensor(std::uint64_t v) {
  Tensor t(Shape{4});
  for (std::size_t i = 0; i < 4; ++i) t[i] = static_cast<double>((v >> (16 * i)) & 0xFFFF);
  return t;
}

std::uint64_t tensor_u64(const Tensor& t) {
  if (t.numel() != 4) throw ParseError("metadata: 64-bit field must hold four 16-bit chunks");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v |= static_cast<std::uint64_t>(t[i]) << (16 * i);
  return v;
}

std::vector<Tensor> images_of(const std::vector<Sample>& samples) {
  std::vector<Tensor> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.image);
  return out;
}

void check_stage(const std::optional<std::string>& stage) {
  if (!stage) return;
  const auto& all = eval_stages();
  if (std::find(all.begin(), all.end(), *stage) == all.end())
    throw ConfigError("--stage: expected baseline, quant or raad, got '" + *stage + "'");
}

}  // namespace

std::string format_eval_report(const std::vector<EvalRow>& rows) {
  std::string out = "stage,auroc,ap,aupro,bias_mass,n_normal,n_anom,seed\n";
  for (const auto& r : rows)
    out += r.stage + "," + format_double(r.auroc) + "," + format_double(r.ap) + "," + format_double(r.aupro) + "," +
           format_double(r.bias_mass) + "," + std::to_string(r.n_normal) + "," + std::to_string(r.n_anom) + "," +
           std::to_string(r.seed) + "\n";
  return out;
}

void put_meta(Checkpoint& ckpt, const ArtifactMeta& meta) {
  Tensor name(Shape{meta.stage.size()});
  for (std::size_t i = 0; i < meta.stage.size(); ++i) name[i] = static_cast<unsigned char>(meta.stage[i]);
  ckpt.put("meta/stage", name);
  ckpt.put("meta/config_hash", u64_tensor(meta.config_hash));
  ckpt.put("meta/seed", u64_tensor(meta.seed));
}

ArtifactMeta get_meta(const Checkpoint& ckpt) {
  for (const char* key : {"meta/stage", "meta/config_hash", "meta/seed"})
    if (!ckpt.contains(key)) throw ParseError(std::string("metadata: missing ") + key);
  ArtifactMeta m;
  const Tensor& name = ckpt.get("meta/stage");
  for (std::size_t i = 0; i < name.numel(); ++i) m.stage.push_back(static_cast<char>(name[i]));
  m.config_hash = tensor_u64(ckpt.get("meta/config_hash"));
  m.seed = tensor_u64(ckpt.get("meta/seed"));
  return m;
}

std::size_t worker_threads() {
  if (const char* env = std::getenv("RAAD_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n >= 1) return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(worker_threads(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

Pipeline::Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.model.image_size = cfg_.data.scene.image_size;
  cfg_.train.seed = derive_seed(cfg_.seed, fnv1a64("train"));
  cfg_.validate();
}

Checkpoint Pipeline::require(const std::string& file, const std::string& stage, const std::string& producer) const {
  const auto path = checkpoint_dir() / file;
  if (!std::filesystem::exists(path))
    throw PipelineOrderError("missing artifact checkpoints/" + file + "; run `raad " + producer + "` first");
  const Checkpoint ckpt = load_checkpoint(path);
  const ArtifactMeta m = get_meta(ckpt);
  if (m.stage != stage)
    throw PipelineOrderError("artifact checkpoints/" + file + " holds stage '" + m.stage + "', expected '" + stage + "'");
  if (m.seed != cfg_.seed || m.config_hash != stage_config_hash(cfg_, stage))
    throw PipelineOrderError("artifact checkpoints/" + file + " was produced with a different config or seed; rerun `raad " +
                             producer + "`");
  return ckpt;
}

void Pipeline::save(const std::string& file, Checkpoint ckpt, const std::string& stage) const {
  put_meta(ckpt, {stage, stage_config_hash(cfg_, stage), cfg_.seed});
  std::filesystem::create_directories(checkpoint_dir());
  save_checkpoint(checkpoint_dir() / file, ckpt);
}

void Pipeline::report(const std::string& file, const std::string& text) const {
  std::filesystem::create_directories(report_dir());
  write_file_atomic(report_dir() / file, text);
}

Dataset Pipeline::dataset() const {
  require("dataset.ckpt", "data", "gen-data");
  return load_dataset(cfg_.data_dir());
}

std::vector<Tensor> Pipeline::calibration_images(const Dataset& ds) const {
  std::vector<std::size_t> idx(ds.train.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(derive_seed(cfg_.seed, fnv1a64("calibration")));
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  idx.resize(std::min(idx.size(), cfg_.calibration.images));
  std::sort(idx.begin(), idx.end());
  std::vector<Tensor> out;
  for (auto i : idx) out.push_back(ds.train[i].image);
  return out;
}

StageNetworks Pipeline::fresh_networks() const {
  const auto& g = cfg_.model;
  return {build_pdn(g.teacher_channels, 1, g, derive_seed(cfg_.seed, fnv1a64("teacher")), "teacher"),
          build_pdn(g.teacher_channels, g.student_multiplier, g, derive_seed(cfg_.seed, fnv1a64("student")), "student"),
          build_autoencoder(g.latent, g.teacher_channels, g, derive_seed(cfg_.seed, fnv1a64("ae")), "ae")};
}

void Pipeline::gen_data() {
  const double ratio = generate_split(cfg_.data.scene, cfg_.data.counts, cfg_.data.defects,
                                      derive_seed(cfg_.seed, fnv1a64("data")), cfg_.data_dir());
  report("config.json", dump_config(cfg_));
  report("data.csv", "variance_ratio\n" + format_double(ratio) + "\n");
  Checkpoint ckpt;
  save("dataset.ckpt", ckpt, "data");
}

void Pipeline::pretrain() {
  const Dataset ds = dataset();
  StageNetworks nets = fresh_networks();
  const Network extractor = build_extractor(derive_seed(cfg_.seed, fnv1a64("extractor")), cfg_.model);
  TrainConfig tc = cfg_.train;
  tc.lr = cfg_.pretrain.lr;
  tc.iterations = cfg_.pretrain.iterations;
  tc.seed = derive_seed(cfg_.seed, fnv1a64("pretrain"));
  const auto images = images_of(ds.train);
  const auto trace = pretrain_teacher(nets.teacher, extractor, images, tc);
  std::string log = "iter,loss\n";
  for (std::size_t i = 0; i < trace.size(); ++i) log += std::to_string(i + 1) + "," + format_double(trace[i]) + "\n";
  report("pretrain_loss.csv", log);
  Checkpoint ckpt;
  store_network(ckpt, nets.teacher, "teacher");
  save("teacher.ckpt", ckpt, "pretrain");
}

void Pipeline::train() {
  const Checkpoint tck = require("teacher.ckpt", "pretrain", "pretrain");
  const Dataset ds = dataset();
  StageNetworks nets = fresh_networks();
  load_network(nets.teacher, tck, "teacher");
  nets.teacher.set_frozen(true);
  nets.teacher.set_provenance("pretrained");
  const auto images = images_of(ds.train);
  const auto log = raad::train(nets.teacher, nets.student, nets.ae, images, cfg_.train);
  report("train_loss.csv", format_loss_log(log));
  Checkpoint ckpt;
  store_network(ckpt, nets.student, "student");
  store_network(ckpt, nets.ae, "ae");
  save("stage1.ckpt", ckpt, "train");
}

void Pipeline::score_layers() {
  const Checkpoint sck = require("stage1.ckpt", "train", "train");
  const Checkpoint tck = require("teacher.ckpt", "pretrain", "pretrain");
  const Dataset ds = dataset();
  StageNetworks nets = fresh_networks();
  load_network(nets.teacher, tck, "teacher");
  load_network(nets.student, sck, "student");
  load_network(nets.ae, sck, "ae");
  nets.teacher.set_provenance("pretrained");
  nets.student.set_provenance("trained");
  BitPolicy policy = cfg_.bit_policy;
  policy.forced_layers = {1, nets.student.conv_count()};
  const auto calib = calibration_images(ds);
  const HqsResult r = hqs_pipeline(nets.teacher, nets.student, nets.ae, calib, policy);
  report("hqs.csv", format_hqs_report(r));
  Checkpoint ckpt;
  Tensor bits(Shape{r.bits.size()});
  for (std::size_t i = 0; i < r.bits.size(); ++i) bits[i] = r.bits[i];
  ckpt.put("hqs/bits", bits);
  save("hqs.ckpt", ckpt, "score");
}

void Pipeline::quantize() {
  const Checkpoint hck = require("hqs.ckpt", "score", "score-layers");
  const Checkpoint sck = require("stage1.ckpt", "train", "train");
  const Checkpoint tck = require("teacher.ckpt", "pretrain", "pretrain");
  const Dataset ds = dataset();
  StageNetworks nets = fresh_networks();
  load_network(nets.teacher, tck, "teacher");
  load_network(nets.student, sck, "student");
  load_network(nets.ae, sck, "ae");

  std::vector<int> bits;
  const Tensor& hb = hck.get("hqs/bits");
  for (std::size_t i = 0; i < hb.numel(); ++i) bits.push_back(static_cast<int>(hb[i]));
  const std::vector<int> ae_bits(nets.ae.conv_count(), 8);

  const auto calib = calibration_images(ds);
  const std::size_t c = cfg_.model.teacher_channels;
  std::vector<Tensor> t_out, s_t, s_ae, a_out;
  {
    NoGrad ng;
    for (const auto& img : calib) {
      t_out.push_back(nets.teacher.forward(img));
      const Tensor s = nets.student.forward(img);
      s_t.push_back(slice_channels(s, 0, c));
      s_ae.push_back(slice_channels(s, c, 2 * c));
      a_out.push_back(nets.ae.forward(img));
    }
  }
  const auto t_cache = build_calibration_cache(nets.teacher, calib, [&](const Tensor& out, std::size_t i) {
    return pair_loss(out, s_t[i]);
  });
  const auto s_cache = build_calibration_cache(nets.student, calib, [&](const Tensor& out, std::size_t i) {
    return add(pair_loss(slice_channels(out, 0, c), t_out[i]), pair_loss(slice_channels(out, c, 2 * c), a_out[i]));
  });
  const auto a_cache = build_calibration_cache(nets.ae, calib, [&](const Tensor& out, std::size_t i) {
    return add(pair_loss(out, s_ae[i]), pair_loss(out, t_out[i]));
  });

  const QuantizedNetwork qt = quantize_network(nets.teacher, t_cache, bits, calib);
  const QuantizedNetwork qs = quantize_network(nets.student, s_cache, bits, calib);
  const QuantizedNetwork qa = quantize_network(nets.ae, a_cache, ae_bits, calib);
  report("quant_teacher.csv", format_quant_report(qt.report));
  report("quant_student.csv", format_quant_report(qs.report));
  report("quant_ae.csv", format_quant_report(qa.report));
  Checkpoint ckpt;
  store_network(ckpt, qt.net, "teacher");
  store_network(ckpt, qs.net, "student");
  store_network(ckpt, qa.net, "ae");
  save("quant.ckpt", ckpt, "quantize");
}

void Pipeline::finetune() {
  require("quant.ckpt", "quantize", "quantize");
  const Dataset ds = dataset();
  StageNetworks nets = load_stage("quant");
  nets.student.clear_activation_quant();
  nets.ae.clear_activation_quant();
  nets.student.set_frozen(false);
  nets.ae.set_frozen(false);
  const auto images = images_of(ds.train);
  const auto log = raad::train(nets.teacher, nets.student, nets.ae, images, cfg_.finetune_config());
  report("finetune_loss.csv", format_loss_log(log));
  Checkpoint ckpt;
  store_network(ckpt, nets.student, "student");
  store_network(ckpt, nets.ae, "ae");
  save("raad.ckpt", ckpt, "finetune");
}

StageNetworks Pipeline::load_stage(const std::string& stage) const {
  check_stage(stage);
  StageNetworks nets = fresh_networks();
  if (stage == "baseline") {
    const Checkpoint tck = require("teacher.ckpt", "pretrain", "pretrain");
    const Checkpoint sck = require("stage1.ckpt", "train", "train");
    load_network(nets.teacher, tck, "teacher");
    load_network(nets.student, sck, "student");
    load_network(nets.ae, sck, "ae");
    nets.student.set_provenance("trained");
    nets.ae.set_provenance("trained");
  } else {
    const Checkpoint qck = require("quant.ckpt", "quantize", "quantize");
    load_network(nets.teacher, qck, "teacher");
    if (stage == "quant") {
      load_network(nets.student, qck, "student");
      load_network(nets.ae, qck, "ae");
      nets.student.set_provenance("quantized");
      nets.ae.set_provenance("quantized");
    } else {
      const Checkpoint rck = require("raad.ckpt", "finetune", "finetune");
      load_network(nets.student, rck, "student");
      load_network(nets.ae, rck, "ae");
      nets.student.set_provenance("finetuned");
      nets.ae.set_provenance("finetuned");
    }
    nets.teacher.set_provenance("quantized");
  }
  nets.teacher.set_frozen(true);
  return nets;
}

std::vector<EvalRow> Pipeline::eval(const std::optional<std::string>& stage) {
  check_stage(stage);
  const Dataset ds = dataset();
  std::vector<std::string> stages = stage ? std::vector<std::string>{*stage} : eval_stages();
  std::vector<StageNetworks> nets;
  for (const auto& s : stages) nets.push_back(load_stage(s));

  std::vector<EvalRow> rows;
  for (std::size_t k = 0; k < stages.size(); ++k) {
    std::vector<AnomalyMap> maps(ds.test.size());
    parallel_for(ds.test.size(), [&](std::size_t i) {
      maps[i] = detect(nets[k].teacher, nets[k].student, nets[k].ae, ds.test[i].image);
    });
    EvalRow row;
    row.stage = stages[k];
    row.seed = cfg_.seed;
    std::vector<ScoredSample> samples;
    std::vector<Heatmap> resized, normal_maps;
    std::vector<Mask> masks;
    for (std::size_t i = 0; i < ds.test.size(); ++i) {
      samples.push_back({maps[i].image_score, ds.test[i].label});
      resized.push_back(maps[i].resized);
      masks.push_back(ds.test[i].mask);
      if (ds.test[i].label == Label::normal) {
        normal_maps.push_back(maps[i].resized);
        ++row.n_normal;
      } else {
        ++row.n_anom;
      }
    }
    row.auroc = auroc(samples);
    row.ap = average_precision(samples);
    row.aupro = au_pro(resized, masks, cfg_.eval.fpr_limit, cfg_.eval.connectivity);
    row.bias_mass = bias_mass(normal_maps, ds.variable);
    rows.push_back(row);
  }
  report(stage ? "eval_" + *stage + ".csv" : "eval.csv", format_eval_report(rows));
  return rows;
}

void Pipeline::heatmaps(const std::optional<std::string>& stage) {
  check_stage(stage);
  const Dataset ds = dataset();
  const std::vector<std::string> stages = stage ? std::vector<std::string>{*stage} : eval_stages();
  std::filesystem::create_directories(heatmap_dir());
  for (const auto& s : stages) {
    const StageNetworks nets = load_stage(s);
    std::vector<Heatmap> normal(ds.test.size());
    parallel_for(ds.test.size(), [&](std::size_t i) {
      const AnomalyMap m = detect(nets.teacher, nets.student, nets.ae, ds.test[i].image);
      export_heatmap(heatmap_dir(), heatmap_stem("test", i, s), ds.test[i].image, m.resized);
      if (ds.test[i].label == Label::normal) normal[i] = m.resized;
    });
    Heatmap mean = Heatmap::Zero(ds.variable.rows(), ds.variable.cols());
    std::size_t n = 0;
    for (const auto& m : normal)
      if (m.size()) {
        mean += m;
        ++n;
      }
    if (n) write_file_atomic(heatmap_dir() / ("mean_normal_" + s + ".pgm"), encode_pnm(heatmap_to_gray(mean / static_cast<double>(n))));
  }
}

void Pipeline::arch() {
  const StageNetworks nets = fresh_networks();
  const Network extractor = build_extractor(derive_seed(cfg_.seed, fnv1a64("extractor")), cfg_.model);
  const Shape in{cfg_.model.image_channels, cfg_.model.image_size, cfg_.model.image_size};
  std::string out;
  for (const Network* n : {&extractor, &nets.teacher, &nets.student, &nets.ae})
    out += architecture_summary(*n, in);
  report("architecture.csv", out);
}

std::vector<EvalRow> Pipeline::run_all() {
  gen_data();
  pretrain();
  train();
  score_layers();
  quantize();
  finetune();
  auto rows = eval();
  heatmaps();
  return rows;
}

}  // namespace raad
