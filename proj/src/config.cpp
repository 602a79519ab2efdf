#include "raad/config.hpp"

#include "raad/checkpoint.hpp"
#include "raad/errors.hpp"
#include "raad/rng.hpp"

#include <json.hpp>

#include <set>

namespace raad {

using nlohmann::json;

namespace {

const char* type_name(const json& j) { return j.type_name(); }

// Reads the keys of one JSON object, remembering which were consumed so the
// leftovers can be reported.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object, got " + type_name(j_));
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void read(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(field(key) + ": expected a number, got " + type_name(*v));
      out = v->get<double>();
    }
  }
  void read(const std::string& key, std::size_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(field(key) + ": expected a nonnegative integer, got " + v->dump());
      out = v->get<std::size_t>();
    }
  }
  void read(const std::string& key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(field(key) + ": expected an integer, got " + v->dump());
      out = v->get<int>();
    }
  }
  void read(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(field(key) + ": expected a string, got " + type_name(*v));
      out = v->get<std::string>();
    }
  }
  template <typename T>
  void read(const std::string& key, std::optional<T>& out) {
    if (j_.contains(key)) {
      T v{};
      read(key, v);
      out = v;
    } else {
      seen_.insert(key);
    }
  }
  template <typename T>
  void read_list(const std::string& key, std::vector<T>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(field(key) + ": expected an array, got " + type_name(*v));
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        const json& e = (*v)[i];
        const std::string f = field(key) + "[" + std::to_string(i) + "]";
        if constexpr (std::is_same_v<T, int>) {
          if (!e.is_number_integer()) throw ConfigError(f + ": expected an integer, got " + e.dump());
        } else {
          if (!e.is_number()) throw ConfigError(f + ": expected a number, got " + e.dump());
        }
        out.push_back(e.get<T>());
      }
    }
  }

  ObjectReader child(const std::string& key) {
    static const json empty = json::object();
    const json* v = find(key);
    return ObjectReader(v ? *v : empty, field(key));
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ConfigError(field(key) + ": unknown key");
  }

 private:
  std::string where() const { return path_.empty() ? "<root>" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

DefectKind parse_kind(const std::string& s, const std::string& field) {
  if (s == "patch") return DefectKind::patch;
  if (s == "scratch") return DefectKind::scratch;
  if (s == "hole") return DefectKind::hole;
  throw ConfigError(field + ": unknown defect kind '" + s + "'");
}

void read_train(ObjectReader r, TrainConfig& t) {
  r.read("lambda_ts", t.lambda_ts);
  r.read("lambda_aes", t.lambda_aes);
  r.read("lambda_tae", t.lambda_tae);
  r.read("lr", t.lr);
  r.read("iterations", t.iterations);
  r.read("batch", t.batch);
  r.read("hard_fraction", t.hard_fraction);
  r.finish();
}

json train_json(const TrainConfig& t) {
  return {{"lambda_ts", t.lambda_ts}, {"lambda_aes", t.lambda_aes}, {"lambda_tae", t.lambda_tae}, {"lr", t.lr},
          {"iterations", t.iterations}, {"batch", t.batch}, {"hard_fraction", t.hard_fraction}};
}

json to_json(const PipelineConfig& c) {
  json kinds = json::array();
  for (auto k : c.data.defects.kinds) kinds.push_back(to_string(k));
  const auto& sc = c.data.scene;
  json ft = json::object();
  const auto& f = c.finetune;
  if (f.lambda_ts) ft["lambda_ts"] = *f.lambda_ts;
  if (f.lambda_aes) ft["lambda_aes"] = *f.lambda_aes;
  if (f.lambda_tae) ft["lambda_tae"] = *f.lambda_tae;
  if (f.lr) ft["lr"] = *f.lr;
  if (f.hard_fraction) ft["hard_fraction"] = *f.hard_fraction;
  if (f.iterations) ft["iterations"] = *f.iterations;
  if (f.batch) ft["batch"] = *f.batch;
  return {
      {"seed", c.seed},
      {"data",
       {{"dir", c.data.dir},
        {"scene",
         {{"image_size", sc.image_size},
          {"object_radius", sc.object_radius},
          {"grid_period", sc.grid_period},
          {"amplitude_min", sc.amplitude_min},
          {"amplitude_max", sc.amplitude_max},
          {"brightness_jitter", sc.brightness_jitter},
          {"noise_sigma", sc.noise_sigma},
          {"min_variance_ratio", sc.min_variance_ratio}}},
        {"counts",
         {{"train", c.data.counts.train},
          {"test_normal", c.data.counts.test_normal},
          {"test_anomalous", c.data.counts.test_anomalous}}},
        {"defects",
         {{"kinds", kinds},
          {"size_min", c.data.defects.size_min},
          {"size_max", c.data.defects.size_max},
          {"contrast", c.data.defects.contrast}}}}},
      {"model",
       {{"teacher_channels", c.model.teacher_channels},
        {"hidden_channels", c.model.hidden_channels},
        {"latent", c.model.latent}}},
      {"pretrain", {{"lr", c.pretrain.lr}, {"iterations", c.pretrain.iterations}}},
      {"train", train_json(c.train)},
      {"finetune", ft},
      {"calibration", {{"images", c.calibration.images}, {"sweeps", c.calibration.sweeps}}},
      {"bit_policy", {{"thresholds", c.bit_policy.thresholds}, {"bits", c.bit_policy.bits}}},
      {"eval", {{"fpr_limit", c.eval.fpr_limit}, {"connectivity", c.eval.connectivity}}},
  };
}

}  // namespace

TrainConfig PipelineConfig::finetune_config() const {
  TrainConfig t = train;
  t.iterations = 1500;
  if (finetune.lambda_ts) t.lambda_ts = *finetune.lambda_ts;
  if (finetune.lambda_aes) t.lambda_aes = *finetune.lambda_aes;
  if (finetune.lambda_tae) t.lambda_tae = *finetune.lambda_tae;
  if (finetune.lr) t.lr = *finetune.lr;
  if (finetune.hard_fraction) t.hard_fraction = *finetune.hard_fraction;
  if (finetune.iterations) t.iterations = *finetune.iterations;
  if (finetune.batch) t.batch = *finetune.batch;
  t.seed = derive_seed(seed, fnv1a64("finetune"));
  return t;
}

std::filesystem::path PipelineConfig::data_dir() const {
  return data.dir.empty() ? out_dir() / "data" : std::filesystem::path(data.dir);
}

void PipelineConfig::validate() const {
  try {
    data.scene.validate();
  } catch (const SpecError& e) {
    throw ConfigError(std::string("data.scene: ") + e.what());
  }
  if (data.counts.train == 0) throw ConfigError("data.counts.train: must be at least 1");
  if (data.counts.test_normal == 0) throw ConfigError("data.counts.test_normal: must be at least 1");
  if (data.defects.kinds.empty()) throw ConfigError("data.defects.kinds: must not be empty");
  if (data.defects.size_min == 0 || data.defects.size_max < data.defects.size_min)
    throw ConfigError("data.defects.size_min: size range is empty");
  if (model.image_size % 16 != 0 || model.image_size < 32)
    throw ConfigError("data.scene.image_size: must be a multiple of 16 and at least 32");
  if (model.teacher_channels == 0 || model.hidden_channels == 0 || model.latent == 0)
    throw ConfigError("model: channel counts must be positive");
  if (!(pretrain.lr > 0.0)) throw ConfigError("pretrain.lr: must be positive");
  try {
    train.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  try {
    finetune_config().validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("finetune: ") + e.what());
  }
  if (calibration.images == 0) throw ConfigError("calibration.images: must be at least 1");
  if (calibration.sweeps == 0) throw ConfigError("calibration.sweeps: must be at least 1");
  try {
    bit_policy.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("bit_policy: ") + e.what());
  }
  if (!(eval.fpr_limit > 0.0 && eval.fpr_limit <= 1.0)) throw ConfigError("eval.fpr_limit: must lie in (0,1]");
  if (eval.connectivity != 4 && eval.connectivity != 8) throw ConfigError("eval.connectivity: must be 4 or 8");
}

PipelineConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON at byte ") + std::to_string(e.byte) + ": " + e.what());
  }
  PipelineConfig c;
  ObjectReader r(root, "");
  if (const json* s = r.find("seed")) {
    if (!s->is_number_unsigned()) throw ConfigError("seed: expected a nonnegative integer, got " + s->dump());
    c.seed = s->get<std::uint64_t>();
  }
  r.read("out", c.out);
  {
    auto d = r.child("data");
    d.read("dir", c.data.dir);
    {
      auto s = d.child("scene");
      auto& sc = c.data.scene;
      s.read("image_size", sc.image_size);
      s.read("object_radius", sc.object_radius);
      s.read("grid_period", sc.grid_period);
      s.read("amplitude_min", sc.amplitude_min);
      s.read("amplitude_max", sc.amplitude_max);
      s.read("brightness_jitter", sc.brightness_jitter);
      s.read("noise_sigma", sc.noise_sigma);
      s.read("min_variance_ratio", sc.min_variance_ratio);
      s.finish();
    }
    {
      auto n = d.child("counts");
      n.read("train", c.data.counts.train);
      n.read("test_normal", c.data.counts.test_normal);
      n.read("test_anomalous", c.data.counts.test_anomalous);
      n.finish();
    }
    {
      auto df = d.child("defects");
      if (const json* k = df.find("kinds")) {
        if (!k->is_array()) throw ConfigError(df.field("kinds") + ": expected an array");
        c.data.defects.kinds.clear();
        for (std::size_t i = 0; i < k->size(); ++i) {
          const std::string f = df.field("kinds") + "[" + std::to_string(i) + "]";
          if (!(*k)[i].is_string()) throw ConfigError(f + ": expected a string");
          c.data.defects.kinds.push_back(parse_kind((*k)[i].get<std::string>(), f));
        }
      }
      df.read("size_min", c.data.defects.size_min);
      df.read("size_max", c.data.defects.size_max);
      df.read("contrast", c.data.defects.contrast);
      df.finish();
    }
    d.finish();
  }
  {
    auto m = r.child("model");
    m.read("teacher_channels", c.model.teacher_channels);
    m.read("hidden_channels", c.model.hidden_channels);
    m.read("latent", c.model.latent);
    m.finish();
  }
  c.model.image_size = c.data.scene.image_size;
  {
    auto p = r.child("pretrain");
    p.read("lr", c.pretrain.lr);
    p.read("iterations", c.pretrain.iterations);
    p.finish();
  }
  read_train(r.child("train"), c.train);
  {
    auto f = r.child("finetune");
    f.read("lambda_ts", c.finetune.lambda_ts);
    f.read("lambda_aes", c.finetune.lambda_aes);
    f.read("lambda_tae", c.finetune.lambda_tae);
    f.read("lr", c.finetune.lr);
    f.read("hard_fraction", c.finetune.hard_fraction);
    f.read("iterations", c.finetune.iterations);
    f.read("batch", c.finetune.batch);
    f.finish();
  }
  {
    auto k = r.child("calibration");
    k.read("images", c.calibration.images);
    k.read("sweeps", c.calibration.sweeps);
    k.finish();
  }
  {
    auto b = r.child("bit_policy");
    b.read_list("thresholds", c.bit_policy.thresholds);
    b.read_list("bits", c.bit_policy.bits);
    b.finish();
  }
  {
    auto e = r.child("eval");
    e.read("fpr_limit", c.eval.fpr_limit);
    e.read("connectivity", c.eval.connectivity);
    e.finish();
  }
  r.finish();
  c.train.seed = derive_seed(c.seed, fnv1a64("train"));
  c.validate();
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config: file not found: " + path.string());
  return parse_config(read_file(path));
}

std::string dump_config(const PipelineConfig& cfg) {
  json j = to_json(cfg);
  j["data"].erase("dir");
  return j.dump(2) + "\n";
}

std::uint64_t stage_config_hash(const PipelineConfig& cfg, const std::string& stage) {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> order = {
      {"data", {"data"}},
      {"pretrain", {"model", "pretrain"}},
      {"train", {"train"}},
      {"score", {"calibration", "bit_policy"}},
      {"quantize", {}},
      {"finetune", {"finetune"}},
  };
  json j = to_json(cfg);
  j["data"].erase("dir");
  json picked = {{"seed", cfg.seed}};
  for (const auto& [name, sections] : order) {
    for (const auto& s : sections) picked[s] = j[s];
    if (name == stage) return fnv1a64(picked.dump());
  }
  throw ContractError("stage_config_hash: unknown stage '" + stage + "'");
}

}  // namespace raad
