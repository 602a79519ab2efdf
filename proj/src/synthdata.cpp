#include "raad/synthdata.hpp"

#include "raad/checkpoint.hpp"
#include "raad/errors.hpp"
#include "raad/image_io.hpp"
#include "raad/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

namespace raad {

namespace {

constexpr double kObjectBase[3] = {0.72, 0.66, 0.52};
constexpr double kObjectGrid[3] = {0.42, 0.38, 0.30};
constexpr double kObjectRim[3] = {0.30, 0.30, 0.32};
constexpr double kBackgroundTint[3] = {1.0, 0.9, 0.8};

double to_8bit(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

double centre(const SceneSpec& spec) { return (static_cast<double>(spec.image_size) - 1.0) / 2.0; }

bool on_object(const SceneSpec& spec, double y, double x) {
  const double c = centre(spec);
  return std::hypot(y - c, x - c) <= spec.object_radius;
}

// Largest distance from a defect's centre to any pixel it may touch.
double defect_reach(std::size_t size) { return std::ceil(static_cast<double>(size) * std::numbers::sqrt2 / 2.0) + 1.0; }

std::string zero_pad(std::size_t i, std::size_t width) {
  std::string s = std::to_string(i);
  return std::string(width > s.size() ? width - s.size() : 0, '0') + s;
}

}  // namespace

void SceneSpec::validate() const {
  if (image_size < 16) throw SpecError("scene: image_size must be at least 16");
  if (!(object_radius > 2.0) || object_radius * 2.0 >= static_cast<double>(image_size))
    throw SpecError("scene: object_radius must be positive and leave background on every side");
  if (grid_period < 2) throw SpecError("scene: grid_period must be at least 2");
  if (!(amplitude_min >= 0.0 && amplitude_max >= amplitude_min)) throw SpecError("scene: amplitude range is empty");
  if (!(noise_sigma >= 0.0) || !(brightness_jitter >= 0.0)) throw SpecError("scene: jitter and noise must be nonnegative");
}

const char* to_string(DefectKind kind) {
  switch (kind) {
    case DefectKind::patch: return "patch";
    case DefectKind::scratch: return "scratch";
    case DefectKind::hole: return "hole";
  }
  return "?";
}

Mask variable_mask(const SceneSpec& spec) {
  const auto s = static_cast<Eigen::Index>(spec.image_size);
  Mask m(s, s);
  for (Eigen::Index y = 0; y < s; ++y)
    for (Eigen::Index x = 0; x < s; ++x)
      m(y, x) = on_object(spec, static_cast<double>(y), static_cast<double>(x)) ? 0 : 1;
  return m;
}

Tensor render_normal(const SceneSpec& spec, std::uint64_t subseed) {
  spec.validate();
  Rng rng(subseed);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double theta = rng.uniform(0.0, std::numbers::pi);
  const double freq = rng.uniform(1.0 / 16.0, 1.0 / 8.0);
  const double amp = rng.uniform(spec.amplitude_min, spec.amplitude_max);
  const double level = 0.45 + rng.uniform(-spec.brightness_jitter, spec.brightness_jitter);

  const std::size_t s = spec.image_size, hw = s * s;
  const double c = centre(spec);
  const auto period = static_cast<long>(spec.grid_period);
  Tensor img(Shape{3, s, s});
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) {
      const double fy = static_cast<double>(y), fx = static_cast<double>(x);
      const double r = std::hypot(fy - c, fx - c);
      const double* colour = nullptr;
      double bg = 0.0;
      if (r <= spec.object_radius) {
        const long gy = std::lround(fy - c), gx = std::lround(fx - c);
        if (r > spec.object_radius - 1.5)
          colour = kObjectRim;
        else if (gy % period == 0 || gx % period == 0)
          colour = kObjectGrid;
        else
          colour = kObjectBase;
      } else {
        bg = level + amp * std::sin(2.0 * std::numbers::pi * freq * (fx * std::cos(theta) + fy * std::sin(theta)) + phase);
      }
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double base = colour ? colour[ch] : bg * kBackgroundTint[ch];
        img[ch * hw + y * s + x] = base + spec.noise_sigma * rng.normal();
      }
    }
  for (std::size_t i = 0; i < img.numel(); ++i) img[i] = to_8bit(img[i]);
  return img;
}

AnomalousImage render_anomalous(const SceneSpec& spec, const DefectSpec& defects, std::uint64_t subseed) {
  if (defects.kinds.empty()) throw SpecError("defects: no defect kinds enabled");
  if (defects.size_min == 0 || defects.size_max < defects.size_min) throw SpecError("defects: size range is empty");
  const double reach = defect_reach(defects.size_max);
  const double room = spec.object_radius - 2.0 - reach;
  if (room < 0.0)
    throw SpecError("defects: size_max " + std::to_string(defects.size_max) +
                    " does not fit inside the invariant object of radius " + std::to_string(spec.object_radius));

  AnomalousImage out;
  out.image = render_normal(spec, subseed);
  Rng rng(derive_seed(subseed, fnv1a64("defect")));
  out.kind = defects.kinds[rng.below(defects.kinds.size())];
  const auto size = static_cast<double>(defects.size_min + rng.below(defects.size_max - defects.size_min + 1));
  const double rad = room * std::sqrt(rng.uniform());
  const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double cy = centre(spec) + rad * std::sin(ang), cx = centre(spec) + rad * std::cos(ang);
  const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
  const double dir = rng.uniform(0.0, std::numbers::pi);

  const std::size_t s = spec.image_size, hw = s * s;
  out.mask = Mask::Zero(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s));
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      bool inside = false;
      switch (out.kind) {
        case DefectKind::patch:
          inside = std::abs(dy) <= size / 2.0 && std::abs(dx) <= size / 2.0;
          break;
        case DefectKind::hole:
          inside = std::hypot(dy, dx) <= size / 2.0;
          break;
        case DefectKind::scratch: {
          const double along = dx * std::cos(dir) + dy * std::sin(dir);
          const double across = -dx * std::sin(dir) + dy * std::cos(dir);
          inside = std::abs(along) <= size / 2.0 && std::abs(across) <= 0.75;
          break;
        }
      }
      if (!inside) continue;
      if (!on_object(spec, static_cast<double>(y), static_cast<double>(x)))
        throw SpecError("defects: defect pixel escaped the invariant region");
      out.mask(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x)) = 1;
      // foreign material: a one-pixel checker the training images never show
      const double checker = (x + y) % 2 ? 1.0 : -1.0;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        double& v = out.image[ch * hw + y * s + x];
        switch (out.kind) {
          case DefectKind::patch: v = kObjectBase[ch] + checker * sign * defects.contrast; break;
          case DefectKind::scratch: v = v + defects.contrast; break;
          case DefectKind::hole: v = v - 2.0 * defects.contrast; break;
        }
        v = to_8bit(v);
      }
    }
  if ((out.mask.array() != 0).count() == 0) throw SpecError("defects: empty defect mask");
  return out;
}

std::uint64_t image_subseed(std::uint64_t seed, const std::string& split, const std::string& label, std::size_t index) {
  return derive_seed(derive_seed(seed, fnv1a64(split + "/" + label)), index);
}

std::string checksum_hex(const std::string& bytes) {
  char buf[17];
  const auto r = std::to_chars(buf, buf + 16, fnv1a64(bytes), 16);
  return std::string(static_cast<std::size_t>(16 - (r.ptr - buf)), '0') + std::string(buf, r.ptr);
}

double generate_split(const SceneSpec& spec, const SplitCounts& counts, const DefectSpec& defects,
                      std::uint64_t seed, const std::filesystem::path& dir) {
  spec.validate();
  if (counts.train == 0 || counts.test_normal == 0)
    throw SpecError("dataset: train and normal test counts must be at least 1");
  std::filesystem::create_directories(dir / "train");
  std::filesystem::create_directories(dir / "test");

  std::string manifest, checksums;
  auto emit = [&](const std::string& rel, const std::string& bytes) {
    write_file_atomic(dir / rel, bytes);
    checksums += rel + "," + checksum_hex(bytes) + "\n";
  };

  const std::size_t s = spec.image_size, hw = s * s;
  // Per-pixel running moments over all normal images, for the variance check.
  Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(3 * hw));
  Eigen::ArrayXd sum_sq = sum;
  std::size_t normals = 0;
  auto write_normal = [&](const std::string& split, std::size_t i, std::size_t pad) {
    const std::uint64_t sub = image_subseed(seed, split, "normal", i);
    const Tensor img = render_normal(spec, sub);
    sum += img.data().array();
    sum_sq += img.data().array().square();
    ++normals;
    const std::string rel = split + "/normal_" + zero_pad(i, pad) + ".ppm";
    emit(rel, encode_pnm(tensor_to_image(img)));
    manifest += split + "," + rel + ",normal,-," + std::to_string(sub) + "\n";
  };

  const std::size_t pad = std::max<std::size_t>(3, std::to_string(std::max({counts.train, counts.test_normal, counts.test_anomalous})).size());
  for (std::size_t i = 0; i < counts.train; ++i) write_normal("train", i, pad);
  for (std::size_t i = 0; i < counts.test_normal; ++i) write_normal("test", i, pad);
  for (std::size_t i = 0; i < counts.test_anomalous; ++i) {
    const std::uint64_t sub = image_subseed(seed, "test", "anomalous", i);
    const AnomalousImage a = render_anomalous(spec, defects, sub);
    const std::string rel = "test/anomalous_" + zero_pad(i, pad) + ".ppm";
    const std::string mrel = "test/anomalous_" + zero_pad(i, pad) + "_mask.pgm";
    emit(rel, encode_pnm(tensor_to_image(a.image)));
    emit(mrel, encode_pnm(mask_to_image(a.mask)));
    manifest += "test," + rel + ",anomalous," + mrel + "," + std::to_string(sub) + "\n";
  }

  const Mask var = variable_mask(spec);
  const Eigen::ArrayXd n = Eigen::ArrayXd::Constant(sum.size(), static_cast<double>(normals));
  const Eigen::ArrayXd variance = (sum_sq / n - (sum / n).square()).max(0.0);
  double var_bg = 0.0, var_obj = 0.0;
  std::size_t n_bg = 0, n_obj = 0;
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t p = 0; p < hw; ++p) {
      const double v = variance[static_cast<Eigen::Index>(ch * hw + p)];
      if (var.data()[p]) {
        var_bg += v;
        ++n_bg;
      } else {
        var_obj += v;
        ++n_obj;
      }
    }
  var_bg /= static_cast<double>(n_bg);
  var_obj /= static_cast<double>(n_obj);
  const double ratio = var_obj > 0.0 ? var_bg / var_obj : std::numeric_limits<double>::infinity();
  if (ratio < spec.min_variance_ratio)
    throw SpecError("dataset: background/object variance ratio " + std::to_string(ratio) + " is below " +
                    std::to_string(spec.min_variance_ratio));

  emit("variable_mask.pgm", encode_pnm(mask_to_image(var)));
  emit("manifest.csv", manifest);
  write_file_atomic(dir / "checksums.txt", checksums);
  return ratio;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "manifest.csv"))
    throw DatasetError("dataset: no manifest.csv under " + dir.string());
  std::map<std::string, std::string> sums;
  {
    std::istringstream in(read_file(dir / "checksums.txt"));
    std::string line;
    while (std::getline(in, line)) {
      const auto comma = line.rfind(',');
      if (comma == std::string::npos) throw DatasetError("dataset: malformed checksum line '" + line + "'");
      sums[line.substr(0, comma)] = line.substr(comma + 1);
    }
  }
  auto verified = [&](const std::string& rel) {
    const std::string bytes = read_file(dir / rel);
    const auto it = sums.find(rel);
    if (it == sums.end()) throw DatasetError("dataset: no checksum recorded for " + rel);
    if (it->second != checksum_hex(bytes)) throw DatasetError("dataset: checksum mismatch for " + rel);
    return bytes;
  };

  Dataset ds;
  {
    const Image8 vm = decode_pnm(verified("variable_mask.pgm"));
    ds.variable = Mask(static_cast<Eigen::Index>(vm.height), static_cast<Eigen::Index>(vm.width));
    for (std::size_t i = 0; i < vm.pixels.size(); ++i) ds.variable.data()[i] = vm.pixels[i] ? 1 : 0;
  }
  std::istringstream in(verified("manifest.csv"));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 5) throw DatasetError("dataset: manifest line " + std::to_string(line_no) + " has " + std::to_string(f.size()) + " fields, expected 5");
    Sample smp;
    smp.split = f[0];
    smp.path = f[1];
    if (f[2] == "normal")
      smp.label = Label::normal;
    else if (f[2] == "anomalous")
      smp.label = Label::anomalous;
    else
      throw DatasetError("dataset: manifest line " + std::to_string(line_no) + " has unknown label '" + f[2] + "'");
    const auto r = std::from_chars(f[4].data(), f[4].data() + f[4].size(), smp.subseed);
    if (r.ec != std::errc() || r.ptr != f[4].data() + f[4].size())
      throw DatasetError("dataset: manifest line " + std::to_string(line_no) + " has a bad subseed");
    smp.image = image_to_tensor(decode_pnm(verified(smp.path)));
    if (f[3] == "-") {
      smp.mask = Mask::Zero(static_cast<Eigen::Index>(smp.image.dim(1)), static_cast<Eigen::Index>(smp.image.dim(2)));
    } else {
      const Image8 m = decode_pnm(verified(f[3]));
      smp.mask = Mask(static_cast<Eigen::Index>(m.height), static_cast<Eigen::Index>(m.width));
      for (std::size_t i = 0; i < m.height * m.width; ++i) smp.mask.data()[i] = m.pixels[i * m.channels] ? 1 : 0;
    }
    if (smp.split == "train") {
      if (smp.label != Label::normal) throw DatasetError("dataset: train split holds an anomalous image " + smp.path);
      ds.train.push_back(std::move(smp));
    } else if (smp.split == "test") {
      ds.test.push_back(std::move(smp));
    } else {
      throw DatasetError("dataset: unknown split '" + smp.split + "' on manifest line " + std::to_string(line_no));
    }
  }
  return ds;
}

}  // namespace raad
