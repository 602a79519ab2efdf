#include "raad/checkpoint.hpp"

#include "raad/errors.hpp"
#include "raad/rng.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace raad {

namespace {

constexpr char kMagic[8] = {'R', 'A', 'A', 'D', 'C', 'K', 'P', 'T'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint64_t u64() { return read_le(8); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(read_le(4)); }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      throw ParseError("checkpoint: truncated at byte offset " + std::to_string(pos_));
  }
  std::uint64_t read_le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void Checkpoint::put(std::string name, Tensor t) {
  for (auto& [n, existing] : tensors)
    if (n == name) {
      existing = std::move(t);
      return;
    }
  tensors.emplace_back(std::move(name), std::move(t));
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw ContractError("checkpoint: no tensor named '" + name + "'");
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kCheckpointVersion);
  put_u64(out, ckpt.tensors.size());
  for (const auto& [name, t] : ckpt.tensors) {
    put_u64(out, name.size());
    out += name;
    put_u64(out, t.rank());
    for (auto d : t.shape()) put_u64(out, d);
    for (Eigen::Index i = 0; i < t.data().size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(t.data()[i]));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.str(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) throw ParseError("checkpoint: bad magic at byte offset 0");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw ParseError("checkpoint: unsupported format version " + std::to_string(version) + " at byte offset 8");
  const auto count = r.u64();
  Checkpoint ckpt;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.u64();
    std::string name = r.str(name_len);
    const auto rank = r.u64();
    if (rank > 16) throw ParseError("checkpoint: implausible rank at byte offset " + std::to_string(r.pos() - 8));
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    Buffer data(static_cast<Eigen::Index>(numel_of(shape)));
    for (Eigen::Index j = 0; j < data.size(); ++j) data[j] = r.f64();
    ckpt.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw ParseError("checkpoint: trailing bytes at byte offset " + std::to_string(r.pos()));
  return ckpt;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
  if (fnv1a64(read_file(path)) != fnv1a64(bytes)) throw Error("checksum mismatch after writing '" + path.string() + "'");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace raad
