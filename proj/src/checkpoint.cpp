#include "mit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mit/errors.hpp"

namespace mit {

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void str(const std::string& s) {
    u64(s.size());
    out_ += s;
  }
  void raw(const std::string& s) { out_ += s; }
  void tensor_map(const std::map<std::string, Tensor>& m) {
    u64(m.size());
    for (const auto& [name, t] : m) {
      str(name);
      u32(static_cast<std::uint32_t>(t.rank()));
      for (std::size_t d : t.shape()) u64(d);
      for (double v : t.values()) f64(v);
    }
  }
  std::string take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& data, std::string origin, std::size_t base = 0)
      : data_(data), origin_(std::move(origin)), base_(base) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() { return bytes(checked_size(u64(), 1)); }
  std::map<std::string, Tensor> tensor_map() {
    std::map<std::string, Tensor> m;
    const std::uint64_t n = checked_size(u64(), 8);
    for (std::uint64_t i = 0; i < n; ++i) {
      std::string name = str();
      const std::uint32_t rank = u32();
      if (rank > 8) fail("tensor " + name + " has rank " + std::to_string(rank));
      Shape shape;
      for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(checked_size(u64(), 1));
      const std::size_t count = checked_size(shape_numel(shape), 8);
      std::vector<double> values(count);
      for (double& v : values) v = f64();
      if (!m.emplace(name, Tensor(shape, std::move(values))).second) fail("duplicate tensor " + name);
    }
    return m;
  }
  std::size_t position() const { return base_ + pos_; }
  bool done() const { return pos_ == data_.size(); }
  [[noreturn]] void fail(const std::string& msg) const {
    throw CheckpointError(origin_ + ": byte offset " + std::to_string(position()) + ": " + msg);
  }

 private:
  std::uint64_t get(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= std::uint64_t(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) fail("truncated file");
  }
  // Rejects counts that cannot fit in the remaining bytes.
  std::size_t checked_size(std::uint64_t n, std::size_t unit) const {
    if (n > (data_.size() - pos_) / unit) fail("length field exceeds the file size");
    return static_cast<std::size_t>(n);
  }

  const std::string& data_;
  std::string origin_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  Writer params;
  params.tensor_map(ckpt.params.all());

  Writer opt;
  opt.u64(ckpt.optimizer.step);
  opt.tensor_map(ckpt.optimizer.first_moment);
  opt.tensor_map(ckpt.optimizer.second_moment);

  Writer state;
  state.u64(ckpt.epoch);
  state.str(ckpt.rng_state);
  state.u64(ckpt.class_names.size());
  for (const auto& n : ckpt.class_names) state.str(n);

  Writer out;
  out.raw(std::string(kCheckpointMagic, 8));
  out.u32(kCheckpointVersion);
  out.str(serialize_config(ckpt.config));
  out.str(params.take());
  out.str(opt.take());
  out.str(state.take());
  return out.take();
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw CheckpointError(origin + ": not a checkpoint (bad magic header)");
  }
  Reader r(bytes, origin);
  r.bytes(8);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(origin + ": checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  ck.config = parse_config(r.str(), origin + " [config]");

  const std::size_t params_at = r.position() + 8;
  const std::string params_bytes = r.str();
  Reader pr(params_bytes, origin, params_at);
  for (auto& [name, t] : pr.tensor_map()) ck.params.add(name, std::move(t));
  if (!pr.done()) pr.fail("trailing bytes in the parameter section");

  const std::size_t opt_at = r.position() + 8;
  const std::string opt_bytes = r.str();
  Reader orr(opt_bytes, origin, opt_at);
  ck.optimizer.step = orr.u64();
  ck.optimizer.first_moment = orr.tensor_map();
  ck.optimizer.second_moment = orr.tensor_map();
  if (!orr.done()) orr.fail("trailing bytes in the optimizer section");

  const std::size_t state_at = r.position() + 8;
  const std::string state_bytes = r.str();
  Reader sr(state_bytes, origin, state_at);
  ck.epoch = sr.u64();
  ck.rng_state = sr.str();
  const std::uint64_t names = sr.u64();
  for (std::uint64_t i = 0; i < names; ++i) ck.class_names.push_back(sr.str());
  if (!sr.done()) sr.fail("trailing bytes in the training-state section");
  if (!r.done()) r.fail("trailing bytes after the last section");
  return ck;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(ckpt);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot write checkpoint " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str(), path.string());
}

}  // namespace mit
