#include "splat/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <unordered_set>

#include "splat/common.hpp"

namespace splat {

namespace {

constexpr char kMagic[8] = {'S', 'P', 'L', 'T', 'C', 'K', 'P', 'T'};
constexpr char kFooter[8] = {'E', 'N', 'D', 'S', 'P', 'L', 'A', 'T'};
constexpr char kGaussMagic[8] = {'S', 'P', 'L', 'T', 'G', 'A', 'U', 'S'};

class Writer {
 public:
  explicit Writer(const std::string& path) : path_(path) {
    f_ = std::fopen(path.c_str(), "wb");
    if (!f_) throw IoError("checkpoint: cannot open '" + path + "' for writing");
  }
  ~Writer() {
    if (f_) std::fclose(f_);
  }
  Writer(const Writer&) = delete;
  Writer& operator=(const Writer&) = delete;

  void bytes(const void* p, size_t n) {
    if (std::fwrite(p, 1, n, f_) != n)
      throw IoError("checkpoint: short write to '" + path_ + "'");
  }
  void u8(uint8_t v) { bytes(&v, 1); }
  void u32(uint32_t v) {
    uint8_t b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<uint8_t>(v >> (8 * i));
    bytes(b, 4);
  }
  void u64(uint64_t v) {
    uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<uint8_t>(v >> (8 * i));
    bytes(b, 8);
  }
  void f64(double v) { u64(std::bit_cast<uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void f64_array(const std::vector<double>& v) {
    for (double x : v) f64(x);
  }
  void close() {
    if (std::fflush(f_) != 0 || std::fclose(f_) != 0) {
      f_ = nullptr;
      throw IoError("checkpoint: failed to finish writing '" + path_ + "'");
    }
    f_ = nullptr;
  }

 private:
  std::string path_;
  std::FILE* f_ = nullptr;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path) {
    f_ = std::fopen(path.c_str(), "rb");
    if (!f_) throw IoError("checkpoint: cannot open '" + path + "'");
  }
  ~Reader() {
    if (f_) std::fclose(f_);
  }
  Reader(const Reader&) = delete;
  Reader& operator=(const Reader&) = delete;

  void bytes(void* p, size_t n) {
    if (std::fread(p, 1, n, f_) != n)
      throw ValidationError("checkpoint: '" + path_ + "' is truncated");
  }
  uint8_t u8() {
    uint8_t v;
    bytes(&v, 1);
    return v;
  }
  uint32_t u32() {
    uint8_t b[4];
    bytes(b, 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
  }
  uint64_t u64() {
    uint8_t b[8];
    bytes(b, 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    uint64_t n = u64();
    if (n > (1ull << 32))
      throw ValidationError("checkpoint: '" + path_ + "' has an implausible string length");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::vector<double> f64_array(uint64_t n) {
    std::vector<double> v(n);
    for (uint64_t i = 0; i < n; ++i) v[i] = f64();
    return v;
  }

 private:
  std::string path_;
  std::FILE* f_ = nullptr;
};

void write_net(Writer& w, const NetState& net) {
  w.u64(net.params.size());
  for (const auto& p : net.params) {
    w.str(p.name);
    w.u32(static_cast<uint32_t>(p.shape.size()));
    int64_t count = 1;
    for (int64_t d : p.shape) {
      w.u64(static_cast<uint64_t>(d));
      count *= d;
    }
    if (count != static_cast<int64_t>(p.data.size()))
      throw ContractError("checkpoint: parameter '" + p.name +
                          "' data does not match its shape");
    w.f64_array(p.data);
  }
  w.u64(static_cast<uint64_t>(net.opt.step));
  w.u64(net.opt.slots.size());
  for (const auto& slot : net.opt.slots) {
    if (slot.m.size() != slot.v.size())
      throw ContractError("checkpoint: optimizer moment arrays disagree in length");
    w.u64(slot.m.size());
    w.f64_array(slot.m);
    w.f64_array(slot.v);
  }
}

NetState read_net(Reader& r) {
  NetState net;
  uint64_t n_params = r.u64();
  std::unordered_set<std::string> seen;
  for (uint64_t i = 0; i < n_params; ++i) {
    ParamBlob p;
    p.name = r.str();
    if (!seen.insert(p.name).second)
      throw ValidationError("checkpoint: parameter '" + p.name +
                            "' appears more than once");
    uint32_t ndim = r.u32();
    int64_t count = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      p.shape.push_back(static_cast<int64_t>(r.u64()));
      count *= p.shape.back();
    }
    if (count < 0 || count > (1ll << 32))
      throw ValidationError("checkpoint: parameter '" + p.name +
                            "' has an implausible element count");
    p.data = r.f64_array(static_cast<uint64_t>(count));
    net.params.push_back(std::move(p));
  }
  net.opt.step = static_cast<int64_t>(r.u64());
  uint64_t n_slots = r.u64();
  for (uint64_t i = 0; i < n_slots; ++i) {
    OptimizerState::Slot slot;
    uint64_t len = r.u64();
    slot.m = r.f64_array(len);
    slot.v = r.f64_array(len);
    net.opt.slots.push_back(std::move(slot));
  }
  return net;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  Writer w(path);
  w.bytes(kMagic, 8);
  w.u32(ckpt.version);
  w.u64(static_cast<uint64_t>(ckpt.epoch));
  w.str(ckpt.config_text);
  w.u64(ckpt.rng.s);
  w.u8(ckpt.rng.has_spare);
  w.f64(ckpt.rng.spare);
  write_net(w, ckpt.encoder);
  write_net(w, ckpt.classifier);
  w.bytes(kFooter, 8);
  w.close();
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw ValidationError("checkpoint: '" + path + "' is not a checkpoint file");
  Checkpoint ckpt;
  ckpt.version = r.u32();
  if (ckpt.version != kCheckpointVersion)
    throw ValidationError("checkpoint: '" + path + "' has format version " +
                          std::to_string(ckpt.version) + "; this build reads version " +
                          std::to_string(kCheckpointVersion));
  ckpt.epoch = static_cast<int64_t>(r.u64());
  ckpt.config_text = r.str();
  ckpt.rng.s = r.u64();
  ckpt.rng.has_spare = r.u8();
  ckpt.rng.spare = r.f64();
  ckpt.encoder = read_net(r);
  ckpt.classifier = read_net(r);
  char footer[8];
  r.bytes(footer, 8);
  if (std::memcmp(footer, kFooter, 8) != 0)
    throw ValidationError("checkpoint: '" + path + "' is truncated or corrupt");
  return ckpt;
}

NetState snapshot_net(const Params& params, const OptimizerState& state) {
  NetState net;
  std::unordered_set<std::string> seen;
  for (const auto& [name, tensor] : params.items()) {
    if (!seen.insert(name).second)
      throw ContractError("checkpoint: parameter '" + name + "' registered twice");
    ParamBlob p;
    p.name = name;
    p.shape = tensor.shape();
    p.data = tensor.data();
    net.params.push_back(std::move(p));
  }
  net.opt = state;
  return net;
}

void restore_net(const NetState& net, Params& params, OptimizerState& state) {
  if (net.params.size() != params.items().size())
    throw ValidationError("checkpoint: stores " + std::to_string(net.params.size()) +
                          " parameters but the model has " +
                          std::to_string(params.items().size()));
  for (size_t i = 0; i < net.params.size(); ++i) {
    const ParamBlob& p = net.params[i];
    auto& [name, tensor] = params.items()[i];
    if (p.name != name)
      throw ValidationError("checkpoint: parameter order mismatch; stored '" + p.name +
                            "' where the model has '" + name + "'");
    if (p.shape != tensor.shape())
      throw ValidationError("checkpoint: parameter '" + name + "' shape mismatch");
    tensor.raw_data() = p.data;
    tensor.zero_grad();
  }
  if (!net.opt.slots.empty() && net.opt.slots.size() != net.params.size())
    throw ValidationError("checkpoint: optimizer slots do not match the parameter list");
  state = net.opt;
}

void save_gaussians(const Tensor& raw, const std::string& path) {
  if (!raw.defined() || raw.ndim() != 2 || raw.dim(1) != 9)
    throw ValidationError("save_gaussians: expected a [k,9] raw parameter tensor");
  Writer w(path);
  w.bytes(kGaussMagic, 8);
  w.u64(static_cast<uint64_t>(raw.dim(0)));
  w.f64_array(raw.data());
  w.close();
}

Tensor load_gaussians(const std::string& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kGaussMagic, 8) != 0)
    throw ValidationError("load_gaussians: '" + path + "' is not a gaussian dump");
  uint64_t k = r.u64();
  if (k > (1ull << 24))
    throw ValidationError("load_gaussians: '" + path + "' has an implausible count");
  std::vector<double> data = r.f64_array(k * 9);
  return Tensor::from_data({static_cast<int64_t>(k), 9}, std::move(data));
}

}  // namespace splat
