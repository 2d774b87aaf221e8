#include "ir2net/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace ir2net::harness {

namespace {

constexpr char kMagic[4] = {'I', 'R', '2', 'N'};
constexpr std::uint8_t kFloat32 = 1;
const char* const kHeaderNotes = "bit_one=+1\nupsample=half_pixel\n";

class Writer {
 public:
  void u8(std::uint8_t v) { out.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
  }
  void tensor(const std::string& name, const Tensor& t) {
    str(name);
    u8(kFloat32);
    u8(static_cast<std::uint8_t>(t.ndim()));
    for (auto d : t.shape()) u64(static_cast<std::uint64_t>(d));
    for (float f : t.data()) u32(std::bit_cast<std::uint32_t>(f));
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes(b) {}
  void need(std::size_t n) const {
    if (pos + n > bytes.size()) throw FormatError("checkpoint truncated at byte " + std::to_string(pos));
  }
  std::uint8_t u8() {
    need(1);
    return bytes[pos++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos++]) << (8 * i);
    return v;
  }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
    return s;
  }
  std::pair<std::string, Tensor> tensor() {
    auto name = str();
    if (u8() != kFloat32) throw FormatError("checkpoint tensor '" + name + "' has an unknown dtype");
    const auto ndim = u8();
    Shape shape;
    for (int i = 0; i < ndim; ++i) shape.push_back(static_cast<std::int64_t>(u64()));
    const auto n = shape_numel(shape);
    need(static_cast<std::size_t>(n) * 4);
    std::vector<float> data(static_cast<std::size_t>(n));
    for (auto& f : data) f = std::bit_cast<float>(u32());
    return {std::move(name), Tensor::from(std::move(shape), std::move(data))};
  }
  bool done() const { return pos == bytes.size(); }

  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;
};

std::string rng_text(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TrainConfig& cfg, model::Model& model, const Optimizer* optimizer,
                                            int epoch, const std::mt19937_64& rng) {
  Writer w;
  w.out.insert(w.out.end(), kMagic, kMagic + 4);
  w.u32(kCheckpointVersion);
  w.str(kHeaderNotes);
  w.str(serialize(cfg));
  w.u32(static_cast<std::uint32_t>(epoch));
  w.u64(optimizer ? optimizer->steps() : 0);
  w.str(optimizer ? to_string(optimizer->kind()) : "");
  w.str(rng_text(rng));

  const auto tensors = model.named_tensors();
  const auto opt_count = optimizer ? optimizer->state().size() : 0;
  w.u32(static_cast<std::uint32_t>(tensors.size() + opt_count));
  for (const auto& t : tensors) w.tensor(t.name, *t.tensor);
  if (optimizer) {
    for (const auto& [name, t] : optimizer->state()) w.tensor("optim." + name, t);
  }
  return w.out;
}

LoadedCheckpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  r.need(4);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("not a checkpoint (bad magic)");
  r.pos = 4;
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  LoadedCheckpoint ck;
  ck.header = r.str();
  if (ck.header != kHeaderNotes) throw FormatError("checkpoint header conventions differ: " + ck.header);
  ck.config = parse_config(r.str());
  ck.epoch = static_cast<int>(r.u32());
  const auto steps = r.u64();
  const auto opt_kind = r.str();
  {
    std::istringstream is(r.str());
    is >> ck.rng;
    if (!is) throw FormatError("checkpoint rng state is malformed");
  }

  ck.model = std::make_unique<model::Model>(ck.config.backbone, ck.config.seed);
  if (!opt_kind.empty()) {
    const auto kind = opt_kind == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;
    if (opt_kind != to_string(kind)) throw FormatError("unknown optimizer '" + opt_kind + "' in checkpoint");
    ck.optimizer = std::make_unique<Optimizer>(kind, ck.config);
    ck.optimizer->set_steps(steps);
  }

  std::map<std::string, Tensor*> slots;
  for (const auto& t : ck.model->named_tensors()) slots[t.name] = t.tensor;
  const auto count = r.u32();
  std::size_t model_seen = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, t] = r.tensor();
    if (name.rfind("optim.", 0) == 0) {
      if (!ck.optimizer) throw FormatError("optimizer state without an optimizer: '" + name + "'");
      ck.optimizer->state().emplace(name.substr(6), std::move(t));
      continue;
    }
    auto it = slots.find(name);
    if (it == slots.end()) throw FormatError("checkpoint tensor '" + name + "' does not exist in the model");
    if (it->second->shape() != t.shape()) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(t.shape()) + ", model expects " +
                        shape_str(it->second->shape()));
    }
    auto dst = it->second->mutable_data();
    std::copy(t.data().begin(), t.data().end(), dst.begin());
    ++model_seen;
  }
  if (model_seen != slots.size()) throw FormatError("checkpoint is missing model tensors");
  if (!r.done()) throw FormatError("trailing bytes after checkpoint");
  ck.model->refresh_caches();
  return ck;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path + "'");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for '" + path + "'");
}

void save_checkpoint(const std::string& path, const TrainConfig& cfg, model::Model& model,
                     const Optimizer* optimizer, int epoch, const std::mt19937_64& rng) {
  write_file(path, encode_checkpoint(cfg, model, optimizer, epoch, rng));
}

LoadedCheckpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

}  // namespace ir2net::harness
