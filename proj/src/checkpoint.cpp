#include "diffmt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace diffmt {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
  char bytes[4];
  std::memcpy(bytes, &v, 4);
  out.append(bytes, 4);
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    std::uint32_t v;
    std::memcpy(&v, take(4), 4);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::string text(std::size_t n) { return std::string(take(n), n); }
  void floats(float* dst, std::size_t n) { std::memcpy(dst, take(n * 4), n * 4); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const char* take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw IoError("checkpoint truncated");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const ModelConfig& cfg, const DenoiserParams<float>& params) {
  std::string out(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  for (int v : {cfg.n_layers, cfg.n_heads, cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.seq_len, cfg.steps}) {
    put_u32(out, static_cast<std::uint32_t>(v));
  }
  const auto tensors = params.named_tensors();
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(m->rows()));
    put_u32(out, static_cast<std::uint32_t>(m->cols()));
    out.append(reinterpret_cast<const char*>(m->data()), static_cast<std::size_t>(m->size()) * sizeof(float));
  }
  return out;
}

void save_checkpoint(const std::string& path, const ModelConfig& cfg, const DenoiserParams<float>& params) {
  const std::string bytes = serialize_checkpoint(cfg, params);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot move checkpoint into place at " + path);
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.text(4) != std::string(kCheckpointMagic, 4)) throw IoError("not a checkpoint (bad magic)");
  const auto version = in.u32();
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ModelConfig& cfg = ckpt.config;
  cfg.n_layers = in.i32();
  cfg.n_heads = in.i32();
  cfg.d_model = in.i32();
  cfg.d_ff = in.i32();
  cfg.vocab_size = in.i32();
  cfg.seq_len = in.i32();
  cfg.steps = in.i32();
  try {
    cfg.validate();
  } catch (const InvalidArgument& e) {
    throw IoError(std::string("checkpoint config invalid: ") + e.what());
  }
  ckpt.params = DenoiserParams<float>::zeros(cfg);
  auto tensors = ckpt.params.named_tensors();
  if (in.u32() != tensors.size()) throw IoError("checkpoint tensor count does not match its config");
  for (auto& [name, m] : tensors) {
    const std::string stored = in.text(in.u32());
    if (stored != name) throw IoError("checkpoint tensor '" + stored + "' where '" + name + "' was expected");
    const auto rows = in.u32();
    const auto cols = in.u32();
    if (rows != m->rows() || cols != m->cols()) {
      throw IoError("checkpoint tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                    std::to_string(cols) + ", config expects " + std::to_string(m->rows()) + "x" +
                    std::to_string(m->cols()));
    }
    in.floats(m->data(), static_cast<std::size_t>(m->size()));
  }
  if (!in.done()) throw IoError("trailing bytes after checkpoint payload");
  return ckpt;
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace diffmt
