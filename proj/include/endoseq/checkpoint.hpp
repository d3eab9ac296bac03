#pragma once

// Versioned binary checkpoint: magic, format version, config snapshot as
// key=value text, then a named tensor table with raw little-endian doubles.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "endoseq/model.hpp"
#include "endoseq/tensor.hpp"

namespace endoseq {

struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& msg) : std::runtime_error("checkpoint: " + msg) {}
};
struct CheckpointVersionError : CheckpointError {
  explicit CheckpointVersionError(const std::string& msg) : CheckpointError(msg) {}
};
struct CheckpointFormatError : CheckpointError {
  explicit CheckpointFormatError(const std::string& msg) : CheckpointError(msg) {}
};
struct CheckpointShapeError : CheckpointError {
  explicit CheckpointShapeError(const std::string& msg) : CheckpointError(msg) {}
};

namespace detail {

constexpr char kCkptMagic[8] = {'E', 'N', 'S', 'Q', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline std::uint32_t read_u32(std::istream& is, const char* what) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
    throw CheckpointFormatError(std::string("truncated while reading ") + what);
  return v;
}
inline std::uint64_t read_u64(std::istream& is, const char* what) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
    throw CheckpointFormatError(std::string("truncated while reading ") + what);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                            const ParamRegistry& params) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open " + path + " for writing");
  f.write(detail::kCkptMagic, sizeof detail::kCkptMagic);
  detail::write_u32(f, detail::kCkptVersion);
  const std::string cfg_text = model_config_to_kv(cfg);
  detail::write_u64(f, cfg_text.size());
  f.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
  detail::write_u64(f, params.items().size());
  for (const Param& p : params.items()) {
    detail::write_u64(f, p.name.size());
    f.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::write_u64(f, p.tensor.ndim());
    for (std::size_t d : p.tensor.shape()) detail::write_u64(f, d);
    detail::write_u64(f, p.tensor.size());
    f.write(reinterpret_cast<const char*>(p.tensor.values().data()),
            static_cast<std::streamsize>(p.tensor.size() * sizeof(double)));
  }
  if (!f) throw CheckpointError("write failed for " + path);
}

struct LoadedCheckpoint {
  ModelConfig config;
  std::vector<std::pair<std::string, Tensor>> tensors;  // file order

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open " + path);
  char magic[8];
  if (!f.read(magic, sizeof magic) || std::memcmp(magic, detail::kCkptMagic, sizeof magic) != 0)
    throw CheckpointFormatError(path + " is not a checkpoint (bad magic)");
  const std::uint32_t version = detail::read_u32(f, "version");
  if (version != detail::kCkptVersion)
    throw CheckpointVersionError(path + " has format version " + std::to_string(version) +
                                 ", expected " + std::to_string(detail::kCkptVersion));
  const std::uint64_t cfg_len = detail::read_u64(f, "config length");
  std::string cfg_text(cfg_len, '\0');
  if (!f.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len)))
    throw CheckpointFormatError(path + ": truncated config snapshot");
  LoadedCheckpoint out;
  out.config = model_config_from_kv(cfg_text);
  const std::uint64_t n_tensors = detail::read_u64(f, "tensor count");
  out.tensors.reserve(n_tensors);
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    const std::uint64_t name_len = detail::read_u64(f, "tensor name length");
    std::string name(name_len, '\0');
    if (!f.read(name.data(), static_cast<std::streamsize>(name_len)))
      throw CheckpointFormatError(path + ": truncated tensor name");
    const std::uint64_t ndim = detail::read_u64(f, "tensor rank");
    Shape shape(ndim);
    for (std::uint64_t d = 0; d < ndim; ++d) shape[d] = detail::read_u64(f, "tensor dim");
    const std::uint64_t count = detail::read_u64(f, "tensor element count");
    if (count != shape_numel(shape))
      throw CheckpointFormatError(path + ": tensor '" + name + "' count disagrees with shape");
    std::vector<double> values(count);
    if (!f.read(reinterpret_cast<char*>(values.data()),
                static_cast<std::streamsize>(count * sizeof(double))))
      throw CheckpointFormatError(path + ": truncated tensor '" + name + "'");
    out.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  return out;
}

// Copy checkpoint weights into an existing model, validating names and shapes.
inline void load_weights(Seq2SeqModel& model, const LoadedCheckpoint& ckpt) {
  for (Param& p : model.params().items()) {
    const Tensor* t = ckpt.find(p.name);
    if (!t) throw CheckpointShapeError("parameter '" + p.name + "' missing from checkpoint");
    if (t->shape() != p.tensor.shape())
      throw CheckpointShapeError("parameter '" + p.name + "' has shape " + shape_str(t->shape()) +
                                 " in checkpoint, model expects " + shape_str(p.tensor.shape()));
    p.tensor.values() = t->values();
  }
  if (ckpt.tensors.size() != model.params().items().size())
    throw CheckpointShapeError("checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                               " tensors, model has " +
                               std::to_string(model.params().items().size()) + " parameters");
}

inline Seq2SeqModel model_from_checkpoint(const std::string& path) {
  LoadedCheckpoint ckpt = load_checkpoint(path);
  Rng rng(0);  // layout only; every weight is overwritten below
  Seq2SeqModel model(ckpt.config, rng);
  load_weights(model, ckpt);
  return model;
}

}  // namespace endoseq
