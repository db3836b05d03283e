#include "llie/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "llie/errors.hpp"
#include "llie/half.hpp"

namespace llie {

namespace {

constexpr char kMagic[4] = {'D', 'W', 'U', 'N'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffu));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}

  const std::uint8_t* bytes(std::size_t n, const char* what) {
    if (n > b_.size() - pos_) throw DataError(std::string("checkpoint truncated while reading ") + what);
    const std::uint8_t* p = b_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename T>
  T le(const char* what) {
    const std::uint8_t* p = bytes(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(T{p[i]} << (8 * i));
    return v;
  }
  bool at_end() const { return pos_ == b_.size(); }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

std::string encode_metadata(const Metadata& meta) {
  std::string s;
  for (const auto& [k, v] : meta) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw ConfigError("metadata entry '" + k + "' contains '=' in key or a newline");
    s += k + "=" + v + "\n";
  }
  return s;
}

Metadata decode_metadata(std::string_view text) {
  Metadata meta;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    if (!line.empty()) {
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw DataError("checkpoint metadata line without '='");
      meta[std::string(line.substr(0, eq))] = std::string(line.substr(eq + 1));
    }
    pos = end + 1;
  }
  return meta;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int meta_int(const Metadata& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw DataError("checkpoint metadata lacks '" + key + "'");
  try {
    return std::stoi(it->second);
  } catch (const std::exception&) {
    throw DataError("checkpoint metadata '" + key + "' is not an integer: " + it->second);
  }
}

}  // namespace

std::vector<std::uint8_t> serialize_tensors(const TensorFile& file, StorageType storage) {
  Writer w;
  w.bytes(kMagic, 4);
  w.le<std::uint32_t>(kCheckpointVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& t : file.tensors) {
    if (t.name.size() > 0xffff) throw ConfigError("tensor name too long: " + t.name.substr(0, 64) + "...");
    if (t.value.rank() > 0xff) throw ShapeError("tensor rank too large for " + t.name);
    w.le<std::uint16_t>(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.le<std::uint8_t>(static_cast<std::uint8_t>(storage));
    w.le<std::uint8_t>(static_cast<std::uint8_t>(t.value.rank()));
    for (auto d : t.value.shape()) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (float v : t.value.data()) {
      if (storage == StorageType::F32) {
        w.le<std::uint32_t>(std::bit_cast<std::uint32_t>(v));
      } else {
        w.le<std::uint16_t>(float_to_half(v));
      }
    }
  }
  const std::string meta = encode_metadata(file.metadata);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(meta.size()));
  w.bytes(meta.data(), meta.size());
  return w.take();
}

TensorFile deserialize_tensors(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (std::memcmp(r.bytes(4, "magic"), kMagic, 4) != 0) throw DataError("not a checkpoint: bad magic (expected DWUN)");
  const auto version = r.le<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  const auto count = r.le<std::uint32_t>("tensor count");
  TensorFile file;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.le<std::uint16_t>("name length");
    const auto* name = r.bytes(name_len, "name");
    const auto dtype = r.le<std::uint8_t>("dtype");
    if (dtype > 1) throw DataError("unknown tensor dtype " + std::to_string(dtype));
    const auto rank = r.le<std::uint8_t>("rank");
    Shape shape;
    std::uint64_t numel = 1;
    for (int d = 0; d < rank; ++d) {
      shape.push_back(r.le<std::uint32_t>("dims"));
      numel *= static_cast<std::uint64_t>(shape.back());
    }
    const std::size_t elem = dtype == 0 ? 4 : 2;
    if (numel > bytes.size() / elem) throw DataError("checkpoint truncated while reading tensor data");
    std::vector<float> values(static_cast<std::size_t>(numel));
    const auto* raw = r.bytes(values.size() * elem, "tensor data");
    for (std::size_t k = 0; k < values.size(); ++k) {
      const std::uint8_t* p = raw + k * elem;
      if (dtype == 0) {
        const std::uint32_t u = std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
                                (std::uint32_t{p[3]} << 24);
        values[k] = std::bit_cast<float>(u);
      } else {
        values[k] = half_to_float(static_cast<std::uint16_t>(p[0] | (p[1] << 8)));
      }
    }
    file.tensors.push_back(
        {std::string(reinterpret_cast<const char*>(name), name_len), Tensor::from_vector(shape, std::move(values))});
  }
  const auto meta_len = r.le<std::uint32_t>("metadata length");
  const auto* meta = r.bytes(meta_len, "metadata");
  file.metadata = decode_metadata(std::string_view(reinterpret_cast<const char*>(meta), meta_len));
  if (!r.at_end()) throw DataError("trailing bytes after checkpoint metadata");
  return file;
}

Metadata model_metadata(const ModelConfig& c) {
  return {{"model.f1", std::to_string(c.f1)},
          {"model.n_blocks", std::to_string(c.n_blocks)},
          {"model.in_channels", std::to_string(c.in_channels)},
          {"model.out_channels", std::to_string(c.out_channels)},
          {"model.expansion", std::to_string(c.expansion)},
          {"model.gn_groups", std::to_string(c.gn_groups)}};
}

ModelConfig config_from_metadata(const Metadata& meta) {
  ModelConfig c;
  c.f1 = meta_int(meta, "model.f1");
  c.n_blocks = meta_int(meta, "model.n_blocks");
  c.in_channels = meta_int(meta, "model.in_channels");
  c.out_channels = meta_int(meta, "model.out_channels");
  c.expansion = meta_int(meta, "model.expansion");
  c.gn_groups = meta_int(meta, "model.gn_groups");
  return c;
}

namespace {

TensorFile model_file(const DwUNet& model, const Metadata& extra) {
  TensorFile file;
  file.tensors = model.parameters();
  file.metadata = extra;
  for (auto& [k, v] : model_metadata(model.config())) file.metadata[k] = v;
  return file;
}

void copy_into(DwUNet& model, const TensorFile& file, const std::string& path) {
  auto& params = model.parameters();
  for (const auto& t : file.tensors) {
    Tensor* dst = nullptr;
    for (auto& p : params)
      if (p.name == t.name) dst = &p.value;
    if (!dst) throw ShapeError(path + ": unknown tensor '" + t.name + "' for this model configuration");
    if (dst->shape() != t.value.shape())
      throw ShapeError(path + ": shape mismatch for '" + t.name + "': checkpoint " + shape_str(t.value.shape()) +
                       ", model " + shape_str(dst->shape()));
    std::copy(t.value.data().begin(), t.value.data().end(), dst->mutable_data().begin());
  }
  if (file.tensors.size() != params.size())
    throw ShapeError(path + ": checkpoint holds " + std::to_string(file.tensors.size()) + " tensors, model expects " +
                     std::to_string(params.size()));
}

}  // namespace

void save_checkpoint(const DwUNet& model, const std::string& path, StorageType storage, const Metadata& extra) {
  const auto bytes = serialize_tensors(model_file(model, extra), storage);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  TensorFile file = deserialize_tensors(read_file(path));
  ModelConfig config = config_from_metadata(file.metadata);
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw DataError(path + ": " + e.what());
  }
  Checkpoint ck{DwUNet::build(config, 0), std::move(file.metadata)};
  copy_into(ck.model, file, path);
  return ck;
}

Metadata load_checkpoint_into(DwUNet& model, const std::string& path) {
  TensorFile file = deserialize_tensors(read_file(path));
  copy_into(model, file, path);
  return std::move(file.metadata);
}

std::size_t checkpoint_size(const DwUNet& model, StorageType storage, const Metadata& extra) {
  return serialize_tensors(model_file(model, extra), storage).size();
}

}  // namespace llie
