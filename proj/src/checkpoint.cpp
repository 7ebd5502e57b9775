#include "acenet/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "acenet/run_config.hpp"

namespace acenet {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::size_t kHeaderSize = 8 + 4 + 8 + 4;

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const char* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void bytes(const void* data, std::size_t n) {
    const char* p = static_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void doubles(const std::vector<double>& v) {
    put<std::uint64_t>(v.size());
    bytes(v.data(), v.size() * sizeof(double));
  }
  void tensors(const std::vector<std::string>& names, const std::vector<const Tensor*>& values) {
    put<std::uint64_t>(names.size());
    for (std::size_t i = 0; i < names.size(); ++i) {
      put<std::uint32_t>(static_cast<std::uint32_t>(names[i].size()));
      bytes(names[i].data(), names[i].size());
      const Tensor& t = *values[i];
      put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
      for (auto d : t.shape()) put<std::uint64_t>(d);
      bytes(t.data(), t.size() * sizeof(double));
    }
  }
  std::vector<char>& buffer() { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const char* data, std::size_t size) : data_(data), size_(size) {}
  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, data_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(data_ + pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> doubles(std::uint64_t n, const char* what) {
    if (n > (size_ - pos_) / sizeof(double)) throw LoadError(std::string("checkpoint truncated in ") + what);
    std::vector<double> v(n);
    std::memcpy(v.data(), data_ + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }
  std::vector<NamedValue> tensors(const char* section) {
    const auto count = get<std::uint64_t>(section);
    std::vector<NamedValue> out;
    for (std::uint64_t i = 0; i < count; ++i) {
      NamedValue nv;
      nv.name = str(get<std::uint32_t>(section), section);
      const auto rank = get<std::uint32_t>(section);
      if (rank == 0 || rank > 8) throw LoadError("checkpoint tensor " + nv.name + " has invalid rank");
      Shape shape(rank);
      std::uint64_t n = 1;
      for (auto& d : shape) {
        d = get<std::uint64_t>(section);
        if (d == 0 || d > (1ULL << 32)) throw LoadError("checkpoint tensor " + nv.name + " has invalid shape");
        n *= d;
      }
      nv.value = Tensor(shape, doubles(n, nv.name.c_str()));
      out.push_back(std::move(nv));
    }
    return out;
  }
  bool done() const { return pos_ == size_; }

 private:
  void need(std::size_t n, const char* what) {
    if (size_ - pos_ < n) throw LoadError(std::string("checkpoint truncated in ") + what);
  }
  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::uint32_t checksum(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large payloads in chunks.
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<char> encode_checkpoint(const Checkpoint& c) {
  Writer w;
  const std::string config = nlohmann::json{{"model", to_json(c.model_config)}, {"train", to_json(c.train_config)}}.dump();
  w.put<std::uint64_t>(config.size());
  w.bytes(config.data(), config.size());
  w.put<std::uint64_t>(c.epoch);
  w.put<std::uint64_t>(c.iter);
  w.put<std::uint64_t>(c.iter_total);
  w.put<std::uint64_t>(c.best_epoch);
  w.doubles(c.loss_history);
  w.doubles(c.validation_history);
  auto section = [&](const std::vector<NamedValue>& values) {
    std::vector<std::string> names;
    std::vector<const Tensor*> ptrs;
    for (const auto& v : values) {
      names.push_back(v.name);
      ptrs.push_back(&v.value);
    }
    w.tensors(names, ptrs);
  };
  section(c.parameters);
  section(c.buffers);
  std::vector<const Tensor*> velocity;
  for (const auto& v : c.optimizer.velocity) velocity.push_back(&v);
  w.tensors(c.optimizer.names, velocity);

  const std::vector<char>& payload = w.buffer();
  Writer out;
  out.bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  out.put<std::uint32_t>(kCheckpointVersion);
  out.put<std::uint64_t>(payload.size());
  out.put<std::uint32_t>(checksum(payload.data(), payload.size()));
  out.bytes(payload.data(), payload.size());
  return std::move(out.buffer());
}

Checkpoint decode_checkpoint(const std::vector<char>& bytes) {
  if (bytes.size() < kHeaderSize) throw LoadError("checkpoint truncated: shorter than its header");
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw LoadError("not a checkpoint file (bad magic)");
  Reader header(bytes.data() + 8, kHeaderSize - 8);
  const auto version = header.get<std::uint32_t>("header");
  if (version != kCheckpointVersion)
    throw LoadError("unsupported checkpoint version " + std::to_string(version));
  const auto length = header.get<std::uint64_t>("header");
  const auto stored_crc = header.get<std::uint32_t>("header");
  if (length != bytes.size() - kHeaderSize)
    throw LoadError("checkpoint length field says " + std::to_string(length) + " payload bytes, file has " +
                    std::to_string(bytes.size() - kHeaderSize));
  if (checksum(bytes.data() + kHeaderSize, length) != stored_crc)
    throw LoadError("checkpoint checksum mismatch (file is corrupted)");

  Reader r(bytes.data() + kHeaderSize, length);
  Checkpoint c;
  try {
    const auto config = nlohmann::json::parse(r.str(r.get<std::uint64_t>("config"), "config"));
    c.model_config = model_config_from_json(config.at("model"));
    c.train_config = train_config_from_json(config.at("train"));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("checkpoint config is malformed: ") + e.what());
  } catch (const ConfigError& e) {
    throw LoadError(std::string("checkpoint config is invalid: ") + e.what());
  }
  c.epoch = r.get<std::uint64_t>("counters");
  c.iter = r.get<std::uint64_t>("counters");
  c.iter_total = r.get<std::uint64_t>("counters");
  c.best_epoch = r.get<std::uint64_t>("counters");
  c.loss_history = r.doubles(r.get<std::uint64_t>("loss history"), "loss history");
  c.validation_history = r.doubles(r.get<std::uint64_t>("validation history"), "validation history");
  c.parameters = r.tensors("parameters");
  c.buffers = r.tensors("buffers");
  for (auto& v : r.tensors("optimizer")) {
    c.optimizer.names.push_back(std::move(v.name));
    c.optimizer.velocity.push_back(std::move(v.value));
  }
  if (!r.done()) throw LoadError("checkpoint has trailing bytes after the optimizer section");

  // Every tensor must match the architecture the embedded config describes.
  ModelParams model = restore_model(c);
  const auto params = model.parameters();
  if (!c.optimizer.names.empty() && !c.optimizer.matches(params))
    throw LoadError("checkpoint optimizer state does not mirror the model parameters");
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const std::vector<char> bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace acenet
