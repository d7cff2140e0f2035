#include "red/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "red/errors.hpp"

namespace red {

namespace {

constexpr char kMagic[8] = {'R', 'E', 'D', 'C', 'K', 'P', 'T', '\0'};
constexpr std::size_t kProbeRows = 8;
constexpr std::uint64_t kProbeSeed = 0x5EED5EEDULL;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <class T>
  void le(T v) {
    if constexpr (std::endian::native == std::endian::big) {
      v = byteswap_value(v);
    }
    bytes(&v, sizeof v);
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    le(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  template <class T>
  static T byteswap_value(T v) {
    T out;
    auto* src = reinterpret_cast<const std::uint8_t*>(&v);
    auto* dst = reinterpret_cast<std::uint8_t*>(&out);
    for (std::size_t i = 0; i < sizeof(T); ++i) dst[i] = src[sizeof(T) - 1 - i];
    return out;
  }
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : buf_(b) {}

  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > buf_.size() - pos_) {
      throw CorruptFileError("checkpoint truncated at byte " + std::to_string(pos_));
    }
    auto out = buf_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  template <class T>
  T le() {
    const auto b = take(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<T>(b[i]) << (8 * i));
    }
    return v;
  }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string str() {
    const auto n = le<std::uint32_t>();
    const auto b = take(n);
    return {b.begin(), b.end()};
  }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  std::span<const std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

std::size_t element_count(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  return n;
}

}  // namespace

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(std::string_view text) {
  return fnv1a64({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::uint64_t probe_hash(const RedModel& m) {
  Rng rng(derive_seed(kProbeSeed, m.dim()));
  Writer w;
  for (std::size_t r = 0; r < kProbeRows; ++r) {
    const Vector x = draw_standard_normal(rng, m.dim());
    w.f64(log_prob(m, x));
  }
  return fnv1a64(w.buffer());
}

std::vector<std::uint8_t> serialize_checkpoint(const RedModel& m, std::uint64_t scaler_hash) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.le(kCheckpointVersion);
  w.str(nlohmann::json(m.config).dump());
  w.le(probe_hash(m));
  w.le(scaler_hash);
  const auto params = m.parameters();
  w.le(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str(p.name);
    w.le(static_cast<std::uint32_t>(p.shape.size()));
    for (std::size_t s : p.shape) {
      w.le(static_cast<std::uint64_t>(s));
    }
    for (double v : p.values) {
      w.f64(v);
    }
  }
  const std::uint64_t checksum = fnv1a64(w.buffer());
  w.le(checksum);
  return std::move(w.buffer());
}

LoadedCheckpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(sizeof kMagic);
  if (std::memcmp(magic.data(), kMagic, sizeof kMagic) != 0) {
    throw CorruptFileError("not a checkpoint file (bad magic)");
  }
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint format version " + std::to_string(version) +
                       " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }

  ModelConfig cfg;
  try {
    cfg = nlohmann::json::parse(r.str()).get<ModelConfig>();
    cfg.validate();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFileError(std::string("checkpoint config unreadable: ") + e.what());
  } catch (const DomainError& e) {
    throw CorruptFileError(std::string("checkpoint config invalid: ") + e.what());
  }

  LoadedCheckpoint out;
  out.probe_hash = r.le<std::uint64_t>();
  out.scaler_hash = r.le<std::uint64_t>();
  out.model = init_model(cfg);
  auto params = out.model.parameters();

  const auto count = r.le<std::uint32_t>();
  if (count != params.size()) {
    throw ShapeError("checkpoint holds " + std::to_string(count) + " parameter arrays, model has " +
                     std::to_string(params.size()));
  }
  for (auto& p : params) {
    const std::string name = r.str();
    if (name != p.name) {
      throw ShapeError("checkpoint record '" + name + "' where '" + p.name + "' was expected");
    }
    const auto rank = r.le<std::uint32_t>();
    if (rank > 8) {
      throw CorruptFileError("checkpoint record '" + name + "' has implausible rank");
    }
    std::vector<std::size_t> shape(rank);
    for (auto& s : shape) {
      s = static_cast<std::size_t>(r.le<std::uint64_t>());
    }
    if (shape != p.shape || element_count(shape) != p.values.size()) {
      throw ShapeError("checkpoint record '" + name + "' has the wrong shape");
    }
    for (double& v : p.values) {
      v = r.f64();
    }
  }

  const std::size_t body_end = r.position();
  const auto stored = r.le<std::uint64_t>();
  if (r.remaining() != 0) {
    throw CorruptFileError("trailing bytes after checkpoint checksum");
  }
  if (stored != fnv1a64(bytes.first(body_end))) {
    throw IntegrityError("checkpoint checksum mismatch (file modified)");
  }
  if (probe_hash(out.model) != out.probe_hash) {
    throw IntegrityError("checkpoint probe hash mismatch");
  }
  return out;
}

void save_checkpoint(const RedModel& m, const std::filesystem::path& path,
                     std::uint64_t scaler_hash) {
  const auto bytes = serialize_checkpoint(m, scaler_hash);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) {
    throw Error("cannot write checkpoint '" + path.string() + "'");
  }
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) {
    throw Error("failed writing checkpoint '" + path.string() + "'");
  }
}

LoadedCheckpoint load_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw DataError("cannot open checkpoint '" + path.string() + "'");
  }
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                        std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

RedModel load_checkpoint(const std::filesystem::path& path) {
  return load_checkpoint_file(path).model;
}

}  // namespace red
