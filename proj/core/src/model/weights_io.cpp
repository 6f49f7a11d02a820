#include "tcr/model/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace tcr::model {
namespace {

static_assert(std::endian::native == std::endian::little,
              "weight files are little-endian; add byte swapping for this target");

constexpr char kMagic[4] = {'F', 'C', 'N', 'W'};

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  void record(const std::string& id, const nn::Shape& shape, const float* data) {
    u32(static_cast<std::uint32_t>(id.size()));
    raw(id.data(), id.size());
    u32(4);
    u32(shape.n);
    u32(shape.c);
    u32(shape.h);
    u32(shape.w);
    raw(data, shape.size() * sizeof(float));
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint32_t u32() {
    std::uint32_t v;
    take(&v, sizeof v);
    return v;
  }
  void take(void* dst, std::size_t n) {
    if (n > size_ - pos_) {
      throw WeightsError(WeightsError::Kind::format, "weight file ends inside a record");
    }
    std::memcpy(dst, data_ + pos_, n);
    pos_ += n;
  }
  [[nodiscard]] std::size_t remaining() const { return size_ - pos_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

struct Record {
  std::string id;
  nn::Shape shape;
  std::vector<float> values;
};

Record read_record(Reader& in) {
  Record r;
  const std::uint32_t len = in.u32();
  if (len > 4096) throw WeightsError(WeightsError::Kind::format, "record id too long");
  r.id.resize(len);
  in.take(r.id.data(), len);
  const std::uint32_t ndims = in.u32();
  if (ndims != 4) {
    throw WeightsError(WeightsError::Kind::format, "record " + r.id + " has " +
                                                       std::to_string(ndims) + " dims");
  }
  r.shape = nn::Shape{static_cast<int>(in.u32()), static_cast<int>(in.u32()),
                      static_cast<int>(in.u32()), static_cast<int>(in.u32())};
  const std::size_t count = r.shape.size();
  if (count * sizeof(float) > in.remaining()) {
    throw WeightsError(WeightsError::Kind::format, "record " + r.id + " is truncated");
  }
  r.values.resize(count);
  in.take(r.values.data(), count * sizeof(float));
  return r;
}

}  // namespace


std::vector<std::uint8_t> serialize_weights(const UNet& model) {
  Writer out;
  out.raw(kMagic, 4);
  out.u32(kWeightsFormatVersion);
  const ModelConfig& c = model.config();
  for (int v : {c.levels, c.base_channels, c.in_channels, c.out_maps, c.convs_per_level,
                c.deep_extra_convs}) {
    out.u32(static_cast<std::uint32_t>(v));
  }
  const auto params = model.parameters();
  const auto& stats = model.batchnorm_stats();
  out.u32(static_cast<std::uint32_t>(params.size() + 2 * stats.size()));
  for (const auto& p : params) out.record(p.name, p.value.shape(), p.value.raw());
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const auto& name = model.batchnorm_names()[i];
    const nn::Shape shape{1, static_cast<int>(stats[i].running_mean.size()), 1, 1};
    out.record(name + ".running_mean", shape, stats[i].running_mean.data());
    out.record(name + ".running_var", shape, stats[i].running_var.data());
  }
  out.u32(crc32(out.bytes.data(), out.bytes.size()));
  return std::move(out.bytes);
}

UNet deserialize_weights(const std::vector<std::uint8_t>& bytes,
                         std::optional<int> expected_out_maps) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    if (bytes.size() < 4) {
      throw WeightsError(WeightsError::Kind::checksum, "weight file truncated");
    }
    throw WeightsError(WeightsError::Kind::format, "not a weight file (bad magic)");
  }
  if (bytes.size() < 12) throw WeightsError(WeightsError::Kind::checksum, "weight file truncated");
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  if (crc32(bytes.data(), bytes.size() - 4) != stored) {
    throw WeightsError(WeightsError::Kind::checksum,
                       "weight file checksum mismatch (truncated or corrupted)");
  }
  Reader in(bytes.data() + 4, bytes.size() - 8);
  const std::uint32_t version = in.u32();
  if (version != kWeightsFormatVersion) {
    throw WeightsError(WeightsError::Kind::version,
                       "unsupported weight format version " + std::to_string(version) +
                           " (expected " + std::to_string(kWeightsFormatVersion) + ")");
  }
  ModelConfig config;
  config.levels = static_cast<int>(in.u32());
  config.base_channels = static_cast<int>(in.u32());
  config.in_channels = static_cast<int>(in.u32());
  config.out_maps = static_cast<int>(in.u32());
  config.convs_per_level = static_cast<int>(in.u32());
  config.deep_extra_convs = static_cast<int>(in.u32());
  if (expected_out_maps && config.out_maps != *expected_out_maps) {
    throw WeightsError(WeightsError::Kind::config_mismatch,
                       "weight file has out_maps=" + std::to_string(config.out_maps) +
                           " but " + std::to_string(*expected_out_maps) + " is required");
  }
  try {
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw WeightsError(WeightsError::Kind::format, e.what());
  }
  UNet model(config, 0);
  auto params = model.parameters();
  auto& stats = model.batchnorm_stats();
  const std::uint32_t count = in.u32();
  if (count != params.size() + 2 * stats.size()) {
    throw WeightsError(WeightsError::Kind::config_mismatch,
                       "record count " + std::to_string(count) + " does not match config");
  }
  auto expect = [](const Record& r, const std::string& id, const nn::Shape& shape) {
    if (r.id != id || r.shape != shape) {
      throw WeightsError(WeightsError::Kind::config_mismatch,
                         "record " + r.id + r.shape.str() + " where " + id + shape.str() +
                             " was expected");
    }
  };
  for (auto& p : params) {
    Record r = read_record(in);
    expect(r, p.name, p.value.shape());
    std::copy(r.values.begin(), r.values.end(), p.value.data().begin());
  }
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const auto& name = model.batchnorm_names()[i];
    const nn::Shape shape{1, static_cast<int>(stats[i].running_mean.size()), 1, 1};
    Record mean = read_record(in);
    expect(mean, name + ".running_mean", shape);
    Record var = read_record(in);
    expect(var, name + ".running_var", shape);
    stats[i].running_mean = std::move(mean.values);
    stats[i].running_var = std::move(var.values);
  }
  if (in.remaining() != 0) {
    throw WeightsError(WeightsError::Kind::format, "trailing bytes after the last record");
  }
  return model;
}

void save_weights(const UNet& model, const std::filesystem::path& path) {
  const auto bytes = serialize_weights(model);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw WeightsError(WeightsError::Kind::io, "cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw WeightsError(WeightsError::Kind::io, "short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

UNet load_weights(const std::filesystem::path& path, std::optional<int> expected_out_maps) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WeightsError(WeightsError::Kind::io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_weights(bytes, expected_out_maps);
}

}  // namespace tcr::model
