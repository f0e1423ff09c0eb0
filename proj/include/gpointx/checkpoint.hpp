#ifndef GPOINTX_CHECKPOINT_HPP_
#define GPOINTX_CHECKPOINT_HPP_

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "gpointx/errors.hpp"
#include "gpointx/models.hpp"

namespace gpx {

// "GPXM1" checkpoint: magic, u32 record count, then per tensor
// u32 name length + name bytes + u32 rank + u64 dims + f64 values,
// all little-endian.
namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u64(out, bits);
}

class ByteReader {
 public:
  ByteReader(const std::string& data) : data_(data) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(u64_n(4)); }
  std::uint64_t u64() { return u64_n(8); }

  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  std::uint64_t u64_n(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw ParseError("checkpoint: truncated file");
  }

  const std::string& data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

struct CheckpointTensor {
  std::vector<std::size_t> dims;
  std::vector<double> values;
};

using CheckpointData = std::map<std::string, CheckpointTensor>;

inline std::string encode_checkpoint(const std::vector<std::pair<std::string, CheckpointTensor>>& tensors) {
  std::string out = "GPXM1";
  detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
    std::size_t n = 1;
    for (std::size_t d : t.dims) {
      detail::put_u64(out, d);
      n *= d;
    }
    if (n != t.values.size()) throw ShapeError("checkpoint: dims do not match value count");
    for (double v : t.values) detail::put_f64(out, v);
  }
  return out;
}

inline CheckpointData decode_checkpoint(const std::string& data) {
  if (data.size() < 5 || data.substr(0, 5) != "GPXM1")
    throw ParseError("checkpoint: bad magic (expected GPXM1)");
  detail::ByteReader r(data);
  r.bytes(5);
  const std::uint32_t count = r.u32();
  CheckpointData out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    const std::string name = r.bytes(name_len);
    const std::uint32_t rank = r.u32();
    CheckpointTensor t;
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      t.dims.push_back(static_cast<std::size_t>(r.u64()));
      n *= t.dims.back();
    }
    t.values.resize(n);
    for (std::size_t v = 0; v < n; ++v) t.values[v] = r.f64();
    out.emplace(name, std::move(t));
  }
  if (!r.done()) throw ParseError("checkpoint: trailing bytes");
  return out;
}

template <class Real>
std::string serialize_model(const ModelParams<Real>& model) {
  std::vector<std::pair<std::string, CheckpointTensor>> tensors;
  for_each_tensor(const_cast<ModelParams<Real>&>(model),
                  [&tensors](const std::string& name, const std::vector<std::size_t>& dims,
                             std::vector<Real>& values) {
                    CheckpointTensor t;
                    t.dims = dims;
                    t.values.assign(values.begin(), values.end());
                    tensors.emplace_back(name, std::move(t));
                  });
  return encode_checkpoint(tensors);
}

template <class Real>
void save_model(const std::string& path, const ModelParams<Real>& model) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("save_model: cannot open " + path);
  const std::string data = serialize_model(model);
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!f) throw ConfigError("save_model: write failed for " + path);
  std::ofstream side(path + ".config");
  if (!side) throw ConfigError("save_model: cannot open " + path + ".config");
  side << config_to_text(model.config);
}

template <class Real>
ModelParams<Real> load_model(const std::string& path) {
  std::ifstream side_in(path + ".config");
  if (!side_in) throw ConfigError("load_model: missing sidecar " + path + ".config");
  std::string side_text((std::istreambuf_iterator<char>(side_in)), std::istreambuf_iterator<char>());
  const ModelConfig cfg = config_from_text(side_text);

  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("load_model: cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  CheckpointData tensors = decode_checkpoint(data);

  Rng scratch(0);
  ModelParams<Real> model = build_model<Real>(cfg, scratch);
  std::size_t used = 0;
  for_each_tensor(model, [&tensors, &used](const std::string& name, const std::vector<std::size_t>& dims,
                                           std::vector<Real>& values) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ParseError("checkpoint: missing tensor " + name);
    if (it->second.dims != dims) throw ParseError("checkpoint: shape mismatch for " + name);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<Real>(it->second.values[i]);
    ++used;
  });
  if (used != tensors.size()) throw ParseError("checkpoint: extraneous tensors present");
  return model;
}

}  // namespace gpx

#endif  // GPOINTX_CHECKPOINT_HPP_
