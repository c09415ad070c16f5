#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "dsat/nn/tape.hpp"

namespace dsat::nn {

/// Named parameter tensors with gradient slots. Entries have stable
/// addresses, so tapes can bind them as leaves.
class ParamStore {
 public:
  Mat& add(const std::string& name, Mat init) {
    if (entries_.count(name)) throw Error("parameter registered twice: " + name);
    order_.push_back(name);
    auto& e = entries_[name];
    e.grad = Mat::Zero(init.rows(), init.cols());
    e.value = std::move(init);
    return e.value;
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  Mat& value(const std::string& name) { return entry(name).value; }
  const Mat& value(const std::string& name) const { return entry(name).value; }
  Mat& grad(const std::string& name) { return entry(name).grad; }
  const Mat& grad(const std::string& name) const { return entry(name).grad; }

  const std::vector<std::string>& names() const { return order_; }
  std::size_t size() const { return order_.size(); }

  Var bind(Tape& t, const std::string& name) const { return t.leaf(&entry(name).value); }

  void zero_grad() {
    for (auto& [_, e] : entries_) e.grad.setZero();
  }

  void accumulate_grads(const Tape& t) {
    for (auto& [_, e] : entries_) e.grad += t.grad_of(&e.value);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, e] : entries_) n += static_cast<std::size_t>(e.value.size());
    return n;
  }

  bool operator==(const ParamStore& o) const {
    if (order_ != o.order_) return false;
    for (const auto& name : order_)
      if (value(name) != o.value(name)) return false;
    return true;
  }

 private:
  struct Entry {
    Mat value;
    Mat grad;
  };

  Entry& entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error("unknown parameter: " + name);
    return it->second;
  }
  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error("unknown parameter: " + name);
    return it->second;
  }

  std::map<std::string, Entry> entries_;
  std::vector<std::string> order_;
};

/// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
inline Mat uniform_init(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in,
                        std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

// ---------------------------------------------------------------------------
// Checkpoint container
//
//   magic "DSATCKPT" | u32 version | u32 tensor count
//   per tensor: u32 name length | name bytes | u32 ndim | u32 dims[ndim]
//               | float32 payload, row-major
//
// All integers and floats little-endian.

inline constexpr char kCheckpointMagic[8] = {'D', 'S', 'A', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw Error("checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const ParamStore& store) {
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(store.size()));
  for (const auto& name : store.names()) {
    const Mat& m = store.value(name);
    detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(os, 2);
    detail::put_u32(os, static_cast<std::uint32_t>(m.rows()));
    detail::put_u32(os, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const float f = static_cast<float>(m.data()[i]);
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof(bits));
      detail::put_u32(os, bits);
    }
  }
}

inline ParamStore read_checkpoint(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw Error("checkpoint: bad magic");
  const auto version = detail::get_u32(is);
  if (version != kCheckpointVersion)
    throw Error("checkpoint: unsupported version " + std::to_string(version));
  ParamStore store;
  const auto count = detail::get_u32(is);
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name(detail::get_u32(is), '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(name.size())))
      throw Error("checkpoint: truncated name");
    const auto ndim = detail::get_u32(is);
    if (ndim == 0 || ndim > 2) throw Error("checkpoint: unsupported rank for " + name);
    const Eigen::Index rows = detail::get_u32(is);
    const Eigen::Index cols = ndim == 2 ? detail::get_u32(is) : 1;
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const std::uint32_t bits = detail::get_u32(is);
      float f;
      std::memcpy(&f, &bits, sizeof(f));
      m.data()[i] = f;
    }
    store.add(name, std::move(m));
  }
  return store;
}

inline void save_checkpoint(const std::string& path, const ParamStore& store) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open for writing: " + path);
  write_checkpoint(os, store);
}

inline ParamStore load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint: " + path);
  return read_checkpoint(is);
}

}  // namespace dsat::nn
