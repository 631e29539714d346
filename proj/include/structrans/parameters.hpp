#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "structrans/autodiff.hpp"

namespace structrans {

// Portable random helpers on top of mt19937_64 (whose output sequence is
// fixed by the standard, unlike the std distributions).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform();                                // [0, 1)
  double uniform(double lo, double hi);            // [lo, hi)
  std::size_t below(std::size_t n);                // [0, n), unbiased
  bool bernoulli(double p) { return uniform() < p; }
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

// Named trainable arrays with insertion-ordered iteration.
class ParameterStore {
 public:
  const ad::Var& add(const std::string& name, Array init);
  // Uniform in [-scale, scale].
  const ad::Var& add_uniform(const std::string& name, Shape shape, double scale, Rng& rng);
  const ad::Var& add_zeros(const std::string& name, Shape shape);

  const ad::Var& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const std::vector<std::pair<std::string, ad::Var>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();

  // Overwrites values from another store with identical names and shapes.
  void assign(const std::vector<std::pair<std::string, Array>>& values);
  std::vector<std::pair<std::string, Array>> snapshot() const;

 private:
  std::vector<std::pair<std::string, ad::Var>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Checkpoint file layout (all integers and floats little-endian):
//   magic "STRTCKPT" (8 bytes)
//   u32 format version (currently 1)
//   u64 metadata length, metadata bytes (UTF-8 JSON, may be empty)
//   u32 tensor count
//   per tensor: u32 name length, name bytes, u32 rank, u64 extents[rank],
//               f64 values[product(extents)] in row-major order
struct Checkpoint {
  std::string metadata;
  std::vector<std::pair<std::string, Array>> tensors;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

class Adam {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double clip_norm = 5.0;  // <= 0 disables clipping
  };

  Adam(ParameterStore& store, Options options);

  // Applies one update from the accumulated gradients, then zeroes them.
  // Returns the gradient norm before clipping.
  double step();

 private:
  ParameterStore& store_;
  Options options_;
  std::vector<Array> first_;
  std::vector<Array> second_;
  std::uint64_t steps_ = 0;
};

}  // namespace structrans
