#include "structrans/parameters.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace structrans {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw UsageError("Rng::below: empty range");
  const std::uint64_t range = n;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % range;
  std::uint64_t v;
  do v = engine_();
  while (v >= limit);
  return static_cast<std::size_t>(v % range);
}

const ad::Var& ParameterStore::add(const std::string& name, Array init) {
  if (contains(name)) throw UsageError("ParameterStore: duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, ad::parameter(std::move(init)));
  return entries_.back().second;
}

const ad::Var& ParameterStore::add_uniform(const std::string& name, Shape shape, double scale, Rng& rng) {
  Array a(std::move(shape));
  for (auto& v : a.storage()) v = rng.uniform(-scale, scale);
  return add(name, std::move(a));
}

const ad::Var& ParameterStore::add_zeros(const std::string& name, Shape shape) {
  return add(name, Array(std::move(shape), 0.0));
}

const ad::Var& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("ParameterStore: unknown parameter '" + name + "'");
  return entries_[it->second].second;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : entries_) n += v->value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, v] : entries_) v->zero_grad();
}

void ParameterStore::assign(const std::vector<std::pair<std::string, Array>>& values) {
  if (values.size() != entries_.size())
    throw UsageError("ParameterStore::assign: expected " + std::to_string(entries_.size()) + " tensors, got " +
                     std::to_string(values.size()));
  for (const auto& [name, arr] : values) {
    const auto& var = get(name);
    if (var->value.shape() != arr.shape()) throw ShapeError("ParameterStore::assign(" + name + ")", {var->value.shape(), arr.shape()});
    var->value = arr;
  }
}

std::vector<std::pair<std::string, Array>> ParameterStore::snapshot() const {
  std::vector<std::pair<std::string, Array>> out;
  out.reserve(entries_.size());
  for (const auto& [name, v] : entries_) out.emplace_back(name, v->value);
  return out;
}

namespace {

constexpr char kMagic[8] = {'S', 'T', 'R', 'T', 'C', 'K', 'P', 'T'};

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T take(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw std::runtime_error("checkpoint " + path.string() + ": truncated file");
  return v;
}

std::string take_string(std::istream& is, std::size_t len, const std::filesystem::path& path) {
  std::string s(len, '\0');
  if (len && !is.read(s.data(), static_cast<std::streamsize>(len)))
    throw std::runtime_error("checkpoint " + path.string() + ": truncated file");
  return s;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint64_t>(os, ckpt.metadata.size());
  os.write(ckpt.metadata.data(), static_cast<std::streamsize>(ckpt.metadata.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, arr] : ckpt.tensors) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(arr.rank()));
    for (auto d : arr.shape()) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(arr.data().data()), static_cast<std::streamsize>(arr.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("error writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("checkpoint " + path.string() + ": bad magic");
  const auto version = take<std::uint32_t>(is, path);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint " + path.string() + ": unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.metadata = take_string(is, take<std::uint64_t>(is, path), path);
  const auto count = take<std::uint32_t>(is, path);
  for (std::uint32_t t = 0; t < count; ++t) {
    std::string name = take_string(is, take<std::uint32_t>(is, path), path);
    const auto rank = take<std::uint32_t>(is, path);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<std::size_t>(take<std::uint64_t>(is, path)));
    Array arr(shape);
    if (arr.size() && !is.read(reinterpret_cast<char*>(arr.data().data()), static_cast<std::streamsize>(arr.size() * sizeof(double))))
      throw std::runtime_error("checkpoint " + path.string() + ": truncated tensor '" + name + "'");
    ckpt.tensors.emplace_back(std::move(name), std::move(arr));
  }
  return ckpt;
}

Adam::Adam(ParameterStore& store, Options options) : store_(store), options_(options) {
  for (const auto& [_, v] : store_.entries()) {
    first_.emplace_back(v->value.shape(), 0.0);
    second_.emplace_back(v->value.shape(), 0.0);
  }
}

double Adam::step() {
  const auto& entries = store_.entries();
  double sq = 0.0;
  for (const auto& [_, v] : entries)
    if (v->has_grad())
      for (double g : v->grad.data()) sq += g * g;
  const double norm = std::sqrt(sq);
  const double factor = (options_.clip_norm > 0 && norm > options_.clip_norm) ? options_.clip_norm / norm : 1.0;

  ++steps_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
  for (std::size_t p = 0; p < entries.size(); ++p) {
    auto& v = entries[p].second;
    if (!v->has_grad()) continue;
    auto& m = first_[p];
    auto& s = second_[p];
    for (std::size_t k = 0; k < v->value.size(); ++k) {
      const double g = v->grad[k] * factor;
      m[k] = options_.beta1 * m[k] + (1.0 - options_.beta1) * g;
      s[k] = options_.beta2 * s[k] + (1.0 - options_.beta2) * g * g;
      v->value[k] -= options_.learning_rate * (m[k] / bc1) / (std::sqrt(s[k] / bc2) + options_.epsilon);
    }
    v->zero_grad();
  }
  return norm;
}

}  // namespace structrans
