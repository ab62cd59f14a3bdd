#include "precodec/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace precodec {

void ParamSet::add(const std::string& name, Tensor value) {
  if (!params_.emplace(name, std::move(value)).second) throw InvalidArgument("duplicate parameter name: " + name);
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ModelError("missing parameter: " + name);
  return it->second;
}

void ParamSet::set(const std::string& name, Tensor value) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ModelError("missing parameter: " + name);
  if (it->second.shape() != value.shape()) {
    throw InvalidShape("parameter " + name + " shape " + shape_str(it->second.shape()) + " cannot become " +
                       shape_str(value.shape()));
  }
  it->second = std::move(value);
}

std::vector<std::string> ParamSet::names() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : params_) out.push_back(k);
  return out;
}

Index ParamSet::count() const {
  Index n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

ParamSet ParamSet::trainable() const {
  ParamSet out;
  for (const auto& [k, t] : params_) out.params_.emplace(k, t.as_leaf(true));
  return out;
}

ParamSet ParamSet::frozen() const {
  ParamSet out;
  for (const auto& [k, t] : params_) out.params_.emplace(k, t.as_leaf(false));
  return out;
}

bool ParamSet::bitwise_equal(const ParamSet& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (const auto& [k, t] : params_) {
    auto it = other.params_.find(k);
    if (it == other.params_.end() || it->second.shape() != t.shape()) return false;
    auto a = t.data();
    auto b = it->second.data();
    if (std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

Tensor init_normal(Rng& rng, Shape shape, double stddev) {
  const Index n = numel_of(shape);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) x = rng.normal() * stddev;
  return Tensor::from(std::move(shape), std::move(v));
}

Tensor init_conv(Rng& rng, Index out_c, Index in_c, Index kh, Index kw, double gain) {
  return init_normal(rng, {out_c, in_c, kh, kw}, gain * std::sqrt(2.0 / static_cast<double>(in_c * kh * kw)));
}

Tensor init_linear(Rng& rng, Index out_f, Index in_f, double gain) {
  return init_normal(rng, {out_f, in_f}, gain * std::sqrt(2.0 / static_cast<double>(in_f)));
}

namespace {

template <typename T>
void put(std::string& out, T v) {
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    out.append(reinterpret_cast<const char*>(b), sizeof(T));
  } else {
    out.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
}

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}
  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > s_.size()) throw CorruptStream("checkpoint truncated");
    unsigned char b[sizeof(T)];
    std::memcpy(b, s_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
      for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    }
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
  std::string bytes(std::size_t n) {
    if (pos_ + n > s_.size()) throw CorruptStream("checkpoint truncated");
    std::string out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  bool done() const { return pos_ == s_.size(); }

 private:
  const std::string& s_;
  std::size_t pos_ = 0;
};

constexpr std::uint8_t kDtypeF64 = 8;

}  // namespace

std::string serialize_checkpoint(const ParamSet& params) {
  std::string out(kCheckpointMagic, 4);
  put<std::uint8_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params.items()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, kDtypeF64);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (Index e : t.shape()) put<std::int64_t>(out, e);
    for (double v : t.data()) put<double>(out, v);
  }
  return out;
}

ParamSet parse_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.bytes(4) != std::string(kCheckpointMagic, 4)) throw CorruptStream("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint8_t>();
  if (version != kCheckpointVersion) throw UnsupportedFormat("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  ParamSet params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>();
    std::string name = r.bytes(len);
    if (r.get<std::uint8_t>() != kDtypeF64) throw UnsupportedFormat("unsupported dtype in record " + name);
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& e : shape) e = r.get<std::int64_t>();
    const Index n = numel_of(shape);
    std::vector<double> values(static_cast<std::size_t>(n));
    for (auto& v : values) v = r.get<double>();
    // Bypass precision rounding: checkpoints restore stored values exactly.
    PrecisionGuard exact(Precision::kFloat64);
    params.add(name, Tensor::from(std::move(shape), std::move(values)));
  }
  if (!r.done()) throw CorruptStream("trailing bytes after checkpoint records");
  return params;
}

void save_checkpoint(const ParamSet& params, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint " + path.string());
  const std::string bytes = serialize_checkpoint(params);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing checkpoint " + path.string());
}

ParamSet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_checkpoint(ss.str());
}

void Adam::step(ParamSet& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (const std::string& name : params.names()) {
    const Tensor& p = params.at(name);
    const std::vector<double>* g = p.grad();
    if (g == nullptr || !p.requires_grad()) continue;
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) {
      m.assign(g->size(), 0.0);
      v.assign(g->size(), 0.0);
    }
    auto pd = p.data();
    std::vector<double> next(pd.begin(), pd.end());
    for (std::size_t i = 0; i < next.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * (*g)[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * (*g)[i] * (*g)[i];
      next[i] -= config_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.eps);
    }
    params.set(name, Tensor::from(p.shape(), std::move(next), true));
  }
}

}  // namespace precodec
