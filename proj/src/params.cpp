#include "fedaml/params.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>

#include "fedaml/error.hpp"

namespace fedaml {

void ModelParams::add(std::string name, Tensor value) {
  if (contains(name)) throw UsageError("duplicate parameter name: " + name);
  entries_.emplace_back(std::move(name), std::move(value));
}

bool ModelParams::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const Entry& e) { return e.first == name; });
}

const Tensor& ModelParams::at(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.first == name) return e.second;
  throw UsageError("unknown parameter: " + name);
}

Tensor& ModelParams::at(const std::string& name) {
  for (auto& e : entries_)
    if (e.first == name) return e.second;
  throw UsageError("unknown parameter: " + name);
}

bool ModelParams::aligned_with(const ModelParams& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first != other.entries_[i].first) return false;
    if (!entries_[i].second.same_shape(other.entries_[i].second)) return false;
  }
  return true;
}

bool ModelParams::all_finite() const {
  for (const auto& e : entries_)
    for (double v : e.second.data())
      if (!std::isfinite(v)) return false;
  return true;
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

ModelParams sgd_step(const ModelParams& params, const ModelParams& grads, double lr) {
  if (!params.aligned_with(grads)) {
    throw UsageError("sgd_step: gradients are not aligned with parameters by name and shape");
  }
  ModelParams out = params;
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto p = out[i].second.data();
    auto g = grads[i].second.data();
    for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * g[k];
  }
  return out;
}

ModelParams adam_step(const ModelParams& params, const ModelParams& grads, double lr,
                      AdamState& state) {
  if (!params.aligned_with(grads)) {
    throw UsageError("adam_step: gradients are not aligned with parameters by name and shape");
  }
  if (state.step == 0) {
    state.m = ModelParams{};
    state.v = ModelParams{};
    for (const auto& [name, t] : params) {
      state.m.add(name, Tensor(t.shape()));
      state.v.add(name, Tensor(t.shape()));
    }
  } else if (!state.m.aligned_with(params)) {
    throw UsageError("adam_step: optimizer state does not match parameters");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  ModelParams out = params;
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto p = out[i].second.data();
    auto g = grads[i].second.data();
    auto m = state.m[i].second.data();
    auto v = state.v[i].second.data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + state.eps);
    }
  }
  return out;
}

namespace {

constexpr std::array<char, 8> kMagic = {'F', 'A', 'M', 'L', 'C', 'K', 'P', 'T'};

void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> b;
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(b.data(), b.size());
}

void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b;
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(b.data(), b.size());
}

std::uint64_t get_u64(std::istream& in) {
  std::array<unsigned char, 8> b{};
  in.read(reinterpret_cast<char*>(b.data()), b.size());
  if (!in) throw DataError("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), b.size());
  if (!in) throw DataError("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

}  // namespace

void write_checkpoint(std::ostream& out, const ModelParams& params) {
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, tensor] : params) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) put_u64(out, d);
    for (double v : tensor.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw DataError("failed writing checkpoint");
}

ModelParams read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw DataError("not a checkpoint file (bad magic)");
  const std::uint32_t version = get_u32(in);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = get_u32(in);
  ModelParams params;
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint32_t len = get_u32(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in) throw DataError("checkpoint truncated");
    const std::uint32_t rank = get_u32(in);
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(get_u64(in));
      n *= d;
    }
    std::vector<double> data(n);
    for (double& v : data) v = std::bit_cast<double>(get_u64(in));
    params.add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path.string());
  write_checkpoint(out, params);
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing checkpoint: " + path.string());
  return read_checkpoint(in);
}

}  // namespace fedaml
