#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "fedaml/tensor.hpp"

namespace fedaml {

// Ordered collection of named dense tensors: one model replica. Order is
// significant; it is the order leaves are registered on a tape and the
// order tensors appear in checkpoints.
class ModelParams {
 public:
  using Entry = std::pair<std::string, Tensor>;

  void add(std::string name, Tensor value);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  bool contains(const std::string& name) const;

  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  const Entry& operator[](std::size_t i) const { return entries_[i]; }
  Entry& operator[](std::size_t i) { return entries_[i]; }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

  // Same names, same order, same shapes.
  bool aligned_with(const ModelParams& other) const;
  bool all_finite() const;
  std::size_t scalar_count() const;

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    return a.entries_ == b.entries_;
  }

 private:
  std::vector<Entry> entries_;
};

// p <- p - lr * g for every tensor. Throws UsageError if grads are not
// aligned with params by name and shape.
ModelParams sgd_step(const ModelParams& params, const ModelParams& grads, double lr);

// First and second moment estimates for adam_step. Empty until the first
// step; kept per replica and never averaged.
struct AdamState {
  ModelParams m;
  ModelParams v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

ModelParams adam_step(const ModelParams& params, const ModelParams& grads, double lr,
                      AdamState& state);

// Checkpoint container: magic, version tag, then for each tensor its name,
// shape, and little-endian IEEE-754 payload.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const ModelParams& params);
ModelParams read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace fedaml
