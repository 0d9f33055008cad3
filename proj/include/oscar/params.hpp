#pragma once

#include "oscar/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace oscar {

using Rng = std::mt19937_64;

/// Named, ordered set of trainable tensors. Names are unique; iteration order
/// is lexicographic so checkpoints and optimizer traversal are deterministic.
class ParameterStore {
 public:
  /// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) with fan_in = rows.
  Tensor weight(const std::string& name, std::size_t rows, std::size_t cols, Rng& rng);
  Tensor zeros(const std::string& name, std::size_t rows, std::size_t cols);
  Tensor ones(const std::string& name, std::size_t rows, std::size_t cols);
  Tensor add(const std::string& name, Tensor t);

  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool contains(const std::string& name) const { return params_.contains(name); }
  const std::map<std::string, Tensor>& all() const { return params_; }
  std::map<std::string, Tensor>& all() { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t total_values() const;

  void zero_grad();
  /// Deep copy of every parameter's values (no shared storage).
  ParameterStore clone() const;

 private:
  std::map<std::string, Tensor> params_;
};

struct AdamConfig {
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Per-parameter first/second moments plus the shared step count.
struct OptimizerState {
  std::map<std::string, std::vector<double>> first_moment;
  std::map<std::string, std::vector<double>> second_moment;
  std::int64_t step = 0;
};

/// One Adam update over every parameter in `params`, using their stored
/// gradients. Throws std::logic_error if a parameter has no gradient store.
void adam_step(ParameterStore& params, OptimizerState& state, const AdamConfig& config);

struct ClipResult {
  double norm = 0.0;   // global L2 norm before clipping
  double factor = 1.0; // scaling applied (1 when unchanged)
};

/// Rescales all gradients by max_norm / g when the global L2 norm g exceeds
/// max_norm. Parameters without a gradient store are skipped.
ClipResult clip_gradients(ParameterStore& params, double max_norm);

// ---- checkpoint files ----------------------------------------------------------------
// Layout (little-endian): "OSCK" magic, u32 version, u64 metadata length,
// metadata bytes (UTF-8 JSON, opaque here), u64 parameter count, then per
// parameter: u32 name length, name bytes, u64 rows, u64 cols, rows*cols f64.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_parameters(std::ostream& out, const ParameterStore& params, const std::string& metadata);
/// Reads a checkpoint into a fresh store; returns the metadata string.
std::string read_parameters(std::istream& in, ParameterStore& params);
void save_checkpoint(const std::filesystem::path& path, const ParameterStore& params,
                     const std::string& metadata);
std::string load_checkpoint(const std::filesystem::path& path, ParameterStore& params);

}  // namespace oscar
