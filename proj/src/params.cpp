#include "oscar/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace oscar {

Tensor ParameterStore::weight(const std::string& name, std::size_t rows, std::size_t cols,
                              Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(rows * cols);
  for (double& v : values) v = dist(rng);
  return add(name, Tensor::from(rows, cols, std::move(values), true));
}

Tensor ParameterStore::zeros(const std::string& name, std::size_t rows, std::size_t cols) {
  return add(name, Tensor::zeros(rows, cols, true));
}

Tensor ParameterStore::ones(const std::string& name, std::size_t rows, std::size_t cols) {
  return add(name, Tensor::from(rows, cols, std::vector<double>(rows * cols, 1.0), true));
}

Tensor ParameterStore::add(const std::string& name, Tensor t) {
  if (params_.contains(name)) throw std::logic_error("duplicate parameter name: " + name);
  t.set_requires_grad(true);
  params_.emplace(name, t);
  return t;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

Tensor& ParameterStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

std::size_t ParameterStore::total_values() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

ParameterStore ParameterStore::clone() const {
  ParameterStore copy;
  for (const auto& [name, t] : params_) {
    copy.add(name, Tensor::from(t.rows(), t.cols(), {t.data().begin(), t.data().end()}, true));
  }
  return copy;
}

void adam_step(ParameterStore& params, OptimizerState& state, const AdamConfig& config) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  for (auto& [name, p] : params.all()) {
    if (!p.has_grad()) throw std::logic_error("adam_step: missing gradient for " + name);
    auto& m = state.first_moment[name];
    auto& v = state.second_moment[name];
    if (m.empty()) {
      m.assign(p.size(), 0.0);
      v.assign(p.size(), 0.0);
    }
    if (m.size() != p.size()) throw std::logic_error("adam_step: moment shape mismatch for " + name);
    auto data = p.mutable_data();
    auto grad = p.grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      data[i] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.epsilon);
    }
  }
}

ClipResult clip_gradients(ParameterStore& params, double max_norm) {
  double sq = 0;
  for (const auto& [_, p] : params.all()) {
    for (double g : p.grad()) sq += g * g;
  }
  ClipResult r{std::sqrt(sq), 1.0};
  if (r.norm > max_norm && r.norm > 0.0) {
    r.factor = max_norm / r.norm;
    for (auto& [_, p] : params.all()) {
      if (!p.has_grad()) continue;
      for (double& g : p.mutable_grad()) g *= r.factor;
    }
  }
  return r;
}

// ---- checkpoint io ----------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'O', 'S', 'C', 'K'};

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T take(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return value;
}

std::string take_string(std::istream& in, std::size_t n) {
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return s;
}

}  // namespace

void write_parameters(std::ostream& out, const ParameterStore& params,
                      const std::string& metadata) {
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, metadata.size());
  out.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
  put<std::uint64_t>(out, params.size());
  for (const auto& [name, t] : params.all()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint64_t>(out, t.rows());
    put<std::uint64_t>(out, t.cols());
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
}

std::string read_parameters(std::istream& in, ParameterStore& params) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("not a checkpoint file");
  const auto version = take<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  std::string metadata = take_string(in, take<std::uint64_t>(in));
  const auto count = take<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = take_string(in, take<std::uint32_t>(in));
    const auto rows = take<std::uint64_t>(in);
    const auto cols = take<std::uint64_t>(in);
    std::vector<double> values(rows * cols);
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint truncated in " + name);
    params.add(name, Tensor::from(rows, cols, std::move(values), true));
  }
  return metadata;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& params,
                     const std::string& metadata) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_parameters(out, params, metadata);
}

std::string load_checkpoint(const std::filesystem::path& path, ParameterStore& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_parameters(in, params);
}

}  // namespace oscar
