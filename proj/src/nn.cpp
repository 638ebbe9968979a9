#include "stylemt/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

#include "stylemt/error.hpp"

namespace stylemt::nn {

std::size_t ParamSet::add(std::string name, ad::Shape shape, bool bias) {
  for (const auto& p : params_)
    if (p.name == name) throw std::invalid_argument("duplicate parameter name " + name);
  params_.push_back({std::move(name), shape, std::vector<double>(shape.size(), 0.0), bias});
  return params_.size() - 1;
}

std::size_t ParamSet::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return i;
  throw std::out_of_range("no parameter named " + name);
}

std::size_t ParamSet::value_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

bool ParamSet::all_finite() const {
  for (const auto& p : params_)
    for (double v : p.value)
      if (!std::isfinite(v)) return false;
  return true;
}

Gradients::Gradients(const ParamSet& params) {
  grads_.reserve(params.size());
  for (const auto& p : params) grads_.emplace_back(p.value.size(), 0.0);
}

void Gradients::zero() {
  for (auto& g : grads_) std::fill(g.begin(), g.end(), 0.0);
}

double Gradients::global_norm() const {
  double s = 0;
  for (const auto& g : grads_)
    for (double v : g) s += v * v;
  return std::sqrt(s);
}

void Gradients::scale(double c) {
  for (auto& g : grads_)
    for (double& v : g) v *= c;
}

bool Gradients::all_zero() const {
  for (const auto& g : grads_)
    for (double v : g)
      if (v != 0.0) return false;
  return true;
}

Binding::Binding(ad::Tape& tape, const ParamSet& params, Gradients* grads) : tape_(&tape) {
  vars_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::span<double> sink;
    if (grads) sink = (*grads)[i];
    vars_.push_back(tape.parameter(params[i].shape, params[i].value, sink));
  }
}

void init_normal_fan(ParamSet& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& p : params) {
    if (p.bias) {
      std::fill(p.value.begin(), p.value.end(), 0.0);
      continue;
    }
    const double stddev = std::sqrt(6.0 / static_cast<double>(p.shape.rows + p.shape.cols));
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : p.value) v = dist(rng);
  }
}

double clip_global_norm(Gradients& grads, double max_norm) {
  const double norm = grads.global_norm();
  if (max_norm > 0 && norm > max_norm) grads.scale(max_norm / norm);
  return norm;
}

Adadelta::Adadelta(const ParamSet& params, AdadeltaConfig config) : config_(config) {
  for (const auto& p : params) {
    avg_sq_grad_.emplace_back(p.value.size(), 0.0);
    avg_sq_update_.emplace_back(p.value.size(), 0.0);
  }
}

double Adadelta::step(ParamSet& params, Gradients& grads) {
  if (avg_sq_grad_.size() != params.size()) throw std::logic_error("optimizer state does not match parameters");
  const double norm = clip_global_norm(grads, config_.clip_norm);
  const double rho = config_.rho, eps = config_.eps;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& value = params[i].value;
    auto g = grads[i];
    auto& eg = avg_sq_grad_[i];
    auto& ex = avg_sq_update_[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      eg[j] = rho * eg[j] + (1 - rho) * g[j] * g[j];
      const double update = -std::sqrt(ex[j] + eps) / std::sqrt(eg[j] + eps) * g[j];
      ex[j] = rho * ex[j] + (1 - rho) * update * update;
      value[j] += config_.lr * update;
    }
  }
  ++steps_;
  return norm;
}

GruLayer add_gru(ParamSet& params, const std::string& prefix, std::size_t input, std::size_t hidden) {
  GruLayer g;
  g.hidden = hidden;
  g.w_input = params.add(prefix + ".w_input", {input, 3 * hidden});
  g.u_gates = params.add(prefix + ".u_gates", {hidden, 2 * hidden});
  g.u_cand = params.add(prefix + ".u_cand", {hidden, hidden});
  g.bias = params.add(prefix + ".bias", {1, 3 * hidden}, true);
  return g;
}

ad::Var gru_step(const Binding& bound, const GruLayer& layer, const ad::Var& x, const ad::Var& h) {
  const std::size_t H = layer.hidden;
  ad::Var xw = ad::add(ad::matmul(x, bound[layer.w_input]), bound[layer.bias]);
  ad::Var hu = ad::matmul(h, bound[layer.u_gates]);
  ad::Var gates = ad::sigmoid(ad::add(ad::slice(xw, 1, 0, 2 * H), hu));
  ad::Var r = ad::slice(gates, 1, 0, H);
  ad::Var z = ad::slice(gates, 1, H, 2 * H);
  ad::Var cand = ad::tanh(ad::add(ad::slice(xw, 1, 2 * H, 3 * H), ad::matmul(ad::mul(r, h), bound[layer.u_cand])));
  // h + z * (cand - h)
  return ad::add(h, ad::mul(z, ad::sub(cand, h)));
}

namespace {

constexpr char kMagic[8] = {'S', 'T', 'M', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ofstream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <class T>
T get(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("truncated checkpoint");
  return v;
}

std::string get_string(std::ifstream& in) {
  const auto n = get<std::uint64_t>(in);
  if (n > (1ull << 32)) throw DataError("corrupt checkpoint string length");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw DataError("truncated checkpoint");
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::string& kind,
                     const std::string& config_json, const ParamSet& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put_string(out, kind);
  put_string(out, config_json);
  put<std::uint64_t>(out, params.size());
  for (const auto& p : params) {
    put_string(out, p.name);
    put<std::uint8_t>(out, p.bias ? 1 : 0);
    put<std::uint64_t>(out, p.shape.rows);
    put<std::uint64_t>(out, p.shape.cols);
    out.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) throw DataError("not a checkpoint: " + path.string());
  const auto version = get<std::uint32_t>(in);
  if (version != kVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.kind = get_string(in);
  ck.config_json = get_string(in);
  const auto count = get<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = get_string(in);
    const bool bias = get<std::uint8_t>(in) != 0;
    const auto rows = get<std::uint64_t>(in);
    const auto cols = get<std::uint64_t>(in);
    const std::size_t idx = ck.params.add(name, {rows, cols}, bias);
    auto& v = ck.params[idx].value;
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!in) throw DataError("truncated tensor " + name + " in " + path.string());
  }
  return ck;
}

void assign_params(ParamSet& params, const ParamSet& from) {
  if (params.size() != from.size()) throw DataError("checkpoint tensor count does not match model");
  for (auto& p : params) {
    const auto& src = from[from.index_of(p.name)];
    if (!(src.shape == p.shape)) throw DataError("shape mismatch for tensor " + p.name);
    p.value = src.value;
  }
}

}  // namespace stylemt::nn
