#pragma once

// Parameter containers, initialization, the Adadelta optimizer, a GRU cell
// built on the autodiff tape, and the versioned binary checkpoint format
// shared by the seq2seq and classifier models.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "stylemt/autodiff.hpp"

namespace stylemt::nn {

struct Parameter {
  std::string name;
  ad::Shape shape;
  std::vector<double> value;
  bool bias = false;
};

class ParamSet {
 public:
  /// Returns the index of the new parameter (zero-filled).
  std::size_t add(std::string name, ad::Shape shape, bool bias = false);
  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  /// Throws std::out_of_range for unknown names.
  std::size_t index_of(const std::string& name) const;
  std::size_t value_count() const;
  bool all_finite() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
};

/// One accumulator per parameter, shaped like the parameter values.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ParamSet& params);
  std::span<double> operator[](std::size_t i) { return grads_[i]; }
  std::span<const double> operator[](std::size_t i) const { return grads_[i]; }
  std::size_t size() const { return grads_.size(); }
  void zero();
  double global_norm() const;
  void scale(double c);
  bool all_zero() const;

 private:
  std::vector<std::vector<double>> grads_;
};

/// Parameters bound as leaves of one tape.
class Binding {
 public:
  /// `grads` may be null for inference (no gradient sinks).
  Binding(ad::Tape& tape, const ParamSet& params, Gradients* grads);
  const ad::Var& operator[](std::size_t i) const { return vars_[i]; }
  ad::Tape& tape() const { return *tape_; }

 private:
  ad::Tape* tape_;
  std::vector<ad::Var> vars_;
};

/// Zero-mean normal with standard deviation sqrt(6 / (rows + cols)); biases zero.
void init_normal_fan(ParamSet& params, std::uint64_t seed);

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_global_norm(Gradients& grads, double max_norm);

struct AdadeltaConfig {
  double rho = 0.95;
  double eps = 1e-6;
  double lr = 1.0;
  double clip_norm = 2.0;
};

class Adadelta {
 public:
  Adadelta() = default;
  Adadelta(const ParamSet& params, AdadeltaConfig config);
  /// Clips `grads` in place, then applies one update. Returns the pre-clip norm.
  double step(ParamSet& params, Gradients& grads);
  const AdadeltaConfig& config() const { return config_; }
  std::size_t steps() const { return steps_; }

 private:
  AdadeltaConfig config_;
  std::vector<std::vector<double>> avg_sq_grad_;
  std::vector<std::vector<double>> avg_sq_update_;
  std::size_t steps_ = 0;
};

/// Indices of the tensors of one GRU layer inside a ParamSet.
struct GruLayer {
  std::size_t w_input = 0;   // in x 3H  (reset, update, candidate)
  std::size_t u_gates = 0;   // H x 2H   (reset, update)
  std::size_t u_cand = 0;    // H x H
  std::size_t bias = 0;      // 1 x 3H
  std::size_t hidden = 0;
};

GruLayer add_gru(ParamSet& params, const std::string& prefix, std::size_t input, std::size_t hidden);

/// h' = (1 - z) * h + z * tanh(x W_c + (r * h) U_c + b_c)
ad::Var gru_step(const Binding& bound, const GruLayer& layer, const ad::Var& x, const ad::Var& h);

// Checkpoint container: magic, version, model kind, JSON config text, then
// named row-major double tensors. Round trips are bit-exact.
struct Checkpoint {
  std::string kind;
  std::string config_json;
  ParamSet params;
};

void save_checkpoint(const std::filesystem::path& path, const std::string& kind,
                     const std::string& config_json, const ParamSet& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies tensors by name into `params`; shapes must match exactly.
void assign_params(ParamSet& params, const ParamSet& from);

}  // namespace stylemt::nn
