#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "neufa/layers.hpp"
#include "neufa/tensor.hpp"

namespace neufa {

enum class InitKind {
  zeros,
  ones,
  constant,
  xavier_uniform,  // +-sqrt(6 / (fan_in + fan_out))
  scaled_uniform,  // +-1/sqrt(fan_in), used for recurrent matrices
};

struct InitSpec {
  InitKind kind = InitKind::zeros;
  double fan_in = 1.0;
  double fan_out = 1.0;
  double value = 0.0;
};

struct Parameter {
  std::string name;
  Tensor tensor;
  InitSpec init;
};

// Owns every learnable tensor of a model, in registration order. Registration
// order fixes the optimizer's update order and the checkpoint layout.
class ParameterStore {
 public:
  Tensor add(const std::string& name, Shape shape, InitSpec init, std::mt19937_64& rng);

  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }
  std::size_t total_size() const;
  void zero_grad();

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

// Non-trainable state (batch-norm running statistics).
using BufferMap = std::map<std::string, std::vector<double>>;

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  static Linear create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                       std::mt19937_64& rng, double bias_init = 0.0);
  // x [m x in] -> [m x out]
  Tensor operator()(const Tensor& x) const { return add_bias(matmul(x, weight), bias); }
};

GruWeights create_gru_weights(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden,
                              std::mt19937_64& rng);

struct BiGru {
  GruWeights forward;
  GruWeights backward;

  static BiGru create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden,
                      std::mt19937_64& rng);
  Tensor operator()(const Tensor& seq) const { return bigru(seq, forward, backward); }
};

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(ParameterStore& store, AdamOptions options);

  // One update from the gradients currently held by the parameters.
  void step();
  std::uint64_t steps() const { return t_; }

  // Moment buffers by parameter name, for checkpointing.
  BufferMap state() const;
  void load_state(const BufferMap& buffers, std::uint64_t steps);
  const AdamOptions& options() const { return opt_; }

 private:
  ParameterStore* store_;
  AdamOptions opt_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace neufa
