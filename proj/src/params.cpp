#include "neufa/params.hpp"

#include <cmath>

namespace neufa {

Tensor ParameterStore::add(const std::string& name, Shape shape, InitSpec init, std::mt19937_64& rng) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  std::vector<double> values(shape_numel(shape), 0.0);
  auto uniform = [&](double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : values) v = dist(rng);
  };
  switch (init.kind) {
    case InitKind::zeros: break;
    case InitKind::ones: std::fill(values.begin(), values.end(), 1.0); break;
    case InitKind::constant: std::fill(values.begin(), values.end(), init.value); break;
    case InitKind::xavier_uniform: uniform(std::sqrt(6.0 / (init.fan_in + init.fan_out))); break;
    case InitKind::scaled_uniform: uniform(1.0 / std::sqrt(init.fan_in)); break;
  }
  index_[name] = params_.size();
  params_.push_back({name, Tensor::from(std::move(shape), std::move(values), true), init});
  return params_.back().tensor;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return params_[it->second].tensor;
}

std::size_t ParameterStore::total_size() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                      std::mt19937_64& rng, double bias_init) {
  Linear l;
  l.weight = store.add(name + ".weight", {in, out},
                       {InitKind::xavier_uniform, static_cast<double>(in), static_cast<double>(out)}, rng);
  l.bias = store.add(name + ".bias", {out}, {InitKind::constant, 0, 0, bias_init}, rng);
  return l;
}

GruWeights create_gru_weights(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden,
                              std::mt19937_64& rng) {
  const double h = static_cast<double>(hidden);
  GruWeights w;
  w.wx = store.add(name + ".wx", {in, 3 * hidden}, {InitKind::xavier_uniform, static_cast<double>(in), h}, rng);
  w.wh = store.add(name + ".wh", {hidden, 3 * hidden}, {InitKind::scaled_uniform, h, h}, rng);
  w.bx = store.add(name + ".bx", {3 * hidden}, {InitKind::zeros}, rng);
  w.bh = store.add(name + ".bh", {3 * hidden}, {InitKind::zeros}, rng);
  return w;
}

BiGru BiGru::create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden,
                    std::mt19937_64& rng) {
  return {create_gru_weights(store, name + ".fwd", in, hidden, rng),
          create_gru_weights(store, name + ".bwd", in, hidden, rng)};
}

Adam::Adam(ParameterStore& store, AdamOptions options) : store_(&store), opt_(options) {
  if (!(opt_.lr > 0.0)) throw ConfigError("learning rate must be positive");
  for (const auto& p : store.all()) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  auto& params = store_->all();
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& t = params[k].tensor;
    if (!t.has_grad()) continue;
    auto g = t.grad();
    auto x = t.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g[i];
      v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g[i] * g[i];
      x[i] -= opt_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opt_.eps);
    }
  }
}

BufferMap Adam::state() const {
  BufferMap out;
  const auto& params = store_->all();
  for (std::size_t k = 0; k < params.size(); ++k) {
    out["adam.m/" + params[k].name] = m_[k];
    out["adam.v/" + params[k].name] = v_[k];
  }
  return out;
}

void Adam::load_state(const BufferMap& buffers, std::uint64_t steps) {
  const auto& params = store_->all();
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto mi = buffers.find("adam.m/" + params[k].name);
    auto vi = buffers.find("adam.v/" + params[k].name);
    if (mi == buffers.end() || vi == buffers.end()) throw FormatError("optimizer state missing for " + params[k].name);
    if (mi->second.size() != m_[k].size() || vi->second.size() != v_[k].size())
      throw FormatError("optimizer state size mismatch for " + params[k].name);
    m_[k] = mi->second;
    v_[k] = vi->second;
  }
  t_ = steps;
}

}  // namespace neufa
