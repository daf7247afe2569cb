#include "neufa/boundary.hpp"

#include <cmath>

#include "neufa/layers.hpp"

namespace neufa {

FeatureMatrix build_feature_matrix(const Tensor& w_tts, const Tensor& w_asr) {
  if (w_tts.ndim() != 2 || w_asr.ndim() != 2 || w_tts.dim(0) != w_asr.dim(1) || w_tts.dim(1) != w_asr.dim(0))
    throw DimensionError("build_feature_matrix: W_TTS " + shape_str(w_tts.shape()) + " and W_ASR " +
                         shape_str(w_asr.shape()) + " do not conform");
  Tensor asr_t = transpose(w_asr);
  return {stack({w_tts, scan(w_tts, 1), scan(w_tts, 1, true), asr_t, scan(asr_t, 1), scan(asr_t, 1, true)})};
}

BoundaryDetector::BoundaryDetector(ParameterStore& store, const std::string& name, const DetectorConfig& config,
                                   std::mt19937_64& rng) {
  if (config.layers == 0 || config.channels == 0 || config.kernel % 2 == 0)
    throw ConfigError("boundary detector needs >= 1 layer, >= 1 channel and an odd kernel");
  std::size_t in = 6;
  const double k2 = static_cast<double>(config.kernel * config.kernel);
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = name + ".conv" + std::to_string(l);
    filters_.push_back(store.add(p + ".weight", {config.channels, in, config.kernel, config.kernel},
                                 {InitKind::xavier_uniform, static_cast<double>(in) * k2,
                                  static_cast<double>(config.channels) * k2},
                                 rng));
    biases_.push_back(store.add(p + ".bias", {config.channels}, {InitKind::zeros}, rng));
    in = config.channels;
  }
  proj_filter_ = store.add(name + ".proj.weight", {2, in, 1, 1},
                           {InitKind::xavier_uniform, static_cast<double>(in), 2.0}, rng);
  proj_bias_ = store.add(name + ".proj.bias", {2}, {InitKind::constant, 0, 0, config.gate_bias}, rng);
}

BoundarySignal BoundaryDetector::operator()(const FeatureMatrix& features) const {
  Tensor x = features.F;
  for (std::size_t l = 0; l < filters_.size(); ++l) x = relu(conv2d(x, filters_[l], biases_[l], true));
  Tensor gates = sigmoid(conv2d(x, proj_filter_, proj_bias_, true));  // [2 x n_text x n_frames]
  Tensor signal = tanh(scan(gates, 2));
  return {permute(signal, {1, 2, 0})};
}

BoundarySignal boundaries_to_signals(const BoundarySet& gt, std::size_t n_frames, double frame_shift_ms) {
  if (n_frames == 0 || gt.units.empty()) throw InputError("boundaries_to_signals: empty utterance");
  if (!(frame_shift_ms > 0.0)) throw InputError("boundaries_to_signals: frame shift must be positive");
  const double end_ms = static_cast<double>(n_frames) * frame_shift_ms;
  std::vector<double> v(gt.units.size() * n_frames * 2);
  for (std::size_t u = 0; u < gt.units.size(); ++u) {
    const double sides[2] = {gt.units[u].left_ms, gt.units[u].right_ms};
    for (std::size_t s = 0; s < 2; ++s) {
      if (sides[s] < 0.0 || sides[s] > end_ms + 1e-9)
        throw InputError("boundary " + std::to_string(sides[s]) + " ms of unit " + std::to_string(u) +
                         " outside [0, " + std::to_string(end_ms) + "] ms");
      for (std::size_t f = 0; f < n_frames; ++f) {
        const bool before = static_cast<double>(f + 1) * frame_shift_ms <= sides[s];
        v[(u * n_frames + f) * 2 + s] = before ? 0.0 : 1.0;
      }
    }
  }
  return {Tensor::from({gt.units.size(), n_frames, 2}, std::move(v))};
}

BoundarySet signals_to_boundaries(const BoundarySignal& signals, double frame_shift_ms) {
  const std::size_t units = signals.units(), frames = signals.frames();
  BoundarySet out;
  out.frame_shift_ms = frame_shift_ms;
  out.units.resize(units);
  for (std::size_t u = 0; u < units; ++u) {
    double edge[2];
    for (std::size_t s = 0; s < 2; ++s) {
      std::size_t f = 0;
      while (f < frames && !(signals.values.at(u, f, s) > 0.5)) ++f;
      edge[s] = static_cast<double>(f) * frame_shift_ms;  // f == frames is the fallback
    }
    out.units[u] = {edge[0], std::max(edge[0], edge[1])};
  }
  return out;
}

Tensor boundary_loss(const BoundarySignal& predicted, const BoundarySignal& target, const Tensor& mask) {
  if (predicted.values.shape() != target.values.shape())
    throw DimensionError("boundary_loss: predicted " + shape_str(predicted.values.shape()) + " vs target " +
                         shape_str(target.values.shape()));
  return mae_loss(predicted.values, target.values, mask);
}

}  // namespace neufa
