#pragma once

// Boundary signals: per text unit, a left and a right trajectory over frames
// that steps from 0 to 1 at the unit's boundary. The detector predicts them
// from the two attention maps; decoding takes the first frame above 0.5.
//
// Time convention: frame f covers [f * shift, (f + 1) * shift) ms, and a
// boundary at frame index f is reported as f * shift ms.

#include <random>
#include <string>
#include <vector>

#include "neufa/params.hpp"
#include "neufa/tensor.hpp"

namespace neufa {

struct UnitBoundary {
  double left_ms = 0.0;
  double right_ms = 0.0;

  bool operator==(const UnitBoundary&) const = default;
};

struct BoundarySet {
  std::vector<UnitBoundary> units;
  double frame_shift_ms = 10.0;

  std::size_t size() const { return units.size(); }
  bool operator==(const BoundarySet&) const = default;
};

// F [6 x n_text x n_frames]: W_TTS and W_ASR^T, each with forward and reversed
// cumulative sums along frames.
struct FeatureMatrix {
  Tensor F;
};

// values [n_text x n_frames x 2]; channel 0 is the left boundary, 1 the right.
struct BoundarySignal {
  Tensor values;

  std::size_t units() const { return values.dim(0); }
  std::size_t frames() const { return values.dim(1); }
};

FeatureMatrix build_feature_matrix(const Tensor& w_tts, const Tensor& w_asr);

struct DetectorConfig {
  std::size_t channels = 8;
  std::size_t kernel = 17;
  std::size_t layers = 3;
  // Initial bias of the sigmoid gate; negative values keep untrained signals low.
  double gate_bias = 0.0;
};

// convs (same padding, relu after each) -> 1x1 projection to 2 channels ->
// sigmoid -> cumsum over frames -> tanh.
class BoundaryDetector {
 public:
  BoundaryDetector() = default;
  BoundaryDetector(ParameterStore& store, const std::string& name, const DetectorConfig& config,
                   std::mt19937_64& rng);

  BoundarySignal operator()(const FeatureMatrix& features) const;

  const std::vector<Tensor>& filters() const { return filters_; }
  const std::vector<Tensor>& biases() const { return biases_; }
  const Tensor& proj_filter() const { return proj_filter_; }
  const Tensor& proj_bias() const { return proj_bias_; }

 private:
  std::vector<Tensor> filters_, biases_;
  Tensor proj_filter_, proj_bias_;
};

// Binary step signals: frame f is 0 iff (f + 1) * shift <= boundary_ms.
BoundarySignal boundaries_to_signals(const BoundarySet& gt, std::size_t n_frames, double frame_shift_ms);

// First frame whose signal exceeds 0.5. A signal that never crosses maps to
// the end of the last frame (n_frames * shift). Right boundaries are clamped
// up to their left boundary.
BoundarySet signals_to_boundaries(const BoundarySignal& signals, double frame_shift_ms);

Tensor boundary_loss(const BoundarySignal& predicted, const BoundarySignal& target, const Tensor& mask = {});

}  // namespace neufa
