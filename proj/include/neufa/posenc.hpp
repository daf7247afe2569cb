#pragma once

// Sinusoidal positional encodings at integer or estimated (real-valued)
// positions, and the cross-modal position estimates that feed them.

#include "neufa/params.hpp"
#include "neufa/tensor.hpp"

namespace neufa {

// Monotone non-decreasing, non-negative positions, one per sequence step.
struct PositionSequence {
  Tensor values;  // [n]

  std::size_t length() const { return values.numel(); }
  // 0, 1, ..., n-1
  static PositionSequence indices(std::size_t n);
};

// PE[k, 2i] = sin(pos_k / 10000^(2i/d)), PE[k, 2i+1] = cos(pos_k / 10000^(2i/d)).
// Differentiable with respect to the positions.
Tensor sinusoidal_pe(const PositionSequence& positions, std::size_t d);

// cumsum(relu(proj(encodings))) with proj mapping d -> 1.
PositionSequence estimate_positions(const Tensor& encodings, const Linear& proj);

// MSE(1, last(positions) / true_length)
Tensor relative_length_loss(const PositionSequence& positions, std::size_t true_length);

// Which encodings feed the two copies. Removing a family duplicates the
// surviving copy so output widths never change.
struct PeFlags {
  bool estimated = true;  // estimated positional encodings (EPEs)
  bool text = true;       // original + estimated text-position encodings (TPEs)
  bool speech = true;     // original + estimated speech-position encodings (SPEs)
};

struct EncodedPair {
  Tensor text;    // E'_t [n_text x 2 d_t]
  Tensor speech;  // E'_s [n_frames x 2 d_s]
};

struct PositionalResult {
  EncodedPair encoded;
  Tensor loss_l_t;                    // text length estimated from speech; undefined when unused
  Tensor loss_l_s;                    // speech length estimated from text; undefined when unused
  PositionSequence est_text_positions;    // pos'_t, from speech encodings
  PositionSequence est_speech_positions;  // pos'_s, from text encodings
};

// E'_t = [E_t + PE_t ; E_t + PE'_s],  E'_s = [E_s + PE'_t ; E_s + PE_s]
PositionalResult apply_positional_encodings(const Tensor& e_text, const Tensor& e_speech, const Linear& proj_text,
                                            const Linear& proj_speech, const PeFlags& flags = {});

}  // namespace neufa
