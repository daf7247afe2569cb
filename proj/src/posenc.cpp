#include "neufa/posenc.hpp"

#include <cmath>

namespace neufa {

using detail::NodePtr;

PositionSequence PositionSequence::indices(std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<double>(i);
  return {Tensor::from({n}, std::move(v))};
}

Tensor sinusoidal_pe(const PositionSequence& positions, std::size_t d) {
  if (d == 0 || d % 2 != 0) throw ConfigError("positional encoding width must be even, got " + std::to_string(d));
  const std::size_t n = positions.length();
  std::vector<double> freq(d / 2);
  for (std::size_t i = 0; i < d / 2; ++i)
    freq[i] = 1.0 / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d));
  std::vector<double> pe(n * d);
  for (std::size_t k = 0; k < n; ++k) {
    const double pos = positions.values[k];
    for (std::size_t i = 0; i < d / 2; ++i) {
      pe[k * d + 2 * i] = std::sin(pos * freq[i]);
      pe[k * d + 2 * i + 1] = std::cos(pos * freq[i]);
    }
  }
  NodePtr pn = positions.values.node();
  auto pe_vals = std::make_shared<std::vector<double>>(pe);
  return make_result({n, d}, std::move(pe), {positions.values}, [pn, pe_vals, freq, n, d](const std::vector<double>& g) {
    auto& gp = pn->grad_buffer();
    const auto& v = *pe_vals;
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < d / 2; ++i) {
        // d sin = w cos, d cos = -w sin
        gp[k] += freq[i] * (g[k * d + 2 * i] * v[k * d + 2 * i + 1] - g[k * d + 2 * i + 1] * v[k * d + 2 * i]);
      }
  });
}

PositionSequence estimate_positions(const Tensor& encodings, const Linear& proj) {
  if (encodings.ndim() != 2 || proj.weight.shape() != Shape{encodings.dim(1), 1})
    throw DimensionError("estimate_positions: projection " + shape_str(proj.weight.shape()) +
                         " must map encodings " + shape_str(encodings.shape()) + " to one value per step");
  Tensor lengths = relu(proj(encodings));  // [n x 1]
  return {reshape(scan(lengths, 0), {encodings.dim(0)})};
}

Tensor relative_length_loss(const PositionSequence& positions, std::size_t true_length) {
  if (!positions.values.defined() || positions.length() == 0)
    throw ContractError("relative_length_loss: empty position sequence");
  if (true_length == 0) throw ContractError("relative_length_loss: true length must be >= 1");
  const std::size_t n = positions.length();
  Tensor last = slice(positions.values, 0, n - 1, n);
  return mse_loss(scale(last, 1.0 / static_cast<double>(true_length)), Tensor::scalar(1.0));
}

PositionalResult apply_positional_encodings(const Tensor& e_text, const Tensor& e_speech, const Linear& proj_text,
                                            const Linear& proj_speech, const PeFlags& flags) {
  if (e_text.ndim() != 2 || e_speech.ndim() != 2)
    throw DimensionError("apply_positional_encodings: encodings must be matrices");
  const std::size_t n_text = e_text.dim(0), d_t = e_text.dim(1);
  const std::size_t n_frames = e_speech.dim(0), d_s = e_speech.dim(1);

  PositionalResult res;
  const bool want_est_text = flags.estimated && flags.text;      // PE'_t on the speech side
  const bool want_est_speech = flags.estimated && flags.speech;  // PE'_s on the text side

  std::vector<Tensor> text_copies, speech_copies;
  if (flags.text) text_copies.push_back(add(e_text, sinusoidal_pe(PositionSequence::indices(n_text), d_t)));
  if (want_est_speech) {
    res.est_speech_positions = estimate_positions(e_text, proj_text);
    res.loss_l_s = relative_length_loss(res.est_speech_positions, n_frames);
    text_copies.push_back(add(e_text, sinusoidal_pe(res.est_speech_positions, d_t)));
  }
  if (want_est_text) {
    res.est_text_positions = estimate_positions(e_speech, proj_speech);
    res.loss_l_t = relative_length_loss(res.est_text_positions, n_text);
    speech_copies.push_back(add(e_speech, sinusoidal_pe(res.est_text_positions, d_s)));
  }
  if (flags.speech) speech_copies.push_back(add(e_speech, sinusoidal_pe(PositionSequence::indices(n_frames), d_s)));

  auto assemble = [](std::vector<Tensor> copies, const Tensor& plain) {
    if (copies.empty()) copies.push_back(plain);
    if (copies.size() == 1) copies.push_back(copies.front());
    return concat(copies, 1);
  };
  res.encoded.text = assemble(std::move(text_copies), e_text);
  res.encoded.speech = assemble(std::move(speech_copies), e_speech);
  return res;
}

}  // namespace neufa
