#pragma once

// Synthetic parallel corpora with exact ground truth, their line-delimited
// JSON codec, padded batches with masks, and TextGrid export.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "neufa/boundary.hpp"
#include "neufa/tensor.hpp"

namespace neufa {

struct Utterance {
  std::string id;
  std::vector<int> tokens;
  Tensor frames;  // [n_frames x d_mel]
  BoundarySet gt;
  double frame_shift_ms = 10.0;

  std::size_t n_frames() const { return frames.dim(0); }
  std::size_t d_mel() const { return frames.dim(1); }
  // Throws InputError when the utterance breaks its invariants.
  void validate() const;
};

using Corpus = std::vector<Utterance>;

// Bitwise equality of ids, tokens, frame values and boundaries.
bool same_utterance(const Utterance& a, const Utterance& b);

struct SyntheticSpec {
  std::size_t vocab_size = 20;
  std::size_t d_mel = 8;
  std::size_t min_duration = 2;  // frames per token
  std::size_t max_duration = 8;
  double noise = 0.1;
  std::size_t min_tokens = 3;
  std::size_t max_tokens = 12;
  std::size_t size = 500;
  std::uint64_t seed = 1;
  double frame_shift_ms = 10.0;
  // Optional runs of silent frames (zero prototype plus noise) between tokens.
  bool silence = false;
  std::size_t max_silence = 3;

  void validate() const;
};

void to_json(nlohmann::json& j, const SyntheticSpec& s);
void from_json(const nlohmann::json& j, SyntheticSpec& s);

// Every token id owns a fixed random prototype; each token emits `duration`
// noisy copies of it. Ground-truth spans are the exact emission intervals.
Corpus generate_synthetic_corpus(const SyntheticSpec& spec);

// One JSON object per line, tagged "v": 1. Doubles are written in shortest
// round-trip form, so the codec is lossless.
void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

// Deterministic shuffle of [0, n) cut into batches of `batch_size` (the last
// one may be short).
std::vector<std::vector<std::size_t>> batch_order(std::size_t n, std::size_t batch_size, std::uint64_t seed);

struct Batch {
  std::vector<std::size_t> items;  // corpus indices
  Tensor tokens;                   // [B x Lt] class ids, padding 0
  Tensor text_mask;                // [B x Lt]
  Tensor frames;                   // [B x Lf x d_mel]
  Tensor frame_mask;               // [B x Lf]
  std::vector<std::size_t> text_lengths, frame_lengths;
  Tensor signals;                  // [B x Lt x Lf x 2] ground-truth boundary signals
  Tensor signal_mask;              // [B x Lt x Lf]
};

std::vector<Batch> make_batches(const Corpus& corpus, std::size_t batch_size, std::uint64_t seed);

// Praat long-format TextGrid with one interval tier. Gaps between units
// become empty intervals; an overlap with the previous unit is resolved by
// starting the unit where the previous one ends.
std::string textgrid_string(const Utterance& utt, const BoundarySet& boundaries);
void export_textgrid(const Utterance& utt, const BoundarySet& boundaries, const std::string& path);

// Predicted boundary sets keyed by utterance id.
using Predictions = std::map<std::string, BoundarySet>;
void save_predictions(const Predictions& preds, const std::string& path);
Predictions load_predictions(const std::string& path);

}  // namespace neufa
