#pragma once

// The aligner network: text and speech encoders, positional encodings,
// bidirectional attention, reconstruction decoders and the boundary detector.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "neufa/biattention.hpp"
#include "neufa/boundary.hpp"
#include "neufa/params.hpp"
#include "neufa/posenc.hpp"

namespace neufa {

// Weights of loss_t, loss_s, loss_l^t, loss_l^s, loss_a, loss_b.
struct LossWeights {
  double alpha = 0.1;
  double beta = 1.0;
  double gamma = 10.0;
  double delta = 10.0;
  double epsilon = 1000.0;
  double zeta = 0.0;

  // Alignment pretraining with the diagonal attention loss.
  static LossWeights stage1() { return {0.1, 1.0, 10.0, 10.0, 1000.0, 0.0}; }
  // Boundary fine-tuning.
  static LossWeights stage2() { return {0.1, 1.0, 10.0, 10.0, 0.0, 100.0}; }

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct NeuFAConfig {
  std::size_t vocab_size = 20;
  std::size_t d_mel = 8;

  std::size_t text_embedding = 64;
  std::size_t text_conv_channels = 64;
  std::size_t text_conv_kernel = 5;
  std::size_t text_conv_layers = 3;
  std::size_t text_encoder_dim = 64;  // bidirectional output width

  std::size_t speech_conv_channels = 64;
  std::size_t speech_conv_kernel = 17;
  std::size_t speech_conv_layers = 3;
  std::size_t speech_gru_layers = 2;
  std::size_t speech_encoder_dim = 64;

  std::size_t attention_dim = 32;
  AttentionForm attention_form = AttentionForm::multiplicative;

  std::size_t text_decoder_dim = 64;
  std::size_t speech_decoder_dim = 64;
  std::size_t decoder_layers = 2;

  DetectorConfig detector;

  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  double length_proj_bias = 1.0;

  LossWeights loss_weights;
  bool disable_asr = false;
  bool disable_tts = false;
  PeFlags pe;

  std::uint64_t seed = 1;

  void validate() const;
  // Tiny widths for gradient checks and fast tests.
  static NeuFAConfig micro(std::size_t vocab = 5, std::size_t d_mel = 4, std::size_t hidden = 8);
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);
void to_json(nlohmann::json& j, const NeuFAConfig& c);
void from_json(const nlohmann::json& j, NeuFAConfig& c);

struct LossTerms {
  Tensor loss_t, loss_s, loss_l_t, loss_l_s, loss_a, loss_b;  // undefined = absent
  Tensor total;

  // (name, value) for every term, absent ones as 0.
  std::vector<std::pair<std::string, double>> named() const;
};

// Weighted sum of the six terms; absent terms contribute nothing.
Tensor total_loss(const LossTerms& terms, const LossWeights& w);

// Batch statistics observed by each batch-norm layer during a training pass.
using BnObservations = std::map<std::string, BatchStats>;

struct ForwardOptions {
  bool training = true;
  // Terms with zero weight are skipped entirely (their branches are not run).
  LossWeights weights;
  bool skip_zero_weight_terms = true;
  bool want_boundaries = false;  // run the detector even when loss_b is not needed
  const BoundarySet* targets = nullptr;
};

struct NeuFAOutput {
  Tensor text_probs;    // T' [n_text x vocab]; undefined when the ASR branch is off
  Tensor speech_recon;  // S' [n_frames x d_mel]; undefined when the TTS branch is off
  Tensor w_tts;         // [n_text x n_frames]
  Tensor w_asr;         // [n_frames x n_text]
  std::optional<BoundarySignal> boundaries;
  PositionalResult positions;
  LossTerms losses;
  BnObservations bn_stats;
};

struct DecodeResult {
  Tensor output;
  Tensor loss;  // undefined without targets
};

class NeuFAModel {
 public:
  explicit NeuFAModel(NeuFAConfig config);
  NeuFAModel(const NeuFAModel&) = delete;
  NeuFAModel& operator=(const NeuFAModel&) = delete;
  NeuFAModel(NeuFAModel&&) = default;
  NeuFAModel& operator=(NeuFAModel&&) = default;

  Tensor encode_text(std::span<const int> tokens, bool training, BnObservations* stats = nullptr) const;
  Tensor encode_speech(const Tensor& frames, bool training, BnObservations* stats = nullptr) const;
  // The conv stack alone, [n_frames x channels].
  Tensor speech_conv_stack(const Tensor& frames, bool training, BnObservations* stats = nullptr) const;
  DecodeResult decode_text(const Tensor& o2, std::span<const int> targets = {}) const;
  DecodeResult decode_speech(const Tensor& o1, const Tensor& targets = {}) const;

  NeuFAOutput forward(std::span<const int> tokens, const Tensor& frames, const ForwardOptions& options) const;

  // Exponential moving average of batch-norm statistics.
  void update_running_stats(const BnObservations& stats);

  const NeuFAConfig& config() const { return cfg_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }
  BufferMap& buffers() { return buffers_; }
  const BufferMap& buffers() const { return buffers_; }
  const BiAttention& attention() const { return attention_; }
  const BoundaryDetector& detector() const { return detector_; }

 private:
  struct ConvBlock {
    std::string name;
    Tensor filter, bias, gamma, beta;
  };
  struct GruStack {
    std::vector<BiGru> layers;
  };

  ConvBlock make_conv(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
                      std::mt19937_64& rng);
  // x [C_in x n] -> relu(bn(conv(x))) [C_out x n]
  Tensor run_conv(const ConvBlock& b, const Tensor& x, bool training, BnObservations* stats) const;

  NeuFAConfig cfg_;
  ParameterStore store_;
  BufferMap buffers_;

  Tensor embedding_;
  std::vector<ConvBlock> text_convs_, speech_convs_;
  BiGru text_gru_;
  GruStack speech_grus_;
  Linear proj_text_len_, proj_speech_len_;
  BiAttention attention_;
  GruStack text_decoder_, speech_decoder_;
  Linear text_out_, speech_out_;
  BoundaryDetector detector_;
};

// ---- checkpoints ----------------------------------------------------------
//
// Layout (all integers little-endian):
//   "NFA1" | u32 format version | u64 n | n bytes of JSON metadata
//   | u64 blob count | per blob: u32 name length, name, u8 kind (0 parameter,
//   1 buffer, 2 extra), u32 rank, u64 extents..., f64 values...

struct CheckpointExtras {
  nlohmann::json state = nlohmann::json::object();  // training progress
  BufferMap blobs;                                   // e.g. optimizer moments
};

void save_checkpoint(const std::string& path, const NeuFAModel& model, const CheckpointExtras& extras = {});
NeuFAModel load_checkpoint(const std::string& path, CheckpointExtras* extras = nullptr);

}  // namespace neufa
