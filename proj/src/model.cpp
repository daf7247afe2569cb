#include "neufa/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "neufa/layers.hpp"

namespace neufa {

using nlohmann::json;

// ---------------------------------------------------------------------------
// configuration

void LossWeights::validate() const {
  for (double w : {alpha, beta, gamma, delta, epsilon, zeta})
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and non-negative");
}

void NeuFAConfig::validate() const {
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) throw ConfigError(std::string(what) + " must be >= 1");
  };
  positive(vocab_size, "vocab_size");
  positive(d_mel, "d_mel");
  positive(text_embedding, "text_embedding");
  positive(text_conv_channels, "text_conv_channels");
  positive(speech_conv_channels, "speech_conv_channels");
  positive(speech_gru_layers, "speech_gru_layers");
  positive(attention_dim, "attention_dim");
  positive(decoder_layers, "decoder_layers");
  for (auto [v, what] : {std::pair{text_encoder_dim, "text_encoder_dim"}, {speech_encoder_dim, "speech_encoder_dim"},
                         {text_decoder_dim, "text_decoder_dim"}, {speech_decoder_dim, "speech_decoder_dim"}})
    if (v == 0 || v % 2 != 0) throw ConfigError(std::string(what) + " must be a positive even width");
  if (text_conv_kernel % 2 == 0 || speech_conv_kernel % 2 == 0) throw ConfigError("conv kernels must be odd");
  if (detector.kernel % 2 == 0 || detector.channels == 0 || detector.layers == 0)
    throw ConfigError("detector needs an odd kernel and at least one layer/channel");
  if (!(bn_eps > 0.0) || !(bn_momentum >= 0.0 && bn_momentum <= 1.0)) throw ConfigError("invalid batch-norm settings");
  loss_weights.validate();
}

NeuFAConfig NeuFAConfig::micro(std::size_t vocab, std::size_t d_mel, std::size_t hidden) {
  NeuFAConfig c;
  c.vocab_size = vocab;
  c.d_mel = d_mel;
  c.text_embedding = hidden;
  c.text_conv_channels = hidden;
  c.text_conv_kernel = 3;
  c.text_encoder_dim = hidden;
  c.speech_conv_channels = hidden;
  c.speech_conv_kernel = 5;
  c.speech_encoder_dim = hidden;
  c.attention_dim = hidden;
  c.text_decoder_dim = hidden;
  c.speech_decoder_dim = hidden;
  c.detector.channels = 2;
  c.detector.kernel = 3;
  return c;
}

void to_json(json& j, const LossWeights& w) {
  j = json{{"alpha", w.alpha}, {"beta", w.beta},       {"gamma", w.gamma},
           {"delta", w.delta}, {"epsilon", w.epsilon}, {"zeta", w.zeta}};
}

void from_json(const json& j, LossWeights& w) {
  LossWeights d;
  w.alpha = j.value("alpha", d.alpha);
  w.beta = j.value("beta", d.beta);
  w.gamma = j.value("gamma", d.gamma);
  w.delta = j.value("delta", d.delta);
  w.epsilon = j.value("epsilon", d.epsilon);
  w.zeta = j.value("zeta", d.zeta);
}

void to_json(json& j, const NeuFAConfig& c) {
  j = json{{"vocab_size", c.vocab_size},
           {"d_mel", c.d_mel},
           {"text_embedding", c.text_embedding},
           {"text_conv_channels", c.text_conv_channels},
           {"text_conv_kernel", c.text_conv_kernel},
           {"text_conv_layers", c.text_conv_layers},
           {"text_encoder_dim", c.text_encoder_dim},
           {"speech_conv_channels", c.speech_conv_channels},
           {"speech_conv_kernel", c.speech_conv_kernel},
           {"speech_conv_layers", c.speech_conv_layers},
           {"speech_gru_layers", c.speech_gru_layers},
           {"speech_encoder_dim", c.speech_encoder_dim},
           {"attention_dim", c.attention_dim},
           {"attention_form", c.attention_form == AttentionForm::multiplicative ? "multiplicative" : "additive"},
           {"text_decoder_dim", c.text_decoder_dim},
           {"speech_decoder_dim", c.speech_decoder_dim},
           {"decoder_layers", c.decoder_layers},
           {"detector",
            {{"channels", c.detector.channels},
             {"kernel", c.detector.kernel},
             {"layers", c.detector.layers},
             {"gate_bias", c.detector.gate_bias}}},
           {"bn_eps", c.bn_eps},
           {"bn_momentum", c.bn_momentum},
           {"length_proj_bias", c.length_proj_bias},
           {"loss_weights", c.loss_weights},
           {"disable_asr", c.disable_asr},
           {"disable_tts", c.disable_tts},
           {"pe", {{"estimated", c.pe.estimated}, {"text", c.pe.text}, {"speech", c.pe.speech}}},
           {"seed", c.seed}};
}

void from_json(const json& j, NeuFAConfig& c) {
  const NeuFAConfig d;
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.d_mel = j.value("d_mel", d.d_mel);
  c.text_embedding = j.value("text_embedding", d.text_embedding);
  c.text_conv_channels = j.value("text_conv_channels", d.text_conv_channels);
  c.text_conv_kernel = j.value("text_conv_kernel", d.text_conv_kernel);
  c.text_conv_layers = j.value("text_conv_layers", d.text_conv_layers);
  c.text_encoder_dim = j.value("text_encoder_dim", d.text_encoder_dim);
  c.speech_conv_channels = j.value("speech_conv_channels", d.speech_conv_channels);
  c.speech_conv_kernel = j.value("speech_conv_kernel", d.speech_conv_kernel);
  c.speech_conv_layers = j.value("speech_conv_layers", d.speech_conv_layers);
  c.speech_gru_layers = j.value("speech_gru_layers", d.speech_gru_layers);
  c.speech_encoder_dim = j.value("speech_encoder_dim", d.speech_encoder_dim);
  c.attention_dim = j.value("attention_dim", d.attention_dim);
  const std::string form = j.value("attention_form", std::string("multiplicative"));
  if (form == "multiplicative")
    c.attention_form = AttentionForm::multiplicative;
  else if (form == "additive")
    c.attention_form = AttentionForm::additive;
  else
    throw ConfigError("unknown attention_form '" + form + "'");
  c.text_decoder_dim = j.value("text_decoder_dim", d.text_decoder_dim);
  c.speech_decoder_dim = j.value("speech_decoder_dim", d.speech_decoder_dim);
  c.decoder_layers = j.value("decoder_layers", d.decoder_layers);
  if (j.contains("detector")) {
    const auto& dj = j.at("detector");
    c.detector.channels = dj.value("channels", d.detector.channels);
    c.detector.kernel = dj.value("kernel", d.detector.kernel);
    c.detector.layers = dj.value("layers", d.detector.layers);
    c.detector.gate_bias = dj.value("gate_bias", d.detector.gate_bias);
  }
  c.bn_eps = j.value("bn_eps", d.bn_eps);
  c.bn_momentum = j.value("bn_momentum", d.bn_momentum);
  c.length_proj_bias = j.value("length_proj_bias", d.length_proj_bias);
  c.loss_weights = j.value("loss_weights", d.loss_weights);
  c.disable_asr = j.value("disable_asr", d.disable_asr);
  c.disable_tts = j.value("disable_tts", d.disable_tts);
  if (j.contains("pe")) {
    const auto& pj = j.at("pe");
    c.pe.estimated = pj.value("estimated", true);
    c.pe.text = pj.value("text", true);
    c.pe.speech = pj.value("speech", true);
  }
  c.seed = j.value("seed", d.seed);
}

// ---------------------------------------------------------------------------
// losses

std::vector<std::pair<std::string, double>> LossTerms::named() const {
  auto v = [](const Tensor& t) { return t.defined() ? t.item() : 0.0; };
  return {{"loss_t", v(loss_t)},   {"loss_s", v(loss_s)}, {"loss_l_t", v(loss_l_t)}, {"loss_l_s", v(loss_l_s)},
          {"loss_a", v(loss_a)},   {"loss_b", v(loss_b)}, {"total", v(total)}};
}

Tensor total_loss(const LossTerms& terms, const LossWeights& w) {
  w.validate();
  Tensor total = Tensor::scalar(0.0);
  const std::pair<const Tensor*, double> parts[] = {{&terms.loss_t, w.alpha},   {&terms.loss_s, w.beta},
                                                    {&terms.loss_l_t, w.gamma}, {&terms.loss_l_s, w.delta},
                                                    {&terms.loss_a, w.epsilon}, {&terms.loss_b, w.zeta}};
  for (const auto& [t, weight] : parts)
    if (t->defined() && weight != 0.0) total = add(total, scale(*t, weight));
  return total;
}

// ---------------------------------------------------------------------------
// model

NeuFAModel::ConvBlock NeuFAModel::make_conv(const std::string& name, std::size_t in, std::size_t out,
                                            std::size_t kernel, std::mt19937_64& rng) {
  const double k = static_cast<double>(kernel);
  ConvBlock b;
  b.name = name;
  b.filter = store_.add(name + ".weight", {out, in, 1, kernel},
                        {InitKind::xavier_uniform, static_cast<double>(in) * k, static_cast<double>(out) * k}, rng);
  b.bias = store_.add(name + ".bias", {out}, {InitKind::zeros}, rng);
  b.gamma = store_.add(name + ".bn.gamma", {out}, {InitKind::ones}, rng);
  b.beta = store_.add(name + ".bn.beta", {out}, {InitKind::zeros}, rng);
  buffers_[name + ".bn.running_mean"] = std::vector<double>(out, 0.0);
  buffers_[name + ".bn.running_var"] = std::vector<double>(out, 1.0);
  return b;
}

NeuFAModel::NeuFAModel(NeuFAConfig config) : cfg_(std::move(config)) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);

  embedding_ = store_.add("text.embedding", {cfg_.vocab_size, cfg_.text_embedding},
                          {InitKind::xavier_uniform, static_cast<double>(cfg_.vocab_size),
                           static_cast<double>(cfg_.text_embedding)},
                          rng);
  std::size_t in = cfg_.text_embedding;
  for (std::size_t l = 0; l < cfg_.text_conv_layers; ++l) {
    text_convs_.push_back(
        make_conv("text.conv" + std::to_string(l), in, cfg_.text_conv_channels, cfg_.text_conv_kernel, rng));
    in = cfg_.text_conv_channels;
  }
  text_gru_ = BiGru::create(store_, "text.gru", in, cfg_.text_encoder_dim / 2, rng);

  in = cfg_.d_mel;
  for (std::size_t l = 0; l < cfg_.speech_conv_layers; ++l) {
    speech_convs_.push_back(
        make_conv("speech.conv" + std::to_string(l), in, cfg_.speech_conv_channels, cfg_.speech_conv_kernel, rng));
    in = cfg_.speech_conv_channels;
  }
  for (std::size_t l = 0; l < cfg_.speech_gru_layers; ++l) {
    speech_grus_.layers.push_back(
        BiGru::create(store_, "speech.gru" + std::to_string(l), in, cfg_.speech_encoder_dim / 2, rng));
    in = cfg_.speech_encoder_dim;
  }

  proj_text_len_ = Linear::create(store_, "pe.text_to_speech_length", cfg_.text_encoder_dim, 1, rng,
                                  cfg_.length_proj_bias);
  proj_speech_len_ = Linear::create(store_, "pe.speech_to_text_length", cfg_.speech_encoder_dim, 1, rng,
                                    cfg_.length_proj_bias);

  BiAttentionConfig ac;
  ac.d_a = cfg_.attention_dim;
  ac.form = cfg_.attention_form;
  ac.d_k1 = ac.d_v1 = 2 * cfg_.text_encoder_dim;
  ac.d_k2 = ac.d_v2 = 2 * cfg_.speech_encoder_dim;
  attention_ = BiAttention(store_, "attention", ac, rng);

  in = ac.d_v2;  // the text decoder reads speech summaries
  for (std::size_t l = 0; l < cfg_.decoder_layers; ++l) {
    text_decoder_.layers.push_back(
        BiGru::create(store_, "text_decoder.gru" + std::to_string(l), in, cfg_.text_decoder_dim / 2, rng));
    in = cfg_.text_decoder_dim;
  }
  text_out_ = Linear::create(store_, "text_decoder.out", in, cfg_.vocab_size, rng);

  in = ac.d_v1;
  for (std::size_t l = 0; l < cfg_.decoder_layers; ++l) {
    speech_decoder_.layers.push_back(
        BiGru::create(store_, "speech_decoder.gru" + std::to_string(l), in, cfg_.speech_decoder_dim / 2, rng));
    in = cfg_.speech_decoder_dim;
  }
  speech_out_ = Linear::create(store_, "speech_decoder.out", in, cfg_.d_mel, rng);

  detector_ = BoundaryDetector(store_, "detector", cfg_.detector, rng);
}

Tensor NeuFAModel::run_conv(const ConvBlock& b, const Tensor& x, bool training, BnObservations* stats) const {
  const std::size_t c_in = x.dim(0), n = x.dim(1);
  Tensor y = conv2d(reshape(x, {c_in, 1, n}), b.filter, b.bias, true);
  y = reshape(y, {b.filter.dim(0), n});
  if (training) {
    BatchStats s;
    y = batch_norm_train(y, b.gamma, b.beta, cfg_.bn_eps, &s);
    if (stats) (*stats)[b.name] = std::move(s);
  } else {
    y = batch_norm_infer(y, b.gamma, b.beta, buffers_.at(b.name + ".bn.running_mean"),
                         buffers_.at(b.name + ".bn.running_var"), cfg_.bn_eps);
  }
  return relu(y);
}

Tensor NeuFAModel::encode_text(std::span<const int> tokens, bool training, BnObservations* stats) const {
  if (tokens.empty()) throw InputError("encode_text: empty token sequence");
  Tensor x = transpose(embedding(embedding_, tokens));  // [E x n]
  for (const auto& b : text_convs_) x = run_conv(b, x, training, stats);
  return text_gru_(transpose(x));
}

Tensor NeuFAModel::speech_conv_stack(const Tensor& frames, bool training, BnObservations* stats) const {
  if (frames.ndim() != 2 || frames.dim(1) != cfg_.d_mel)
    throw InputError("speech frames must be [n_frames x " + std::to_string(cfg_.d_mel) + "], got " +
                     shape_str(frames.shape()));
  Tensor x = transpose(frames);
  for (const auto& b : speech_convs_) x = run_conv(b, x, training, stats);
  return transpose(x);
}

Tensor NeuFAModel::encode_speech(const Tensor& frames, bool training, BnObservations* stats) const {
  Tensor x = speech_conv_stack(frames, training, stats);
  for (const auto& layer : speech_grus_.layers) x = layer(x);
  return x;
}

DecodeResult NeuFAModel::decode_text(const Tensor& o2, std::span<const int> targets) const {
  Tensor x = o2;
  for (const auto& layer : text_decoder_.layers) x = layer(x);
  DecodeResult r;
  r.output = softmax(text_out_(x), 1);
  if (!targets.empty()) {
    if (targets.size() != o2.dim(0)) throw DimensionError("decode_text: target length differs from summaries");
    std::vector<double> cls(targets.begin(), targets.end());
    r.loss = cross_entropy_loss(r.output, Tensor::from({targets.size()}, std::move(cls)));
  }
  return r;
}

DecodeResult NeuFAModel::decode_speech(const Tensor& o1, const Tensor& targets) const {
  Tensor x = o1;
  for (const auto& layer : speech_decoder_.layers) x = layer(x);
  DecodeResult r;
  r.output = speech_out_(x);
  if (targets.defined()) r.loss = mse_loss(r.output, targets);
  return r;
}

NeuFAOutput NeuFAModel::forward(std::span<const int> tokens, const Tensor& frames,
                                const ForwardOptions& options) const {
  if (tokens.empty() || !frames.defined() || frames.numel() == 0) throw InputError("forward: empty input");
  options.weights.validate();
  LossWeights w = options.weights;
  if (cfg_.disable_asr) w.alpha = 0.0;
  if (cfg_.disable_tts) w.beta = 0.0;
  const bool skip = options.skip_zero_weight_terms;

  NeuFAOutput out;
  BnObservations* stats = options.training ? &out.bn_stats : nullptr;
  Tensor e_text = encode_text(tokens, options.training, stats);
  Tensor e_speech = encode_speech(frames, options.training, stats);
  out.positions = apply_positional_encodings(e_text, e_speech, proj_text_len_, proj_speech_len_, cfg_.pe);
  const auto& enc = out.positions.encoded;
  BiAttentionOutput att = attention_(enc.text, enc.speech, enc.text, enc.speech);
  out.w_tts = att.W12;
  out.w_asr = att.W21;

  LossTerms& L = out.losses;
  if (!cfg_.disable_asr && (!skip || w.alpha > 0.0)) {
    auto d = decode_text(att.O2, tokens);
    out.text_probs = d.output;
    L.loss_t = d.loss;
  }
  if (!cfg_.disable_tts && (!skip || w.beta > 0.0)) {
    auto d = decode_speech(att.O1, frames);
    out.speech_recon = d.output;
    L.loss_s = d.loss;
  }
  if (!skip || w.gamma > 0.0) L.loss_l_t = out.positions.loss_l_t;
  if (!skip || w.delta > 0.0) L.loss_l_s = out.positions.loss_l_s;
  if (!skip || w.epsilon > 0.0)
    L.loss_a = diagonal_attention_loss(out.w_tts, out.w_asr, diagonal_constraint_matrix(tokens.size(), frames.dim(0)));
  const bool need_b = options.targets && (!skip || w.zeta > 0.0);
  if (options.want_boundaries || need_b) {
    out.boundaries = detector_(build_feature_matrix(out.w_tts, out.w_asr));
    if (options.targets) {
      if (options.targets->size() != tokens.size())
        throw InputError("forward: boundary targets cover " + std::to_string(options.targets->size()) +
                         " units, utterance has " + std::to_string(tokens.size()));
      L.loss_b = boundary_loss(*out.boundaries, boundaries_to_signals(*options.targets, frames.dim(0),
                                                                       options.targets->frame_shift_ms));
    }
  }
  L.total = total_loss(L, w);
  return out;
}

void NeuFAModel::update_running_stats(const BnObservations& stats) {
  const double m = cfg_.bn_momentum;
  for (const auto& [name, s] : stats) {
    auto& rm = buffers_.at(name + ".bn.running_mean");
    auto& rv = buffers_.at(name + ".bn.running_var");
    for (std::size_t c = 0; c < rm.size(); ++c) {
      rm[c] = (1.0 - m) * rm[c] + m * s.mean[c];
      rv[c] = (1.0 - m) * rv[c] + m * s.var[c];
    }
  }
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

constexpr char kMagic[4] = {'N', 'F', 'A', '1'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof bits);
  put_u64(out, bits);
}

void put_blob(std::string& out, const std::string& name, std::uint8_t kind, const Shape& shape,
              std::span<const double> values) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  out.push_back(static_cast<char>(kind));
  put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (auto e : shape) put_u64(out, e);
  for (double v : values) put_f64(out, v);
}

class Reader {
 public:
  Reader(std::string bytes, std::string path) : buf_(std::move(bytes)), path_(std::move(path)) {}

  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw FormatError(path_ + ": truncated checkpoint");
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  double f64() {
    const std::uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, sizeof d);
    return d;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  std::string buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const NeuFAModel& model, const CheckpointExtras& extras) {
  std::string out(kMagic, 4);
  put_u32(out, kFormatVersion);
  const std::string meta = json{{"config", model.config()}, {"state", extras.state}}.dump();
  put_u64(out, meta.size());
  out += meta;
  const auto& params = model.params().all();
  put_u64(out, params.size() + model.buffers().size() + extras.blobs.size());
  for (const auto& p : params) put_blob(out, p.name, 0, p.tensor.shape(), p.tensor.data());
  for (const auto& [name, v] : model.buffers()) put_blob(out, name, 1, {v.size()}, v);
  for (const auto& [name, v] : extras.blobs) put_blob(out, name, 2, {v.size()}, v);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing " + path);
}

NeuFAModel load_checkpoint(const std::string& path, CheckpointExtras* extras) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes), path);
  if (r.bytes(4) != std::string(kMagic, 4)) throw FormatError(path + ": not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion)
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
  const std::uint64_t meta_len = r.u64();
  json meta;
  try {
    meta = json::parse(r.bytes(meta_len));
  } catch (const json::exception& e) {
    throw FormatError(path + ": corrupt metadata: " + e.what());
  }
  NeuFAModel model(meta.at("config").get<NeuFAConfig>());
  if (extras) {
    extras->state = meta.value("state", json::object());
    extras->blobs.clear();
  }

  std::map<std::string, std::size_t> param_index;
  auto& params = model.params().all();
  for (std::size_t i = 0; i < params.size(); ++i) param_index[params[i].name] = i;
  std::size_t params_seen = 0;

  const std::uint64_t count = r.u64();
  for (std::uint64_t b = 0; b < count; ++b) {
    const std::string name = r.bytes(r.u32());
    const std::uint8_t kind = r.u8();
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& e : shape) e = r.u64();
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = r.f64();
    if (kind == 0) {
      auto it = param_index.find(name);
      if (it == param_index.end()) throw FormatError(path + ": unknown parameter " + name);
      Tensor& t = params[it->second].tensor;
      if (t.shape() != shape)
        throw FormatError(path + ": parameter " + name + " has shape " + shape_str(shape) + ", model expects " +
                          shape_str(t.shape()));
      std::copy(values.begin(), values.end(), t.mutable_data().begin());
      ++params_seen;
    } else if (kind == 1) {
      auto it = model.buffers().find(name);
      if (it == model.buffers().end() || it->second.size() != values.size())
        throw FormatError(path + ": unexpected buffer " + name);
      it->second = std::move(values);
    } else if (kind == 2) {
      if (extras) extras->blobs[name] = std::move(values);
    } else {
      throw FormatError(path + ": unknown blob kind " + std::to_string(kind));
    }
  }
  if (params_seen != params.size()) throw FormatError(path + ": checkpoint is missing parameters");
  if (!r.done()) throw FormatError(path + ": trailing bytes after checkpoint payload");
  return model;
}

}  // namespace neufa
