#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "neufa/model.hpp"

using namespace neufa;
namespace fs = std::filesystem;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

struct Sample {
  std::vector<int> tokens;
  Tensor frames;
  BoundarySet gt;
};

Sample sample(const NeuFAConfig& cfg, std::size_t n_text, std::size_t per_unit, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> tok(0, static_cast<int>(cfg.vocab_size) - 1);
  std::normal_distribution<double> n01;
  Sample s;
  for (std::size_t i = 0; i < n_text; ++i) {
    s.tokens.push_back(tok(rng));
    s.gt.units.push_back({10.0 * i * per_unit, 10.0 * (i + 1) * per_unit});
  }
  s.gt.frame_shift_ms = 10.0;
  std::vector<double> f(n_text * per_unit * cfg.d_mel);
  for (auto& x : f) x = n01(rng);
  s.frames = Tensor::from({n_text * per_unit, cfg.d_mel}, std::move(f));
  return s;
}

ForwardOptions all_terms(const BoundarySet* gt) {
  ForwardOptions o;
  o.weights = {1, 1, 1, 1, 1, 1};
  o.targets = gt;
  return o;
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("neufa_model_" + name); }

}  // namespace

TEST(LossWeights, StagePresets) {
  EXPECT_EQ(LossWeights::stage1(), (LossWeights{0.1, 1, 10, 10, 1000, 0}));
  EXPECT_EQ(LossWeights::stage2(), (LossWeights{0.1, 1, 10, 10, 0, 100}));
  EXPECT_THROW((LossWeights{-1, 1, 1, 1, 1, 1}).validate(), ConfigError);
}

TEST(TotalLoss, WeightedSum) {
  LossTerms t;
  t.loss_t = Tensor::scalar(2.0);
  t.loss_s = Tensor::scalar(3.0);
  t.loss_l_t = Tensor::scalar(0.5);
  t.loss_l_s = Tensor::scalar(0.25);
  t.loss_a = Tensor::scalar(0.01);
  t.loss_b = Tensor::scalar(0.04);
  EXPECT_NEAR(total_loss(t, LossWeights::stage1()).item(), 0.2 + 3 + 5 + 2.5 + 10, 1e-12);
  EXPECT_NEAR(total_loss(t, LossWeights::stage2()).item(), 0.2 + 3 + 5 + 2.5 + 4, 1e-12);
  EXPECT_EQ(total_loss(t, {0, 0, 0, 0, 0, 0}).item(), 0.0);
}

TEST(TotalLoss, AbsentTermsContributeNothing) {
  LossTerms t;
  t.loss_s = Tensor::scalar(3.0);
  EXPECT_EQ(total_loss(t, LossWeights::stage1()).item(), 3.0);
  auto named = t.named();
  ASSERT_EQ(named.size(), 7u);
  EXPECT_EQ(named[0].first, "loss_t");
  EXPECT_EQ(named[0].second, 0.0);
}

TEST(Config, Validation) {
  auto c = NeuFAConfig::micro();
  EXPECT_NO_THROW(c.validate());
  c.text_encoder_dim = 7;
  EXPECT_THROW(c.validate(), ConfigError);
  c = NeuFAConfig::micro();
  c.speech_conv_kernel = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  c = NeuFAConfig::micro();
  c.vocab_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, JsonRoundTrip) {
  auto c = NeuFAConfig::micro();
  c.attention_form = AttentionForm::additive;
  c.disable_tts = true;
  c.pe.speech = false;
  c.loss_weights = LossWeights::stage2();
  nlohmann::json j = c;
  NeuFAConfig back = j.get<NeuFAConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
}

TEST(Decoders, HandComputedLosses) {
  auto cfg = NeuFAConfig::micro();
  NeuFAModel m(cfg);
  auto set = [&](const std::string& name, double value) {
    for (auto& p : m.params().all())
      if (p.name == name)
        for (auto& x : p.tensor.mutable_data()) x = value;
  };
  set("text_decoder.out.weight", 0.0);
  set("text_decoder.out.bias", 0.0);
  set("speech_decoder.out.weight", 0.0);
  set("speech_decoder.out.bias", 0.5);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n01;
  const std::size_t dv1 = m.attention().config().d_v1, dv2 = m.attention().config().d_v2;
  std::vector<double> o(4 * dv2);
  for (auto& x : o) x = n01(rng);
  const std::vector<int> tokens = {0, 3, 1, 3};

  // uniform logits
  auto t = m.decode_text(Tensor::from({4, dv2}, o), tokens);
  EXPECT_NEAR(t.loss.item(), std::log(static_cast<double>(cfg.vocab_size)), 1e-12);
  // one class dominates
  set("text_decoder.out.bias", 0.0);
  for (auto& p : m.params().all())
    if (p.name == "text_decoder.out.bias") p.tensor.mutable_data()[3] = 1000.0;
  const std::vector<int> threes = {3, 3};
  const Tensor two_steps = Tensor::from({2, dv2}, std::vector<double>(o.begin(), o.begin() + 2 * dv2));
  EXPECT_LT(m.decode_text(two_steps, threes).loss.item(), 1e-12);

  // constant output 0.5
  std::vector<double> o1(6 * dv1);
  for (auto& x : o1) x = n01(rng);
  const Tensor in = Tensor::from({6, dv1}, o1);
  EXPECT_EQ(m.decode_speech(in, Tensor::full({6, cfg.d_mel}, 0.5)).loss.item(), 0.0);
  EXPECT_NEAR(m.decode_speech(in, Tensor::full({6, cfg.d_mel}, -0.5)).loss.item(), 1.0, 1e-12);
  EXPECT_EQ(m.decode_speech(in).output.shape(), (Shape{6, cfg.d_mel}));
}

TEST(Model, OutputShapes) {
  auto cfg = NeuFAConfig::micro();
  NeuFAModel m(cfg);
  auto s = sample(cfg, 4, 3, 1);
  auto out = m.forward(s.tokens, s.frames, all_terms(&s.gt));
  EXPECT_EQ(out.text_probs.shape(), (Shape{4, cfg.vocab_size}));
  EXPECT_EQ(out.speech_recon.shape(), (Shape{12, cfg.d_mel}));
  EXPECT_EQ(out.w_tts.shape(), (Shape{4, 12}));
  EXPECT_EQ(out.w_asr.shape(), (Shape{12, 4}));
  ASSERT_TRUE(out.boundaries.has_value());
  EXPECT_EQ(out.boundaries->values.shape(), (Shape{4, 12, 2}));
  for (const auto& [name, v] : out.losses.named()) EXPECT_TRUE(std::isfinite(v)) << name;
}

TEST(Model, TextProbabilityRowsSumToOne) {
  auto cfg = NeuFAConfig::micro();
  NeuFAModel m(cfg);
  auto s = sample(cfg, 5, 2, 2);
  auto out = m.forward(s.tokens, s.frames, all_terms(&s.gt));
  for (std::size_t i = 0; i < 5; ++i) {
    double sum = 0;
    for (std::size_t v = 0; v < cfg.vocab_size; ++v) sum += out.text_probs.at(i, v);
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Model, SameSeedSameOutputs) {
  auto cfg = NeuFAConfig::micro();
  NeuFAModel a(cfg), b(cfg);
  auto s = sample(cfg, 3, 4, 3);
  auto oa = a.forward(s.tokens, s.frames, all_terms(&s.gt));
  auto ob = b.forward(s.tokens, s.frames, all_terms(&s.gt));
  EXPECT_EQ(oa.losses.total.item(), ob.losses.total.item());
  EXPECT_EQ(values(oa.w_tts), values(ob.w_tts));
}

TEST(Model, DisabledBranchesHaveNoOutputOrLoss) {
  auto cfg = NeuFAConfig::micro();
  cfg.disable_asr = true;
  NeuFAModel m(cfg);
  auto s = sample(cfg, 3, 3, 4);
  auto out = m.forward(s.tokens, s.frames, all_terms(&s.gt));
  EXPECT_FALSE(out.text_probs.defined());
  EXPECT_FALSE(out.losses.loss_t.defined());
  EXPECT_TRUE(out.speech_recon.defined());

  cfg.disable_asr = false;
  cfg.disable_tts = true;
  NeuFAModel m2(cfg);
  auto out2 = m2.forward(s.tokens, s.frames, all_terms(&s.gt));
  EXPECT_TRUE(out2.text_probs.defined());
  EXPECT_FALSE(out2.speech_recon.defined());
  EXPECT_FALSE(out2.losses.loss_s.defined());
}

TEST(Model, ZeroWeightsSkipBranches) {
  auto cfg = NeuFAConfig::micro();
  NeuFAModel m(cfg);
  auto s = sample(cfg, 3, 3, 5);
  ForwardOptions o;
  o.weights = {0, 0, 0, 0, 0, 0};
  o.targets = &s.gt;
  auto out = m.forward(s.tokens, s.frames, o);
  EXPECT_EQ(out.losses.total.item(), 0.0);
  EXPECT_FALSE(out.boundaries.has_value());
  EXPECT_FALSE(out.losses.loss_a.defined());
}

TEST(Model, SpeechConvReceptiveField) {
  // three kernel-17 layers see 24 frames either side
  NeuFAConfig cfg;
  cfg.d_mel = 2;
  NeuFAModel m(cfg);
  const std::size_t n = 80, probe = 40;
  Tensor x = Tensor::zeros({n, 2});
  Tensor base = m.speech_conv_stack(x, false);
  x.mutable_data()[probe * 2] = 5.0;
  Tensor bumped = m.speech_conv_stack(x, false);
  const std::size_t c = base.dim(1);
  for (std::size_t t = 0; t < n; ++t) {
    double diff = 0;
    for (std::size_t k = 0; k < c; ++k) diff += std::abs(bumped.at(t, k) - base.at(t, k));
    const std::size_t dist = t > probe ? t - probe : probe - t;
    if (dist > 24) { EXPECT_EQ(diff, 0.0) << "frame " << t; }
  }
}

TEST(Model, UnknownTokenIsInputError) {
  auto cfg = NeuFAConfig::micro();
  NeuFAModel m(cfg);
  auto s = sample(cfg, 3, 2, 6);
  s.tokens[1] = static_cast<int>(cfg.vocab_size);
  EXPECT_THROW(m.forward(s.tokens, s.frames, all_terms(&s.gt)), InputError);
}

TEST(Model, OverfitsASingleUtterance) {
  auto cfg = NeuFAConfig::micro();
  NeuFAModel m(cfg);
  Adam adam(m.params(), {.lr = 1e-2});
  auto s = sample(cfg, 3, 3, 7);
  ForwardOptions o = all_terms(&s.gt);
  o.weights = {1, 1, 1, 1, 1, 10};
  double first = 0, last = 0;
  for (int it = 0; it < 100; ++it) {
    auto out = m.forward(s.tokens, s.frames, o);
    if (it == 0) first = out.losses.total.item();
    last = out.losses.total.item();
    backward(out.losses.total);
    m.update_running_stats(out.bn_stats);
    adam.step();
    m.params().zero_grad();
  }
  EXPECT_LT(last, 0.5 * first);
}

TEST(Checkpoint, RoundTripReproducesOutputs) {
  auto cfg = NeuFAConfig::micro();
  NeuFAModel m(cfg);
  m.buffers().begin()->second[0] = 0.375;
  CheckpointExtras ex;
  ex.state = {{"step", 12}};
  ex.blobs["adam.m"] = {1.0, 2.0};
  const auto path = temp_file("rt.nfa");
  save_checkpoint(path.string(), m, ex);

  CheckpointExtras back;
  NeuFAModel m2 = load_checkpoint(path.string(), &back);
  EXPECT_EQ(back.state["step"], 12);
  EXPECT_EQ(back.blobs.at("adam.m"), (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(m2.buffers(), m.buffers());
  ASSERT_EQ(m2.params().all().size(), m.params().all().size());
  for (std::size_t i = 0; i < m.params().all().size(); ++i)
    EXPECT_EQ(values(m2.params().all()[i].tensor), values(m.params().all()[i].tensor));

  auto s = sample(cfg, 3, 3, 8);
  ForwardOptions o = all_terms(&s.gt);
  o.training = false;
  EXPECT_EQ(m.forward(s.tokens, s.frames, o).losses.total.item(),
            m2.forward(s.tokens, s.frames, o).losses.total.item());

  // saving the loaded model reproduces the same bytes
  const auto path2 = temp_file("rt2.nfa");
  save_checkpoint(path2.string(), m2, back);
  std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
  std::string ba((std::istreambuf_iterator<char>(a)), {}), bb((std::istreambuf_iterator<char>(b)), {});
  EXPECT_EQ(ba, bb);
  fs::remove(path);
  fs::remove(path2);
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  auto cfg = NeuFAConfig::micro();
  NeuFAModel m(cfg);
  const auto path = temp_file("bad.nfa");
  save_checkpoint(path.string(), m);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign((std::istreambuf_iterator<char>(in)), {});
  }
  auto write = [&](const std::string& b) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << b;
  };

  write("XXXX" + bytes.substr(4));
  EXPECT_THROW(load_checkpoint(path.string()), FormatError);
  write(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(load_checkpoint(path.string()), FormatError);
  write(bytes + "x");
  EXPECT_THROW(load_checkpoint(path.string()), FormatError);
  fs::remove(path);
  EXPECT_THROW(load_checkpoint(path.string()), IoError);
}
