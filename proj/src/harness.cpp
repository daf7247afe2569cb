#include "neufa/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

namespace neufa {

using nlohmann::json;

// ---------------------------------------------------------------------------
// schedule

const StageConfig& TrainSchedule::stage(int s) const {
  if (s == 1) return stage1;
  if (s == 2) return stage2;
  throw ConfigError("stage must be 1 or 2, got " + std::to_string(s));
}

void TrainSchedule::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  stage1.weights.validate();
  stage2.weights.validate();
}

static void to_json(json& j, const StageConfig& s) { j = json{{"steps", s.steps}, {"weights", s.weights}}; }

static void stage_from_json(const json& j, StageConfig& s) {
  s.steps = j.value("steps", s.steps);
  if (j.contains("weights")) s.weights = j.at("weights").get<LossWeights>();
}

void to_json(json& j, const TrainSchedule& s) {
  j = json{{"stage1", s.stage1},
           {"stage2", s.stage2},
           {"learning_rate", s.learning_rate},
           {"batch_size", s.batch_size},
           {"seed", s.seed},
           {"checkpoint_every", s.checkpoint_every},
           {"checkpoint_dir", s.checkpoint_dir}};
}

void from_json(const json& j, TrainSchedule& s) {
  s = TrainSchedule{};
  if (j.contains("stage1")) stage_from_json(j.at("stage1"), s.stage1);
  if (j.contains("stage2")) stage_from_json(j.at("stage2"), s.stage2);
  s.learning_rate = j.value("learning_rate", s.learning_rate);
  s.batch_size = j.value("batch_size", s.batch_size);
  s.seed = j.value("seed", s.seed);
  s.checkpoint_every = j.value("checkpoint_every", s.checkpoint_every);
  s.checkpoint_dir = j.value("checkpoint_dir", s.checkpoint_dir);
}

std::string history_jsonl(const History& h) {
  std::string out;
  for (const auto& r : h) {
    json j = {{"stage", r.stage}, {"step", r.step}};
    for (const auto& [k, v] : r.losses) j[k] = v;
    out += j.dump() + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// training

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

AdamOptions adam_options(const TrainSchedule& s) {
  AdamOptions o;
  o.lr = s.learning_rate;
  return o;
}

}  // namespace

std::vector<std::size_t> batch_for_step(std::size_t corpus_size, const TrainSchedule& s, int stage,
                                        std::size_t step) {
  if (corpus_size == 0) throw InputError("cannot draw a batch from an empty corpus");
  const std::size_t per_epoch = (corpus_size + s.batch_size - 1) / s.batch_size;
  const std::uint64_t epoch = step / per_epoch;
  const std::uint64_t seed = splitmix(splitmix(s.seed) ^ splitmix(static_cast<std::uint64_t>(stage) << 40 | epoch));
  return batch_order(corpus_size, s.batch_size, seed)[step % per_epoch];
}

Trainer::Trainer(NeuFAConfig config, TrainSchedule schedule)
    : Trainer(std::make_unique<NeuFAModel>(std::move(config)), std::move(schedule)) {}

Trainer::Trainer(std::unique_ptr<NeuFAModel> model, TrainSchedule schedule)
    : model_(std::move(model)), schedule_(std::move(schedule)), adam_(model_->params(), adam_options(schedule_)) {
  schedule_.validate();
}

std::unique_ptr<Trainer> Trainer::resume(const std::string& checkpoint) {
  CheckpointExtras ex;
  auto model = std::make_unique<NeuFAModel>(load_checkpoint(checkpoint, &ex));
  if (!ex.state.contains("schedule")) throw FormatError(checkpoint + ": no training state");
  std::unique_ptr<Trainer> t(new Trainer(std::move(model), ex.state.at("schedule").get<TrainSchedule>()));
  t->stage_ = ex.state.at("stage").get<int>();
  t->step_ = ex.state.at("step").get<std::size_t>();
  t->adam_.load_state(ex.blobs, ex.state.at("adam_steps").get<std::uint64_t>());
  return t;
}

void Trainer::save(const std::string& path) const {
  CheckpointExtras ex;
  // Where checkpoints go is not training state; leaving it out keeps the bytes
  // independent of the output location.
  TrainSchedule stored = schedule_;
  stored.checkpoint_dir.clear();
  ex.state = {{"stage", stage_}, {"step", step_}, {"adam_steps", adam_.steps()}, {"schedule", stored}};
  ex.blobs = adam_.state();
  save_checkpoint(path, *model_, ex);
}

void Trainer::maybe_checkpoint(int stage, std::size_t step) const {
  if (schedule_.checkpoint_dir.empty()) return;
  const std::size_t total = schedule_.stage(stage).steps;
  const bool cadence = schedule_.checkpoint_every > 0 && step % schedule_.checkpoint_every == 0;
  if (!cadence && step != total) return;
  std::filesystem::create_directories(schedule_.checkpoint_dir);
  char name[64];
  if (step == total)
    std::snprintf(name, sizeof name, "stage%d.nfa", stage);
  else
    std::snprintf(name, sizeof name, "stage%d_step%06zu.nfa", stage, step);
  save((std::filesystem::path(schedule_.checkpoint_dir) / name).string());
}

StepRecord Trainer::step_once(const Corpus& corpus, int stage, std::size_t step) {
  const auto items = batch_for_step(corpus.size(), schedule_, stage, step);
  const double inv_b = 1.0 / static_cast<double>(items.size());
  ForwardOptions opt;
  opt.training = true;
  opt.weights = schedule_.stage(stage).weights;

  StepRecord rec;
  rec.stage = stage;
  rec.step = step + 1;
  for (std::size_t k = 0; k < items.size(); ++k) {
    const Utterance& u = corpus[items[k]];
    opt.targets = &u.gt;
    NeuFAOutput out = model_->forward(u.tokens, u.frames, opt);
    const auto named = out.losses.named();
    if (rec.losses.empty())
      for (const auto& [name, v] : named) rec.losses.emplace_back(name, 0.0);
    for (std::size_t t = 0; t < named.size(); ++t) {
      if (!std::isfinite(named[t].second))
        throw NumericError(named[t].first + " is not finite (stage " + std::to_string(stage) + ", step " +
                           std::to_string(step + 1) + ", utterance " + u.id + ")");
      rec.losses[t].second += named[t].second * inv_b;
    }
    backward(scale(out.losses.total, inv_b));
    model_->update_running_stats(out.bn_stats);
  }
  adam_.step();
  model_->params().zero_grad();
  return rec;
}

History Trainer::train_stage(const Corpus& corpus, int stage, std::size_t max_steps) {
  if (stage < stage_) throw ContractError("stage " + std::to_string(stage) + " already completed");
  if (stage > stage_) {
    stage_ = stage;
    step_ = 0;
  }
  const std::size_t total = schedule_.stage(stage).steps;
  History history;
  if (step_ >= total || max_steps == 0) return history;

  const auto& cfg = model_->config();
  for (const auto& u : corpus) {
    if (u.d_mel() != cfg.d_mel)
      throw InputError(u.id + ": frame width " + std::to_string(u.d_mel()) + " but model expects " +
                       std::to_string(cfg.d_mel));
    for (int t : u.tokens)
      if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size)
        throw InputError(u.id + ": token " + std::to_string(t) + " outside the vocabulary");
  }

  for (std::size_t n = 0; n < max_steps && step_ < total; ++n) {
    history.push_back(step_once(corpus, stage, step_));
    ++step_;
    maybe_checkpoint(stage, step_);
  }
  return history;
}

History Trainer::train(const Corpus& corpus) {
  History h = stage_ == 1 ? train_stage(corpus, 1) : History{};
  History h2 = train_stage(corpus, 2);
  h.insert(h.end(), h2.begin(), h2.end());
  return h;
}

// ---------------------------------------------------------------------------
// inference

Alignment align_utterance(const NeuFAModel& model, const Utterance& utt) {
  ForwardOptions opt;
  opt.training = false;
  opt.weights = {0, 0, 0, 0, 0, 0};
  opt.want_boundaries = true;
  NeuFAOutput out = model.forward(utt.tokens, utt.frames, opt);
  Alignment a;
  a.boundaries = signals_to_boundaries(*out.boundaries, utt.frame_shift_ms);
  a.w_tts = out.w_tts.detach();
  a.w_asr = out.w_asr.detach();
  return a;
}

Predictions align_corpus(const NeuFAModel& model, const Corpus& corpus) {
  Predictions p;
  for (const auto& u : corpus) p[u.id] = align_utterance(model, u).boundaries;
  return p;
}

std::string attention_csv(const Tensor& w) {
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < w.dim(0); ++i) {
    for (std::size_t j = 0; j < w.dim(1); ++j) {
      std::snprintf(buf, sizeof buf, j ? ",%.6g" : "%.6g", w.at(i, j));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

double diagonality_score(const Tensor& w, double band) {
  if (w.ndim() != 2 || w.numel() == 0) throw DimensionError("diagonality_score: expects a non-empty matrix");
  const std::size_t n1 = w.dim(0), n2 = w.dim(1);
  double total = 0.0;
  for (std::size_t j = 0; j < n2; ++j) {
    const double q = (static_cast<double>(j) + 0.5) / static_cast<double>(n2);
    double in_band = 0.0;
    for (std::size_t i = 0; i < n1; ++i) {
      const double p = (static_cast<double>(i) + 0.5) / static_cast<double>(n1);
      if (std::abs(p - q) <= band + 1e-12) in_band += w.at(i, j);
    }
    total += in_band;
  }
  return total / static_cast<double>(n2);
}

double alignment_diagonality(const Alignment& a) {
  return 0.5 * (diagonality_score(a.w_tts) + diagonality_score(a.w_asr));
}

// ---------------------------------------------------------------------------
// evaluation

ErrorSummary summarize_errors(std::vector<double> errors_ms, const std::vector<double>& tolerances_ms) {
  if (errors_ms.empty()) throw InputError("no boundary errors to summarize");
  ErrorSummary s;
  s.count = errors_ms.size();
  s.tolerances_ms = tolerances_ms;
  double sum = 0.0;
  for (double e : errors_ms) {
    if (!(e >= 0.0)) throw InputError("boundary errors must be non-negative");
    sum += e;
  }
  s.mae_ms = sum / static_cast<double>(s.count);
  std::sort(errors_ms.begin(), errors_ms.end());
  const std::size_t n = s.count;
  s.median_ms = n % 2 ? errors_ms[n / 2] : 0.5 * (errors_ms[n / 2 - 1] + errors_ms[n / 2]);
  s.max_ms = errors_ms.back();
  for (double tol : tolerances_ms) {
    const auto within = std::upper_bound(errors_ms.begin(), errors_ms.end(), tol) - errors_ms.begin();
    s.accuracy.push_back(static_cast<double>(within) / static_cast<double>(n));
  }
  return s;
}

EvalReport evaluate(const Predictions& predictions, const Corpus& references) {
  if (predictions.size() != references.size())
    throw InputError("evaluate: " + std::to_string(predictions.size()) + " predictions for " +
                     std::to_string(references.size()) + " references");
  EvalReport r;
  std::vector<double> pooled;
  for (const auto& ref : references) {
    auto it = predictions.find(ref.id);
    if (it == predictions.end()) throw InputError("evaluate: no prediction for utterance " + ref.id);
    const auto& pred = it->second.units;
    if (pred.size() != ref.gt.units.size())
      throw InputError("evaluate: " + ref.id + " has " + std::to_string(pred.size()) + " predicted units, " +
                       std::to_string(ref.gt.units.size()) + " expected");
    auto& errs = r.per_utterance[ref.id];
    for (std::size_t i = 0; i < pred.size(); ++i) {
      errs.push_back(std::abs(pred[i].left_ms - ref.gt.units[i].left_ms));
      errs.push_back(std::abs(pred[i].right_ms - ref.gt.units[i].right_ms));
    }
    pooled.insert(pooled.end(), errs.begin(), errs.end());
  }
  r.summary = summarize_errors(std::move(pooled));
  return r;
}

EvalReport evaluate_model(const NeuFAModel& model, const Corpus& corpus) {
  Predictions preds;
  std::map<std::string, double> diag;
  double sum = 0.0;
  for (const auto& u : corpus) {
    Alignment a = align_utterance(model, u);
    preds[u.id] = a.boundaries;
    diag[u.id] = alignment_diagonality(a);
    sum += diag[u.id];
  }
  EvalReport r = evaluate(preds, corpus);
  r.diagonality = std::move(diag);
  r.mean_diagonality = corpus.empty() ? 0.0 : sum / static_cast<double>(corpus.size());
  return r;
}

json report_json(const EvalReport& r) {
  const auto& s = r.summary;
  json acc = json::object();
  for (std::size_t i = 0; i < s.tolerances_ms.size(); ++i) {
    char key[32];
    std::snprintf(key, sizeof key, "%gms", s.tolerances_ms[i]);
    acc[key] = s.accuracy[i];
  }
  json j = {{"count", s.count},       {"mae_ms", s.mae_ms},        {"median_ms", s.median_ms},
            {"max_ms", s.max_ms},     {"accuracy", acc},           {"per_utterance", r.per_utterance}};
  if (!r.diagonality.empty()) {
    j["diagonality"] = r.diagonality;
    j["mean_diagonality"] = r.mean_diagonality;
  }
  return j;
}

std::string comparison_table(const EvalReport& r) {
  struct Row {
    const char* name;
    double mean, median;
    double acc[4];
  };
  // Word- and phoneme-level results published for the aligner and its baseline.
  static const Row reference[] = {
      {"MFA (word)", 25.8, 12.3, {0.41, 0.78, 0.91, 0.96}},
      {"NeuFA (word)", 23.7, 9.0, {0.55, 0.82, 0.92, 0.96}},
      {"MFA (phoneme)", 18.0, 10.0, {0.50, 0.84, 0.94, 0.98}},
      {"NeuFA (phoneme)", 15.7, 9.1, {0.55, 0.87, 0.95, 0.98}},
  };
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-22s %9s %9s %7s %7s %7s %7s\n", "approach", "mean", "median", "10ms", "25ms",
                "50ms", "100ms");
  os << line;
  for (const auto& row : reference) {
    std::snprintf(line, sizeof line, "%-22s %6.1f ms %6.1f ms %7.2f %7.2f %7.2f %7.2f\n", row.name, row.mean,
                  row.median, row.acc[0], row.acc[1], row.acc[2], row.acc[3]);
    os << line;
  }
  const auto& s = r.summary;
  double acc[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < 4 && i < s.accuracy.size(); ++i) acc[i] = s.accuracy[i];
  std::snprintf(line, sizeof line, "%-22s %6.1f ms %6.1f ms %7.2f %7.2f %7.2f %7.2f\n", "this run (synthetic)",
                s.mae_ms, s.median_ms, acc[0], acc[1], acc[2], acc[3]);
  os << line;
  return os.str();
}

// ---------------------------------------------------------------------------
// ablations

const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> v = {"w/o EPEs", "w/o TPEs", "w/o SPEs", "w/o ASR", "w/o TTS", "w/o DAL"};
  return v;
}

void apply_variant(const std::string& variant, NeuFAConfig& config, TrainSchedule& schedule) {
  std::string key;
  for (char c : variant) key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (key.rfind("w/o ", 0) == 0) key = key.substr(4);
  if (key == "epes")
    config.pe.estimated = false;
  else if (key == "tpes")
    config.pe.text = false;
  else if (key == "spes")
    config.pe.speech = false;
  else if (key == "asr")
    config.disable_asr = true;
  else if (key == "tts")
    config.disable_tts = true;
  else if (key == "dal")
    schedule.stage1.weights.epsilon = 0.0;
  else
    throw ConfigError("unknown ablation variant '" + variant + "'");
}

AblationResult run_ablation(const NeuFAConfig& base, const TrainSchedule& schedule, const std::string& variant,
                            const std::vector<std::uint64_t>& seeds, const Corpus& train, const Corpus& test) {
  AblationResult res;
  res.variant = variant;
  NeuFAConfig vcfg = base;
  TrainSchedule vsched = schedule;
  apply_variant(variant, vcfg, vsched);
  for (std::uint64_t seed : seeds) {
    auto run = [&](NeuFAConfig cfg, TrainSchedule sched) {
      cfg.seed = seed;
      sched.seed = seed;
      sched.checkpoint_dir.clear();
      Trainer t(cfg, sched);
      t.train(train);
      return evaluate_model(t.model(), test);
    };
    AblationRun r;
    r.seed = seed;
    r.baseline = run(base, schedule);
    r.variant = run(vcfg, vsched);
    res.runs.push_back(std::move(r));
  }
  return res;
}

json ablation_json(const AblationResult& r) {
  json runs = json::array();
  for (const auto& run : r.runs) {
    auto brief = [](const EvalReport& e) {
      json j = report_json(e);
      j.erase("per_utterance");
      j.erase("diagonality");
      return j;
    };
    runs.push_back({{"seed", run.seed}, {"baseline", brief(run.baseline)}, {"variant", brief(run.variant)}});
  }
  return {{"variant", r.variant}, {"runs", runs}};
}

}  // namespace neufa
