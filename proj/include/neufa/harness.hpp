#pragma once

// Two-stage training, inference, evaluation metrics and ablations.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "neufa/data.hpp"
#include "neufa/model.hpp"

namespace neufa {

struct StageConfig {
  std::size_t steps = 2000;
  LossWeights weights;
};

struct TrainSchedule {
  StageConfig stage1{2000, LossWeights::stage1()};
  StageConfig stage2{2000, LossWeights::stage2()};
  double learning_rate = 1e-4;
  std::size_t batch_size = 8;
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::string checkpoint_dir;        // empty: no checkpoints

  const StageConfig& stage(int s) const;
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainSchedule& s);
void from_json(const nlohmann::json& j, TrainSchedule& s);

// Batch-mean loss terms after one optimizer step.
struct StepRecord {
  int stage = 1;
  std::size_t step = 0;  // 1-based within the stage
  std::vector<std::pair<std::string, double>> losses;
};
using History = std::vector<StepRecord>;

std::string history_jsonl(const History& h);

// Owns a model, its optimizer and the training position. A batch is a
// function of (seed, stage, step) alone, so a trainer restored from a
// checkpoint continues exactly where the original left off.
class Trainer {
 public:
  Trainer(NeuFAConfig config, TrainSchedule schedule);
  static std::unique_ptr<Trainer> resume(const std::string& checkpoint);

  // Runs up to `max_steps` further steps of the current stage (all remaining
  // ones by default) and moves on to stage 2 when stage 1 completes.
  History train_stage(const Corpus& corpus, int stage, std::size_t max_steps = SIZE_MAX);
  // Both stages from the current position.
  History train(const Corpus& corpus);

  // Checkpoints store the schedule without its checkpoint directory.
  void save(const std::string& path) const;
  void set_checkpoint_dir(std::string dir) { schedule_.checkpoint_dir = std::move(dir); }

  NeuFAModel& model() { return *model_; }
  const NeuFAModel& model() const { return *model_; }
  const TrainSchedule& schedule() const { return schedule_; }
  int stage() const { return stage_; }
  std::size_t step() const { return step_; }

 private:
  Trainer(std::unique_ptr<NeuFAModel> model, TrainSchedule schedule);
  StepRecord step_once(const Corpus& corpus, int stage, std::size_t step);
  void maybe_checkpoint(int stage, std::size_t step) const;

  std::unique_ptr<NeuFAModel> model_;
  TrainSchedule schedule_;
  Adam adam_;
  int stage_ = 1;
  std::size_t step_ = 0;  // completed steps in the current stage
};

// Indices of the utterances in (stage, step)'s batch.
std::vector<std::size_t> batch_for_step(std::size_t corpus_size, const TrainSchedule& s, int stage,
                                        std::size_t step);

struct Alignment {
  BoundarySet boundaries;
  Tensor w_tts;  // [n_text x n_frames]
  Tensor w_asr;  // [n_frames x n_text]
};

// Inference pass: running batch-norm statistics, no reconstruction branches.
Alignment align_utterance(const NeuFAModel& model, const Utterance& utt);
Predictions align_corpus(const NeuFAModel& model, const Corpus& corpus);

// Attention map as CSV, one row per row of W.
std::string attention_csv(const Tensor& w);

// Mean over columns of the weight mass at relative distance |p - q| <= band,
// with p = (i + 0.5) / n1 and q = (j + 0.5) / n2.
double diagonality_score(const Tensor& w, double band = 0.1);
// Average score of both maps of an utterance.
double alignment_diagonality(const Alignment& a);

struct ErrorSummary {
  std::size_t count = 0;
  double mae_ms = 0.0;
  double median_ms = 0.0;  // midpoint of the two middle values for even counts
  double max_ms = 0.0;
  std::vector<double> tolerances_ms{10.0, 25.0, 50.0, 100.0};
  std::vector<double> accuracy;  // fraction of errors <= tolerance
};

ErrorSummary summarize_errors(std::vector<double> errors_ms,
                              const std::vector<double>& tolerances_ms = {10.0, 25.0, 50.0, 100.0});

struct EvalReport {
  ErrorSummary summary;                                   // all left and right errors pooled
  std::map<std::string, std::vector<double>> per_utterance;  // |error| per boundary, left then right per unit
  std::map<std::string, double> diagonality;              // filled by evaluate_model
  double mean_diagonality = 0.0;
};

nlohmann::json report_json(const EvalReport& r);
// Plain-text rows next to the published reference numbers (mean/median and
// tolerance accuracies of the forced-alignment baseline and NeuFA).
std::string comparison_table(const EvalReport& r);

// Predictions and references must cover the same ids with equal unit counts.
EvalReport evaluate(const Predictions& predictions, const Corpus& references);
// Aligns `corpus` with `model`, then evaluates and records diagonality.
EvalReport evaluate_model(const NeuFAModel& model, const Corpus& corpus);

// ---- ablations ------------------------------------------------------------

// The six rows of the ablation table, in order.
const std::vector<std::string>& ablation_variants();
// Applies a variant ("w/o EPEs", "epes", ...) to a config and schedule.
void apply_variant(const std::string& variant, NeuFAConfig& config, TrainSchedule& schedule);

struct AblationRun {
  std::uint64_t seed = 0;
  EvalReport baseline;
  EvalReport variant;
};

struct AblationResult {
  std::string variant;
  std::vector<AblationRun> runs;
};

// Trains baseline and variant on `train` with identical seeds, evaluates both
// on `test`.
AblationResult run_ablation(const NeuFAConfig& base, const TrainSchedule& schedule, const std::string& variant,
                            const std::vector<std::uint64_t>& seeds, const Corpus& train, const Corpus& test);

nlohmann::json ablation_json(const AblationResult& r);

// ---- gradient suite -------------------------------------------------------

struct GradCase {
  std::string name;
  double tolerance = 1e-4;
  std::function<double(std::uint64_t seed)> run;  // max relative error for one seed
};

struct GradCaseResult {
  std::string name;
  double tolerance = 0.0;
  double worst = 0.0;
  std::uint64_t worst_seed = 0;
  bool passed() const { return worst < tolerance; }
};

// Finite-difference checks of every differentiable operation plus the
// end-to-end micro model.
std::vector<GradCase> gradient_suite();
std::vector<GradCaseResult> run_gradient_suite(std::size_t seeds);

}  // namespace neufa
