// neufa: command-line front end for corpus generation, training, alignment,
// evaluation, gradient checks and ablations.
//
// Exit codes: 0 success, 1 validation failure, 2 runtime error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "neufa/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace neufa;

namespace {

// Thrown when a command ran but its result fails a check (e.g. gradcheck).
struct CheckFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

struct TrainConfig {
  NeuFAConfig model;
  TrainSchedule schedule;
};

TrainConfig read_train_config(const std::string& path) {
  TrainConfig c;
  if (path.empty()) return c;
  const json j = read_json(path);
  if (j.contains("model")) c.model = j.at("model").get<NeuFAConfig>();
  if (j.contains("schedule")) c.schedule = j.at("schedule").get<TrainSchedule>();
  c.model.validate();
  c.schedule.validate();
  return c;
}

int cmd_gen_data(const std::string& spec_path, const std::string& out) {
  SyntheticSpec spec;
  if (!spec_path.empty()) spec = read_json(spec_path).get<SyntheticSpec>();
  const Corpus corpus = generate_synthetic_corpus(spec);
  save_corpus(corpus, out);
  std::printf("wrote %zu utterances to %s\n", corpus.size(), out.c_str());
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& corpus_path, const std::string& out,
              const std::string& resume) {
  const Corpus corpus = load_corpus(corpus_path);
  fs::create_directories(out);
  std::unique_ptr<Trainer> trainer;
  if (!resume.empty()) {
    trainer = Trainer::resume(resume);
    trainer->set_checkpoint_dir(out);
  } else {
    TrainConfig cfg = read_train_config(config_path);
    if (cfg.schedule.checkpoint_dir.empty()) cfg.schedule.checkpoint_dir = out;
    trainer = std::make_unique<Trainer>(cfg.model, cfg.schedule);
  }
  const History h = trainer->train(corpus);
  const std::string history_path = (fs::path(out) / "history.jsonl").string();
  std::ofstream hist(history_path, std::ios::app);
  hist << history_jsonl(h);
  const std::string ckpt = (fs::path(out) / "final.nfa").string();
  trainer->save(ckpt);
  if (!h.empty()) {
    std::printf("%zu steps; last step:", h.size());
    for (const auto& [k, v] : h.back().losses) std::printf(" %s=%.6g", k.c_str(), v);
    std::printf("\n");
  }
  std::printf("checkpoint: %s\n", ckpt.c_str());
  return 0;
}

int cmd_align(const std::string& ckpt, const std::string& corpus_path, const std::string& out) {
  const NeuFAModel model = load_checkpoint(ckpt);
  const Corpus corpus = load_corpus(corpus_path);
  fs::create_directories(out);
  Predictions preds;
  for (const auto& u : corpus) {
    const Alignment a = align_utterance(model, u);
    preds[u.id] = a.boundaries;
    export_textgrid(u, a.boundaries, (fs::path(out) / (u.id + ".TextGrid")).string());
    write_text((fs::path(out) / (u.id + ".w_tts.csv")).string(), attention_csv(a.w_tts));
    write_text((fs::path(out) / (u.id + ".w_asr.csv")).string(), attention_csv(a.w_asr));
  }
  save_predictions(preds, (fs::path(out) / "predictions.json").string());
  std::printf("aligned %zu utterances into %s\n", corpus.size(), out.c_str());
  return 0;
}

int cmd_eval(const std::string& pred_dir, const std::string& ref_path, const std::string& report_path) {
  fs::path pred = pred_dir;
  if (fs::is_directory(pred)) pred /= "predictions.json";
  const EvalReport r = evaluate(load_predictions(pred.string()), load_corpus(ref_path));
  if (!report_path.empty()) write_text(report_path, report_json(r).dump(2) + "\n");
  std::printf("%s", comparison_table(r).c_str());
  return 0;
}

int cmd_gradcheck(std::size_t seeds) {
  bool ok = true;
  for (const auto& r : run_gradient_suite(seeds)) {
    std::printf("%-26s max rel err %.3e (tol %.0e, seed %llu) %s\n", r.name.c_str(), r.worst, r.tolerance,
                static_cast<unsigned long long>(r.worst_seed), r.passed() ? "ok" : "FAIL");
    ok = ok && r.passed();
  }
  if (!ok) throw CheckFailed("gradient check failed");
  return 0;
}

int cmd_ablate(const std::string& variant, const std::string& config_path, const std::string& corpus_path,
               const std::vector<std::uint64_t>& seeds, double test_fraction, const std::string& report_path) {
  TrainConfig cfg = read_train_config(config_path);
  {
    NeuFAConfig probe = cfg.model;
    TrainSchedule sched = cfg.schedule;
    apply_variant(variant, probe, sched);  // reject unknown names before loading data
  }
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("--test-fraction must lie in (0, 1)");
  const Corpus all = load_corpus(corpus_path);
  const auto n_test = static_cast<std::size_t>(static_cast<double>(all.size()) * test_fraction);
  if (n_test == 0 || n_test >= all.size()) throw InputError("corpus too small for the requested split");
  const Corpus train(all.begin(), all.end() - static_cast<std::ptrdiff_t>(n_test));
  const Corpus test(all.end() - static_cast<std::ptrdiff_t>(n_test), all.end());
  cfg.schedule.checkpoint_dir.clear();

  const AblationResult res = run_ablation(cfg.model, cfg.schedule, variant, seeds, train, test);
  for (const auto& run : res.runs)
    std::printf("seed %llu  baseline MAE %.2f ms median %.2f ms diag %.3f | %s MAE %.2f ms median %.2f ms diag %.3f\n",
                static_cast<unsigned long long>(run.seed), run.baseline.summary.mae_ms,
                run.baseline.summary.median_ms, run.baseline.mean_diagonality, variant.c_str(),
                run.variant.summary.mae_ms, run.variant.summary.median_ms, run.variant.mean_diagonality);
  if (!report_path.empty()) write_text(report_path, ablation_json(res).dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural forced alignment with bidirectional attention"};
  app.require_subcommand(1);

  std::string spec, out, config, corpus, ckpt, pred, ref, report, resume, variant = "w/o DAL";
  std::size_t seeds_n = 20;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  double test_fraction = 0.1;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic parallel corpus");
  gen->add_option("--spec", spec, "synthetic spec (JSON); defaults when omitted");
  gen->add_option("--out", out, "corpus file to write")->required();

  auto* train = app.add_subcommand("train", "run both training stages");
  train->add_option("--config", config, "JSON with \"model\" and \"schedule\" sections");
  train->add_option("--corpus", corpus, "training corpus")->required();
  train->add_option("--out", out, "checkpoint directory")->required();
  train->add_option("--resume", resume, "continue from a checkpoint written by train");

  auto* align = app.add_subcommand("align", "predict boundaries, write TextGrids and attention CSVs");
  align->add_option("--ckpt", ckpt, "checkpoint")->required();
  align->add_option("--corpus", corpus, "corpus to align")->required();
  align->add_option("--out", out, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "score predictions against reference boundaries");
  eval->add_option("--pred", pred, "directory written by align (or a predictions.json)")->required();
  eval->add_option("--ref", ref, "reference corpus")->required();
  eval->add_option("--report", report, "JSON report to write");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference checks of every differentiable op");
  grad->add_option("--seeds", seeds_n, "random cases per op")->check(CLI::PositiveNumber);

  auto* ablate = app.add_subcommand("ablate", "train baseline and one ablated variant on identical seeds");
  ablate->add_option("--variant", variant, "w/o EPEs | TPEs | SPEs | ASR | TTS | DAL")->required();
  ablate->add_option("--config", config, "JSON with \"model\" and \"schedule\" sections");
  ablate->add_option("--corpus", corpus, "corpus, split into train and test")->required();
  ablate->add_option("--seeds", seeds, "seeds")->delimiter(',');
  ablate->add_option("--test-fraction", test_fraction, "held-out share of the corpus");
  ablate->add_option("--report", report, "JSON report to write");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen_data(spec, out);
    if (*train) return cmd_train(config, corpus, out, resume);
    if (*align) return cmd_align(ckpt, corpus, out);
    if (*eval) return cmd_eval(pred, ref, report);
    if (*grad) return cmd_gradcheck(seeds_n);
    if (*ablate) return cmd_ablate(variant, config, corpus, seeds, test_fraction, report);
  } catch (const CheckFailed& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {  // configuration, input and shape errors
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const json::exception& e) {
    std::fprintf(stderr, "error: invalid configuration: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
