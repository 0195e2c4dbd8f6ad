#pragma once

// Run configuration plus the bodies of the command-line commands. Everything
// lives in the library so tests can drive a whole run without spawning
// processes; the cli binary is a thin argument-parsing shell around these.

#include "docre/checkpoint.hpp"
#include "docre/distill.hpp"
#include "docre/eval.hpp"

#include <string>

namespace docre {

struct RunPaths {
  std::string train;
  std::string dev;
  std::string test;
  std::string distant;
  std::string schema;
  std::string out_dir = "out";
};

// One file fully determines a run: corpora, model shape, objective,
// adaptation strategy and every stage's optimizer settings, plus the root
// seed that all stage and init seeds derive from.
struct RunConfig {
  RunPaths paths;
  ModelConfig model;
  AdaptStrategy strategy = AdaptStrategy::KD_MSE;
  double kd_weight = 1.0;
  StageConfig teacher{1e-5, 10, 4, 0.06};
  StageConfig pretrain{1e-5, 2, 4, 0.06};
  StageConfig finetune{1e-6, 10, 4, 0.06};
  OptimConfig optim;
  uint64_t seed = 1;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

// Reads and validates a config file. The DOCRE_OUT_DIR environment variable,
// when set, overrides paths.out_dir.
RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig& cfg);

// Writes a ready-to-run toy dataset (corpora, schema, config) under out_dir
// and returns the config path. Presets: "verb" (flat relation corpus),
// "composition" (two-hop chains), "skew" (10:1 head/tail frequency),
// "distant" (verb corpus plus a corrupted distant split).
std::string cmd_prepare(const std::string& preset, const std::string& out_dir,
                        uint64_t seed);

// Trains the teacher on the annotated train split; writes teacher.ckpt and
// teacher_metrics.json under out_dir, returns the checkpoint path.
std::string cmd_train_teacher(const RunConfig& cfg);

struct DistillResult {
  std::string checkpoint_path;   // pretrained_student.ckpt
  std::string store_path;        // empty for strategy na
  bool store_reused = false;     // an existing store passed the hash check
};

// Scores the distant split with the teacher (unless strategy na), persists
// the soft-label store and pretrains a fresh student on distant hard labels
// plus the distillation term. An existing store is reused only when its
// fingerprint matches the loaded teacher.
DistillResult cmd_distill(const RunConfig& cfg,
                          const std::string& teacher_checkpoint);

// Fine-tunes a checkpoint on the annotated train split; writes
// finetuned.ckpt and finetune_metrics.json, returns the checkpoint path.
std::string cmd_finetune(const RunConfig& cfg,
                         const std::string& checkpoint_path);

struct EvaluateResult {
  EvalReport report;
  std::string report_path;
  std::string predictions_path;
};

// split is "train", "dev", "test" or a corpus file path. Writes
// predictions_<split>.json and report_<split>.json under out_dir.
EvaluateResult cmd_evaluate(const RunConfig& cfg,
                            const std::string& checkpoint_path,
                            const std::string& split);

// Predictions only, for splits without gold labels. Returns the output path
// (out_path when given, otherwise predictions_<split>.json under out_dir).
std::string cmd_predict(const RunConfig& cfg,
                        const std::string& checkpoint_path,
                        const std::string& split,
                        const std::string& out_path = "");

// Renders the error breakdown of a prediction file against a gold corpus:
// counts, shares of the prediction-gold union, the conservation identity and
// up to `samples` example triples per category.
std::string cmd_error_report(const std::string& predictions_path,
                             const std::string& gold_path,
                             const std::string& schema_path, int samples = 5);

}  // namespace docre
