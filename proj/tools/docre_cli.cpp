#include "docre/pipeline.hpp"

#include "CLI11.hpp"

#include <Eigen/Core>

#include <cstdio>
#include <cstdlib>
#include <iostream>

int main(int argc, char** argv) {
  if (const char* threads = std::getenv("DOCRE_THREADS");
      threads != nullptr && threads[0] != '\0') {
    Eigen::setNbThreads(std::max(1, std::atoi(threads)));
  }

  CLI::App app{"document-level relation extraction pipeline"};
  app.require_subcommand(1);

  std::string preset = "verb";
  std::string out_dir;
  uint64_t seed = 1;
  std::string config_path;
  std::string checkpoint;
  std::string split = "dev";
  std::string out_path;
  std::string predictions_path, gold_path, schema_path;
  int samples = 5;
  bool binary = false;

  auto* prepare =
      app.add_subcommand("prepare", "write a toy dataset plus a run config");
  prepare->add_option("--preset", preset,
                      "verb, composition, skew or distant");
  prepare->add_option("--out", out_dir, "output directory")->required();
  prepare->add_option("--seed", seed, "generation seed");
  prepare->callback([&] {
    std::string cfg = docre::cmd_prepare(preset, out_dir, seed);
    std::printf("config: %s\n", cfg.c_str());
  });

  auto* train =
      app.add_subcommand("train-teacher", "train a teacher on the train split");
  train->add_option("--config", config_path, "run config file")->required();
  train->callback([&] {
    std::string ckpt =
        docre::cmd_train_teacher(docre::load_run_config(config_path));
    std::printf("checkpoint: %s\n", ckpt.c_str());
  });

  auto* distill = app.add_subcommand(
      "distill", "score the distant split and pretrain a student");
  distill->add_option("--config", config_path, "run config file")->required();
  distill->add_option("--teacher", checkpoint, "teacher checkpoint")
      ->required();
  distill->callback([&] {
    docre::DistillResult r =
        docre::cmd_distill(docre::load_run_config(config_path), checkpoint);
    if (!r.store_path.empty()) {
      std::printf("soft labels: %s%s\n", r.store_path.c_str(),
                  r.store_reused ? " (reused)" : "");
    }
    std::printf("checkpoint: %s\n", r.checkpoint_path.c_str());
  });

  auto* ft =
      app.add_subcommand("finetune", "fine-tune a checkpoint on the train split");
  ft->add_option("--config", config_path, "run config file")->required();
  ft->add_option("--checkpoint", checkpoint, "starting checkpoint")
      ->required();
  ft->callback([&] {
    std::string ckpt =
        docre::cmd_finetune(docre::load_run_config(config_path), checkpoint);
    std::printf("checkpoint: %s\n", ckpt.c_str());
  });

  auto* eval = app.add_subcommand("evaluate", "score a checkpoint on a split");
  eval->add_option("--config", config_path, "run config file")->required();
  eval->add_option("--checkpoint", checkpoint, "checkpoint to score")
      ->required();
  eval->add_option("--split", split, "train, dev, test or a corpus path");
  eval->add_flag("--binary", binary, "also print the pair-retrieval line");
  eval->callback([&] {
    docre::EvaluateResult r = docre::cmd_evaluate(
        docre::load_run_config(config_path), checkpoint, split);
    std::fputs(docre::report_to_table(r.report).c_str(), stdout);
    if (binary) {
      std::printf("binary pair retrieval: P %.4f R %.4f F1 %.4f\n",
                  r.report.binary.precision, r.report.binary.recall,
                  r.report.binary.f1);
    }
    std::printf("predictions: %s\nreport: %s\n", r.predictions_path.c_str(),
                r.report_path.c_str());
  });

  auto* predict =
      app.add_subcommand("predict", "write predictions without scoring");
  predict->add_option("--config", config_path, "run config file")->required();
  predict->add_option("--checkpoint", checkpoint, "checkpoint to score")
      ->required();
  predict->add_option("--split", split, "train, dev, test or a corpus path");
  predict->add_option("--out", out_path, "prediction file path");
  predict->callback([&] {
    std::string path = docre::cmd_predict(docre::load_run_config(config_path),
                                          checkpoint, split, out_path);
    std::printf("predictions: %s\n", path.c_str());
  });

  auto* errors = app.add_subcommand(
      "error-report", "categorize predictions against a gold corpus");
  errors->add_option("--predictions", predictions_path, "prediction file")
      ->required();
  errors->add_option("--gold", gold_path, "gold corpus file")->required();
  errors->add_option("--schema", schema_path, "relation schema file")
      ->required();
  errors->add_option("--samples", samples, "sample triples per category");
  errors->callback([&] {
    std::fputs(docre::cmd_error_report(predictions_path, gold_path,
                                       schema_path, samples)
                   .c_str(),
               stdout);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const docre::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
