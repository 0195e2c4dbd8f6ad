#pragma once

// Model persistence: a small versioned binary container holding the config,
// vocabulary, stage tag, step count and every named tensor. Round-trips are
// bit-exact; loading rebuilds the model and overwrites its parameters.

#include "docre/model.hpp"

#include <string>

namespace docre {

struct CheckpointMeta {
  std::string stage;  // "teacher", "pretrained_student", "finetuned", ...
  long long step = 0;
};

void save_checkpoint(const std::string& path, Model& model,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
  Model model;
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace docre
