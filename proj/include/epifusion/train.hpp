#pragma once

#include <string>
#include <vector>

#include "epifusion/checkpoint.hpp"
#include "epifusion/dataset_io.hpp"
#include "epifusion/model.hpp"

namespace epifusion {

struct TrainConfig {
  ModelConfig model;
  int epochs = 20;
  double lr = 1e-3;
  std::vector<int> milestones = {10, 15};  // lr multiplies by lr_ratio at these epochs (1-based)
  double lr_ratio = 0.1;
  int batch = 8;
  uint64_t seed = 0;
  int threads = 0;  // 0 = hardware concurrency

  void check() const;
};

// Plain "key = value" config file; '#' starts a comment.
TrainConfig parse_train_config_text(const std::string& text);
TrainConfig read_train_config(const std::string& path);
std::string train_config_to_text(const TrainConfig& cfg);
void write_train_config(const std::string& path, const TrainConfig& cfg);

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double hm_loss = 0.0;
  double lpos = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  Parameters params;
  std::vector<EpochStats> epochs;
};

// Adam over the parameter registry, deterministic merge order across the
// batch worker threads. Throws NonFinite (with the step index) if the loss
// or a gradient blows up.
TrainResult train(const TrainConfig& cfg, const Dataset& dataset);

std::string epoch_csv(const std::vector<EpochStats>& stats);
void write_epoch_csv(const std::string& path, const std::vector<EpochStats>& stats);

}  // namespace epifusion
