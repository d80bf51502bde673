#ifndef VISAGE_TRAINER_HPP
#define VISAGE_TRAINER_HPP

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "visage/dataset.hpp"
#include "visage/model.hpp"

namespace visage {

struct TrainConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int max_epochs = 150;
  int batch_size = 32;
  std::uint64_t seed = 0;
  /// Early stop once the epoch's validation metric reaches this value:
  /// rmse at or below it (age), accuracy at or above it (gender). NaN
  /// disables the check and runs all max_epochs.
  double stop_at_val = std::numeric_limits<double>::quiet_NaN();

  void validate() const;
};

/// One Adam step for a single weight, all in double precision. m and v
/// are the biased first/second moment accumulators, t the 1-based step.
double adam_update(double theta, double g, double& m, double& v, std::int64_t t,
                   const TrainConfig& cfg);

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::int64_t t = 0;

  void init(const Params& params);
};

/// Applies one Adam step to every tensor in params from the matching
/// gradient tensors. Orders must line up entry by entry.
void adam_step(Params& params, const std::vector<Tensor>& grads, AdamState& state,
               const TrainConfig& cfg);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0;
  double val_metric = 0;  // rmse in years (age) or accuracy (gender)
  double seconds = 0;
};

struct TrainLog {
  std::vector<EpochStats> epochs;
};

std::string train_log_to_csv(const TrainLog& log);
void write_train_log(const std::string& path, const TrainLog& log);

struct TrainResult {
  Params params;
  TrainLog log;
};

/// Full training loop: shuffled mini-batches, mse (age) or cross-entropy
/// (gender) loss, Adam, one validation pass per epoch. Throws
/// DivergenceError when the loss stops being finite.
TrainResult train(Task task, const ModelSpec& spec, const Manifest& train_set,
                  const Manifest& val_set, const TrainConfig& cfg);

struct GridCell {
  double lr = 0;
  int batch_size = 0;
  double val_metric = 0;
  int epochs_run = 0;
  double seconds = 0;
  bool failed = false;
  std::string error;
};

struct GridResult {
  std::vector<GridCell> cells;
  std::size_t best = 0;  // index into cells
};

/// Trains one model per (lr, batch size) pair. A cell whose run throws is
/// recorded as failed; if every cell fails, throws SearchExhaustedError.
/// Best = lowest final rmse (age) or highest final accuracy (gender),
/// earliest cell on ties.
GridResult grid_search(Task task, const ModelSpec& spec, const Manifest& train_set,
                       const Manifest& val_set, const TrainConfig& base,
                       const std::vector<double>& lrs, const std::vector<int>& batch_sizes);

struct Checkpoint {
  ModelSpec spec;
  Params params;
  TrainConfig config;
  int epoch = 0;
  std::uint64_t seed = 0;
};

/// Binary checkpoint file: 4-byte magic "FCKP", u16 version, u32 JSON
/// header length, JSON header, then raw little-endian f32 tensor data at
/// the offsets the header lists.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace visage

#endif
