#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "scan/data.hpp"
#include "scan/model.hpp"

namespace scan {

struct TrainConfig {
  double lr0 = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0001;
  std::size_t epochs = 30;
  double lambda_id = 1.0;
  std::size_t batches_per_epoch = 0;  // 0 means ceil(training clips / batch size)
  std::uint64_t seed = 0;
  Variant variant = Variant::full;
  std::size_t width = 128;
  std::size_t clip_len = 10;
  std::size_t stride = 5;
  std::size_t ids_per_batch = 16;
  std::size_t clips_per_id = 2;
  double train_fraction = 0.5;  // identity split; the rest is held out for eval
  double oim_momentum = 0.5;
  double oim_temperature = 0.1;
};

void validate(const TrainConfig& cfg);

std::string train_config_json(const TrainConfig& cfg);
TrainConfig train_config_from_json_text(const std::string& text);

// lr0 * 0.001^floor(epoch / 10): step decay every ten epochs.
double lr_at(std::size_t epoch, const TrainConfig& cfg);

struct SgdState {
  LayerGrads fc0, fc1, fc2, fc3;  // velocity buffers
  static SgdState zeros_like(const ModelParams& m);
};

// v <- momentum * v + (grad + weight_decay * param); param <- param - lr * v.
// Biases are exempt from weight decay.
void sgd_step(ModelParams& params, const ModelGrads& grads, SgdState& state, double lr,
              const TrainConfig& cfg);

struct EpochStats {
  double mean_bce = 0.0;
  double mean_oim = 0.0;
  double pair_accuracy = 0.0;
};

struct TrainResult {
  ModelParams model;
  OimTable oim;
  std::vector<EpochStats> history;
  std::vector<std::uint32_t> train_identities;  // sorted
};

std::vector<std::uint32_t> dataset_identities(const Dataset& ds);

// Deterministic identity split: shuffle the sorted identity list with the
// seed, keep round(fraction * n) (at least 1) for training, sorted.
std::vector<std::uint32_t> train_split(const std::vector<std::uint32_t>& ids, double fraction,
                                       std::uint64_t seed);

TrainResult train(const Dataset& ds, const TrainConfig& cfg);

class CheckpointError : public std::runtime_error {
public:
  enum class Kind { bad_magic, bad_version, truncated, bad_checksum };
  CheckpointError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

private:
  Kind kind_;
};

struct Checkpoint {
  ModelParams model;
  TrainConfig config;
};

// Binary checkpoint: "SCNC", version u32, config echo as a length-prefixed
// UTF-8 JSON blob, the four layers' dims and float64 payloads, CRC32 footer.
void write_checkpoint(const std::filesystem::path& path, const ModelParams& model,
                      const TrainConfig& cfg);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace scan
