// SPDX-License-Identifier: Apache-2.0
//
// Adam optimization with decoupled weight decay, the teacher-forced training
// loop, and the mask/shuffle input augmentations used by the robustness
// studies. Training is single-writer over the parameters and bit-reproducible
// for a fixed seed.

#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "migen/bag.hpp"
#include "migen/model.hpp"
#include "migen/vocab.hpp"

namespace migen {

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int max_steps = 3000;
  int batch_size = 1;  // bags per optimizer step, gradient-accumulated
  double mask_ratio = 0.0;
  // When set, each sample draws its own mask ratio uniformly from
  // [0, mask_ratio] instead of using the fixed value (robustness training).
  bool mask_jitter = false;
  bool shuffle_instances = false;
  std::uint64_t seed = 1;
  int checkpoint_interval = 0;  // 0: only at the end
  int log_interval = 50;

  void validate() const;
};

struct AdamState {
  std::vector<std::vector<double>> m, v;  // first/second moments per parameter
  long step = 0;
};

AdamState init_adam_state(const ModelParams& params);

// One Adam update from the accumulated grads. Decoupled weight decay runs
// before the moment update. Non-finite grads abort, naming the parameter.
// `update_filter`, when set, restricts the update to matching parameters.
void adam_step(ModelParams& params, AdamState& state, const TrainConfig& cfg,
               const std::function<bool(const std::string&)>& update_filter = nullptr);

// Removes floor(ratio*M) instances uniformly at random; survivors keep their
// raster order and coords. At least one instance always remains.
InstanceBag apply_mask_augment(const InstanceBag& bag, double ratio,
                               std::mt19937_64& rng);

// Uniformly random permutation of the instance order; coords travel with
// their embeddings.
InstanceBag apply_shuffle_augment(const InstanceBag& bag, std::mt19937_64& rng);

struct TrainResult {
  std::vector<std::pair<int, double>> loss_trace;  // (step, mean batch loss)
  double final_loss = 0.0;
};

// Raised when the loss goes non-finite; previously written checkpoints are
// left in place by the caller.
struct TrainingDiverged : std::runtime_error {
  explicit TrainingDiverged(const std::string& what) : std::runtime_error(what) {}
};

using CheckpointSink = std::function<void(int step, const ModelParams&)>;

TrainResult train(ModelParams& params, const std::vector<InstanceBag>& bags,
                  const Vocab& vocab, const TrainConfig& cfg,
                  const CheckpointSink& sink = nullptr);

void write_loss_trace(const TrainResult& result, const std::filesystem::path& csv);

}  // namespace migen
