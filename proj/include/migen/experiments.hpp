// SPDX-License-Identifier: Apache-2.0
//
// Command implementations behind the CLI: dataset synthesis, training,
// generation, evaluation, and the ablation/robustness harnesses. Every
// command echoes its resolved configuration into an append-only
// run_manifest.jsonl in its output directory and never mutates its input
// dataset directory.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "migen/bag.hpp"
#include "migen/metrics.hpp"
#include "migen/model.hpp"
#include "migen/train.hpp"

namespace migen {

// ---- key=value config files ----

using KvConfig = std::map<std::string, std::string>;

KvConfig load_kv_config(const std::filesystem::path& file);  // '#' comments
std::string kv_get(const KvConfig& kv, const std::string& key,
                   const std::string& fallback);

void append_run_manifest(const std::filesystem::path& out_dir,
                         const std::string& command, const KvConfig& resolved,
                         const std::vector<std::string>& artifacts,
                         double duration_seconds);

// ---- commands ----

struct SynthCommand {
  SynthConfig synth;
  std::filesystem::path out_dir;
  bool force = false;
};
void run_synth(const SynthCommand& cmd, std::ostream* log = nullptr);

struct TrainCommand {
  std::filesystem::path data_dir, out_dir;
  std::filesystem::path resume;  // empty: fresh initialization
  ModelConfig model;             // vocab/input sizes are filled from the data
  TrainConfig train;
  std::uint64_t init_seed = 0;
};
TrainResult run_train(const TrainCommand& cmd, std::ostream* log = nullptr);

struct GenerateCommand {
  std::filesystem::path checkpoint, data_dir, out_dir;
  std::string split = "test";
  int beam = 3;
  double length_penalty_alpha = 0.0;
  int max_len = 0;  // 0: model limit
};
std::vector<GeneratedReport> run_generate(const GenerateCommand& cmd,
                                          std::ostream* log = nullptr);

std::vector<GeneratedReport> load_generated_file(const std::filesystem::path& file);

struct EvaluateCommand {
  std::filesystem::path generated_file, data_dir, out_dir;
};
EvalReport run_evaluate(const EvaluateCommand& cmd, std::ostream* log = nullptr);

struct MaskSweepCommand {
  std::filesystem::path data_dir, out_dir;
  std::vector<std::filesystem::path> checkpoints;  // one curve per checkpoint
  std::vector<double> ratios{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::string split = "test";
  std::uint64_t seed = 1;
};
struct SweepRow {
  double ratio = 0;
  std::string model;
  double bleu_1 = 0;
  double quadrant_accuracy = 0;
};
std::vector<SweepRow> run_mask_sweep(const MaskSweepCommand& cmd,
                                     std::ostream* log = nullptr);

struct AblationCommand {
  std::filesystem::path data_dir, out_dir;
  ModelConfig base_model;  // kernel set / pam_mode varied per row
  TrainConfig train;
  std::uint64_t init_seed = 0;
};
struct AblationRow {
  std::string variant;
  double bleu_1 = 0, bleu_4 = 0;
  double slot_subtype = 0, slot_diameter = 0, slot_quadrant = 0;
};
// Variant grid: off, k3, k7, last_layer_only, k3_5_7, k3_7_13 — one shared
// dataset, identical seed and schedule per variant.
std::vector<AblationRow> run_pam_ablation(const AblationCommand& cmd,
                                          std::ostream* log = nullptr);

struct ShuffleStudyCommand {
  std::filesystem::path data_dir, out_dir;
  ModelConfig base_model;
  TrainConfig train;
  double mask_ratio = 0.3;  // for the shuffle+mask row
  std::uint64_t init_seed = 0;
};
struct ShuffleRow {
  std::string augment;  // none | shuffle | shuffle_mask
  std::string pam;      // hierarchical | off
  double bleu_1 = 0;
};
std::vector<ShuffleRow> run_shuffle_study(const ShuffleStudyCommand& cmd,
                                          std::ostream* log = nullptr);

struct ClassifyCommand {
  std::filesystem::path checkpoint, data_dir, out_dir;
  std::string mode = "finetune";  // finetune | semantic
  TrainConfig finetune;
  bool head_only = false;
  int beam = 3;
  std::uint64_t head_seed = 0;
};
ClassificationReport run_classify(const ClassifyCommand& cmd,
                                  std::ostream* log = nullptr);

}  // namespace migen
