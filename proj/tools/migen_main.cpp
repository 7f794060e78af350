// SPDX-License-Identifier: Apache-2.0
//
// migen command line. Subcommands: synth, train, generate, evaluate,
// mask-sweep, pam-ablate, shuffle-study, classify. Values resolve as
// built-in defaults, then the --config key=value file, then explicit flags.
// Exit codes: 0 success, 1 user/config error, 2 internal invariant violation.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "migen/experiments.hpp"

using namespace migen;

namespace {

template <typename T>
T parse_value(const std::string& s) {
  std::istringstream is(s);
  T v{};
  is >> v;
  if (is.fail()) throw std::invalid_argument("cannot parse config value '" + s + "'");
  return v;
}

template <>
std::string parse_value<std::string>(const std::string& s) {
  return s;
}

template <>
bool parse_value<bool>(const std::string& s) {
  if (s == "1" || s == "true" || s == "yes") return true;
  if (s == "0" || s == "false" || s == "no") return false;
  throw std::invalid_argument("cannot parse boolean config value '" + s + "'");
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse_value<int>(item));
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse_value<double>(item));
  }
  return out;
}

// flag > config-file key > built-in default (the variable's initial value)
template <typename T>
void apply_kv(CLI::App* cmd, const std::string& flag, const KvConfig& kv,
              const std::string& key, T& var) {
  if (cmd->count(flag) > 0) return;
  auto it = kv.find(key);
  if (it != kv.end()) var = parse_value<T>(it->second);
}

struct ModelFlags {
  int n_layers = 3;
  int n_heads = 4;
  int d_model = 512;
  int d_ff = 2048;
  std::string kernels = "3,7,13";
  std::string pam_mode = "hierarchical";
  bool pam_full_conv = false;
  double dropout = 0.0;

  void attach(CLI::App* cmd) {
    cmd->add_option("--n-layers", n_layers, "encoder/decoder depth");
    cmd->add_option("--n-heads", n_heads, "attention heads");
    cmd->add_option("--d-model", d_model, "embedding size");
    cmd->add_option("--d-ff", d_ff, "feed-forward width");
    cmd->add_option("--kernels", kernels, "PAM kernel sizes, comma separated");
    cmd->add_option("--pam-mode", pam_mode, "hierarchical|last_layer_only|off");
    cmd->add_flag("--pam-full-conv", pam_full_conv, "full instead of depthwise PAM convs");
    cmd->add_option("--dropout", dropout, "dropout rate");
  }
  void resolve(CLI::App* cmd, const KvConfig& kv) {
    apply_kv(cmd, "--n-layers", kv, "n_layers", n_layers);
    apply_kv(cmd, "--n-heads", kv, "n_heads", n_heads);
    apply_kv(cmd, "--d-model", kv, "d_model", d_model);
    apply_kv(cmd, "--d-ff", kv, "d_ff", d_ff);
    apply_kv(cmd, "--kernels", kv, "pam_kernels", kernels);
    apply_kv(cmd, "--pam-mode", kv, "pam_mode", pam_mode);
    apply_kv(cmd, "--pam-full-conv", kv, "pam_full_conv", pam_full_conv);
    apply_kv(cmd, "--dropout", kv, "dropout", dropout);
  }
  ModelConfig to_config() const {
    ModelConfig m;
    m.n_layers = n_layers;
    m.n_heads = n_heads;
    m.d_model = d_model;
    m.d_ff = d_ff;
    m.pam_kernels = parse_int_list(kernels);
    m.pam_mode = pam_mode_from_string(pam_mode);
    m.pam_depthwise = !pam_full_conv;
    m.dropout_rate = dropout;
    return m;
  }
};

struct TrainFlags {
  double lr = 1e-4;
  double weight_decay = 5e-5;
  int max_steps = 3000;
  int batch_size = 1;
  double mask_ratio = 0.0;
  bool mask_jitter = false;
  bool shuffle = false;
  std::uint64_t seed = 1;
  int checkpoint_interval = 0;
  int log_interval = 50;

  void attach(CLI::App* cmd) {
    cmd->add_option("--lr", lr, "Adam learning rate");
    cmd->add_option("--weight-decay", weight_decay, "decoupled weight decay");
    cmd->add_option("--max-steps", max_steps, "optimizer steps");
    cmd->add_option("--batch-size", batch_size, "bags per step (accumulated)");
    cmd->add_option("--mask-ratio", mask_ratio, "train-time instance mask ratio");
    cmd->add_flag("--mask-jitter", mask_jitter, "draw each sample's ratio from [0, mask-ratio]");
    cmd->add_flag("--shuffle", shuffle, "shuffle instance order per sample");
    cmd->add_option("--seed", seed, "training seed");
    cmd->add_option("--checkpoint-interval", checkpoint_interval, "steps between checkpoints");
    cmd->add_option("--log-interval", log_interval, "steps between trace points");
  }
  void resolve(CLI::App* cmd, const KvConfig& kv) {
    apply_kv(cmd, "--lr", kv, "lr", lr);
    apply_kv(cmd, "--weight-decay", kv, "weight_decay", weight_decay);
    apply_kv(cmd, "--max-steps", kv, "max_steps", max_steps);
    apply_kv(cmd, "--batch-size", kv, "batch_size", batch_size);
    apply_kv(cmd, "--mask-ratio", kv, "mask_ratio", mask_ratio);
    apply_kv(cmd, "--mask-jitter", kv, "mask_jitter", mask_jitter);
    apply_kv(cmd, "--shuffle", kv, "shuffle_instances", shuffle);
    apply_kv(cmd, "--seed", kv, "seed", seed);
    apply_kv(cmd, "--checkpoint-interval", kv, "checkpoint_interval", checkpoint_interval);
    apply_kv(cmd, "--log-interval", kv, "log_interval", log_interval);
  }
  TrainConfig to_config() const {
    TrainConfig t;
    t.learning_rate = lr;
    t.weight_decay = weight_decay;
    t.max_steps = max_steps;
    t.batch_size = batch_size;
    t.mask_ratio = mask_ratio;
    t.mask_jitter = mask_jitter;
    t.shuffle_instances = shuffle;
    t.seed = seed;
    t.checkpoint_interval = checkpoint_interval;
    t.log_interval = log_interval;
    return t;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MI-Gen: bag-of-instances report generation"};
  app.require_subcommand(1);

  std::string config_file;

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic spatial dataset");
  std::string synth_out;
  bool synth_force = false;
  SynthConfig sc;
  synth->add_option("--config", config_file, "key=value config file");
  synth->add_option("--out", synth_out, "output dataset directory")->required();
  synth->add_flag("--force", synth_force, "overwrite a non-empty directory");
  synth->add_option("--seed", sc.seed, "generator seed");
  synth->add_option("--grid-side", sc.grid_side, "raster side length");
  synth->add_option("--embed-dim", sc.embed_dim, "instance embedding width");
  synth->add_option("--tissue-types", sc.n_tissue_types, "background base vectors");
  synth->add_option("--subtypes", sc.subtype_count, "tumor subtype count");
  synth->add_option("--min-radius", sc.min_radius, "smallest blob radius");
  synth->add_option("--max-radius", sc.max_radius, "largest blob radius");
  synth->add_option("--noise-sigma", sc.noise_sigma, "embedding noise level");
  synth->add_option("--train-bags", sc.n_train, "training bags");
  synth->add_option("--val-bags", sc.n_val, "validation bags");
  synth->add_option("--test-bags", sc.n_test, "test bags");
  synth->add_option("--min-freq", sc.min_freq, "vocab frequency threshold");

  // train
  auto* train_cmd = app.add_subcommand("train", "teacher-forced training");
  std::string train_data, train_out, train_resume;
  std::uint64_t init_seed = 0;
  ModelFlags train_model;
  TrainFlags train_flags;
  train_cmd->add_option("--config", config_file, "key=value config file");
  train_cmd->add_option("--data", train_data, "dataset directory")->required();
  train_cmd->add_option("--out", train_out, "output directory")->required();
  train_cmd->add_option("--resume", train_resume, "checkpoint to resume from");
  train_cmd->add_option("--init-seed", init_seed, "parameter init seed");
  train_model.attach(train_cmd);
  train_flags.attach(train_cmd);

  // generate
  auto* gen = app.add_subcommand("generate", "decode reports for a split");
  GenerateCommand gen_cmd;
  std::string gen_ckpt, gen_data, gen_out;
  gen->add_option("--checkpoint", gen_ckpt, "trained checkpoint")->required();
  gen->add_option("--data", gen_data, "dataset directory")->required();
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--split", gen_cmd.split, "train|val|test");
  gen->add_option("--beam", gen_cmd.beam, "beam size (1 = greedy)");
  gen->add_option("--alpha", gen_cmd.length_penalty_alpha, "length penalty alpha");
  gen->add_option("--max-len", gen_cmd.max_len, "generation cap (0 = model limit)");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "score a generated-reports file");
  std::string eval_gen, eval_data, eval_out;
  eval->add_option("--generated", eval_gen, "generated.json from the generate step")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--out", eval_out, "output directory")->required();

  // mask-sweep
  auto* sweep = app.add_subcommand("mask-sweep", "test-time masking robustness curves");
  std::string sweep_data, sweep_out, sweep_ratios = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9";
  std::vector<std::string> sweep_ckpts;
  std::string sweep_split = "test";
  std::uint64_t sweep_seed = 1;
  sweep->add_option("--data", sweep_data, "dataset directory")->required();
  sweep->add_option("--out", sweep_out, "output directory")->required();
  sweep->add_option("--checkpoint", sweep_ckpts, "checkpoint(s), one curve each")->required();
  sweep->add_option("--ratios", sweep_ratios, "comma-separated mask ratios");
  sweep->add_option("--split", sweep_split, "split to mask");
  sweep->add_option("--seed", sweep_seed, "mask sampling seed");

  // pam-ablate
  auto* ablate = app.add_subcommand("pam-ablate", "PAM structure ablation table");
  std::string ablate_data, ablate_out;
  std::uint64_t ablate_init_seed = 0;
  ModelFlags ablate_model;
  TrainFlags ablate_train;
  ablate->add_option("--config", config_file, "key=value config file");
  ablate->add_option("--data", ablate_data, "dataset directory")->required();
  ablate->add_option("--out", ablate_out, "output directory")->required();
  ablate->add_option("--init-seed", ablate_init_seed, "parameter init seed");
  ablate_model.attach(ablate);
  ablate_train.attach(ablate);

  // shuffle-study
  auto* shuffle = app.add_subcommand("shuffle-study", "train-time shuffling study");
  std::string shuffle_data, shuffle_out;
  double study_mask_ratio = 0.3;
  std::uint64_t shuffle_init_seed = 0;
  ModelFlags shuffle_model;
  TrainFlags shuffle_train;
  shuffle->add_option("--config", config_file, "key=value config file");
  shuffle->add_option("--data", shuffle_data, "dataset directory")->required();
  shuffle->add_option("--out", shuffle_out, "output directory")->required();
  shuffle->add_option("--study-mask-ratio", study_mask_ratio, "mask ratio of the shuffle+mask row");
  shuffle->add_option("--init-seed", shuffle_init_seed, "parameter init seed");
  shuffle_model.attach(shuffle);
  shuffle_train.attach(shuffle);

  // classify
  auto* classify = app.add_subcommand("classify", "CLS fine-tuning or semantic extraction");
  ClassifyCommand cls_cmd;
  std::string cls_ckpt, cls_data, cls_out;
  TrainFlags cls_train;
  cls_train.lr = 1e-4;
  cls_train.max_steps = 500;
  classify->add_option("--checkpoint", cls_ckpt, "pretrained checkpoint")->required();
  classify->add_option("--data", cls_data, "dataset directory")->required();
  classify->add_option("--out", cls_out, "output directory")->required();
  classify->add_option("--mode", cls_cmd.mode, "finetune|semantic");
  classify->add_flag("--head-only", cls_cmd.head_only, "freeze everything but the CLS head");
  classify->add_option("--beam", cls_cmd.beam, "beam size for semantic mode");
  classify->add_option("--head-seed", cls_cmd.head_seed, "classifier head init seed");
  cls_train.attach(classify);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << e.what() << "\n";
    return 1;
  }

  try {
    KvConfig kv;
    if (!config_file.empty()) kv = load_kv_config(config_file);

    if (synth->parsed()) {
      apply_kv(synth, "--seed", kv, "seed", sc.seed);
      apply_kv(synth, "--grid-side", kv, "grid_side", sc.grid_side);
      apply_kv(synth, "--embed-dim", kv, "embed_dim", sc.embed_dim);
      apply_kv(synth, "--tissue-types", kv, "n_tissue_types", sc.n_tissue_types);
      apply_kv(synth, "--subtypes", kv, "subtype_count", sc.subtype_count);
      apply_kv(synth, "--min-radius", kv, "min_radius", sc.min_radius);
      apply_kv(synth, "--max-radius", kv, "max_radius", sc.max_radius);
      apply_kv(synth, "--noise-sigma", kv, "noise_sigma", sc.noise_sigma);
      apply_kv(synth, "--train-bags", kv, "n_train", sc.n_train);
      apply_kv(synth, "--val-bags", kv, "n_val", sc.n_val);
      apply_kv(synth, "--test-bags", kv, "n_test", sc.n_test);
      apply_kv(synth, "--min-freq", kv, "min_freq", sc.min_freq);
      run_synth({sc, synth_out, synth_force}, &std::cout);
    } else if (train_cmd->parsed()) {
      train_model.resolve(train_cmd, kv);
      train_flags.resolve(train_cmd, kv);
      apply_kv(train_cmd, "--init-seed", kv, "init_seed", init_seed);
      TrainCommand cmd;
      cmd.data_dir = train_data;
      cmd.out_dir = train_out;
      cmd.resume = train_resume;
      cmd.model = train_model.to_config();
      cmd.train = train_flags.to_config();
      cmd.init_seed = init_seed;
      run_train(cmd, &std::cout);
    } else if (gen->parsed()) {
      gen_cmd.checkpoint = gen_ckpt;
      gen_cmd.data_dir = gen_data;
      gen_cmd.out_dir = gen_out;
      run_generate(gen_cmd, &std::cout);
    } else if (eval->parsed()) {
      run_evaluate({eval_gen, eval_data, eval_out}, &std::cout);
    } else if (sweep->parsed()) {
      MaskSweepCommand cmd;
      cmd.data_dir = sweep_data;
      cmd.out_dir = sweep_out;
      for (const auto& c : sweep_ckpts) cmd.checkpoints.emplace_back(c);
      cmd.ratios = parse_double_list(sweep_ratios);
      cmd.split = sweep_split;
      cmd.seed = sweep_seed;
      run_mask_sweep(cmd, &std::cout);
    } else if (ablate->parsed()) {
      ablate_model.resolve(ablate, kv);
      ablate_train.resolve(ablate, kv);
      apply_kv(ablate, "--init-seed", kv, "init_seed", ablate_init_seed);
      AblationCommand cmd;
      cmd.data_dir = ablate_data;
      cmd.out_dir = ablate_out;
      cmd.base_model = ablate_model.to_config();
      cmd.train = ablate_train.to_config();
      cmd.init_seed = ablate_init_seed;
      run_pam_ablation(cmd, &std::cout);
    } else if (shuffle->parsed()) {
      shuffle_model.resolve(shuffle, kv);
      shuffle_train.resolve(shuffle, kv);
      apply_kv(shuffle, "--init-seed", kv, "init_seed", shuffle_init_seed);
      ShuffleStudyCommand cmd;
      cmd.data_dir = shuffle_data;
      cmd.out_dir = shuffle_out;
      cmd.base_model = shuffle_model.to_config();
      cmd.train = shuffle_train.to_config();
      cmd.mask_ratio = study_mask_ratio;
      cmd.init_seed = shuffle_init_seed;
      run_shuffle_study(cmd, &std::cout);
    } else if (classify->parsed()) {
      cls_cmd.checkpoint = cls_ckpt;
      cls_cmd.data_dir = cls_data;
      cls_cmd.out_dir = cls_out;
      cls_cmd.finetune = cls_train.to_config();
      run_classify(cls_cmd, &std::cout);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::logic_error& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
