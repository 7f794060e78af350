// SPDX-License-Identifier: Apache-2.0
//
// End-to-end tests of the migen binary (path supplied via MIGEN_CLI by
// ctest) plus in-process checks of the command layer's contracts.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <doctest.h>
#include <json.hpp>

#include "migen/decode.hpp"
#include "migen/experiments.hpp"

using namespace migen;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string output;
};

const char* cli_path() {
  const char* path = std::getenv("MIGEN_CLI");
  REQUIRE_MESSAGE(path != nullptr, "MIGEN_CLI must point at the migen binary");
  return path;
}

CliResult run_cli(const std::string& args) {
  const fs::path out = fs::temp_directory_path() / "migen_cli_out.txt";
  const std::string command =
      std::string(cli_path()) + " " + args + " > " + out.string() + " 2>&1";
  const int status = std::system(command.c_str());
  CliResult res;
  res.exit_code = status < 0 ? status : WEXITSTATUS(status);
  std::ifstream is(out);
  res.output.assign((std::istreambuf_iterator<char>(is)), {});
  return res;
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// every regular file except the run manifest, as (relative path, bytes)
std::map<std::string, std::string> dir_snapshot(const fs::path& root,
                                                bool keep_manifest = true) {
  std::map<std::string, std::string> snap;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), root).string();
    if (!keep_manifest && rel == "run_manifest.jsonl") continue;
    std::ifstream is(entry.path(), std::ios::binary);
    snap[rel].assign((std::istreambuf_iterator<char>(is)), {});
  }
  return snap;
}

const std::string kTinySynthArgs =
    " --grid-side 4 --embed-dim 8 --max-radius 1 --train-bags 6 --val-bags 0 "
    "--test-bags 3 --seed 77";

}  // namespace

TEST_CASE("cli: synth is byte-identical across reruns with one seed") {
  fs::path a = fresh_dir("migen_cli_synth_a");
  fs::path b = fresh_dir("migen_cli_synth_b");
  CHECK(run_cli("synth --out " + a.string() + kTinySynthArgs).exit_code == 0);
  CHECK(run_cli("synth --out " + b.string() + kTinySynthArgs).exit_code == 0);
  CHECK(dir_snapshot(a, false) == dir_snapshot(b, false));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("cli: synth refuses a non-empty directory without --force") {
  fs::path dir = fresh_dir("migen_cli_refuse");
  std::ofstream(dir / "existing.txt") << "x";
  CliResult r = run_cli("synth --out " + dir.string() + kTinySynthArgs);
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("--force") != std::string::npos);
  CHECK(run_cli("synth --out " + dir.string() + " --force" + kTinySynthArgs).exit_code == 0);
  fs::remove_all(dir);
}

TEST_CASE("cli: infeasible blob radius exits 1 and names the field") {
  fs::path dir = fresh_dir("migen_cli_radius");
  CliResult r = run_cli("synth --out " + dir.string() +
                        " --grid-side 4 --max-radius 9 --train-bags 2");
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("max_radius") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("cli: unknown split is a refusal") {
  fs::path data = fresh_dir("migen_cli_split_data");
  fs::path run = fresh_dir("migen_cli_split_run");
  REQUIRE(run_cli("synth --out " + data.string() + " --force" + kTinySynthArgs).exit_code == 0);
  REQUIRE(run_cli("train --data " + data.string() + " --out " + run.string() +
                  " --n-layers 1 --n-heads 2 --d-model 16 --d-ff 32 --kernels 3 "
                  "--max-steps 5 --lr 1e-3").exit_code == 0);
  CliResult r = run_cli("generate --checkpoint " + (run / "checkpoint.bin").string() +
                        " --data " + data.string() + " --out " + run.string() +
                        " --split holdout");
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("holdout") != std::string::npos);
  fs::remove_all(data);
  fs::remove_all(run);
}

TEST_CASE("cli: config file values apply and explicit flags win") {
  fs::path dir = fresh_dir("migen_cli_config");
  const fs::path cfg = dir / "synth.cfg";
  std::ofstream(cfg) << "# synth settings\n"
                     << "grid_side = 4\n"
                     << "embed_dim = 8\n"
                     << "max_radius = 1\n"
                     << "n_train = 5\n"
                     << "n_val = 0\n"
                     << "n_test = 2\n"
                     << "seed = 9\n";
  const fs::path out = dir / "data";
  CHECK(run_cli("synth --config " + cfg.string() + " --out " + out.string() +
                " --train-bags 3").exit_code == 0);
  Dataset ds = load_dataset(out);
  CHECK(ds.train.size() == 3);  // flag beat the config's 5
  CHECK(ds.test.size() == 2);   // config beat the built-in default
  CHECK(ds.train[0].embed_dim == 8);
  fs::remove_all(dir);
}

TEST_CASE("cli: help exits 0") {
  CHECK(run_cli("--help").exit_code == 0);
  CHECK(run_cli("synth --help").exit_code == 0);
}

TEST_CASE("commands: train with zero steps writes the initialization") {
  fs::path data = fresh_dir("migen_cmd_zero_data");
  fs::path run = fresh_dir("migen_cmd_zero_run");
  SynthConfig sc;
  sc.grid_side = 4;
  sc.embed_dim = 8;
  sc.max_radius = 1;
  sc.n_train = 4;
  sc.n_val = 0;
  sc.n_test = 2;
  sc.seed = 3;
  run_synth({sc, data}, nullptr);

  TrainCommand cmd;
  cmd.data_dir = data;
  cmd.out_dir = run;
  cmd.model.n_layers = 1;
  cmd.model.n_heads = 2;
  cmd.model.d_model = 16;
  cmd.model.d_ff = 32;
  cmd.model.pam_kernels = {3};
  cmd.train.max_steps = 0;
  cmd.init_seed = 123;
  run_train(cmd, nullptr);

  Checkpoint ck = load_checkpoint(run / "checkpoint.bin");
  ModelParams expect = init_params(ck.params.config, 123);
  bool same = true;
  std::vector<const Tensor*> got;
  ck.params.for_each_param([&got](const std::string&, Tensor& t) { got.push_back(&t); });
  std::size_t i = 0;
  expect.for_each_param([&](const std::string&, Tensor& t) {
    if (t.data() != got[i]->data()) same = false;
    ++i;
  });
  CHECK(same);
  fs::remove_all(data);
  fs::remove_all(run);
}

TEST_CASE("commands: generate with beam 1 equals the greedy harness, reruns identical") {
  fs::path data = fresh_dir("migen_cmd_gen_data");
  fs::path run = fresh_dir("migen_cmd_gen_run");
  SynthConfig sc;
  sc.grid_side = 4;
  sc.embed_dim = 8;
  sc.max_radius = 1;
  sc.n_train = 6;
  sc.n_val = 0;
  sc.n_test = 3;
  sc.seed = 5;
  run_synth({sc, data}, nullptr);
  TrainCommand tcmd;
  tcmd.data_dir = data;
  tcmd.out_dir = run;
  tcmd.model.n_layers = 1;
  tcmd.model.n_heads = 2;
  tcmd.model.d_model = 16;
  tcmd.model.d_ff = 32;
  tcmd.model.pam_kernels = {3};
  tcmd.train.max_steps = 40;
  tcmd.train.learning_rate = 1e-3;
  run_train(tcmd, nullptr);

  GenerateCommand gcmd;
  gcmd.checkpoint = run / "checkpoint.bin";
  gcmd.data_dir = data;
  gcmd.out_dir = run / "gen1";
  gcmd.beam = 1;
  const auto generated = run_generate(gcmd, nullptr);

  Dataset ds = load_dataset(data);
  Checkpoint ck = load_checkpoint(run / "checkpoint.bin");
  REQUIRE(generated.size() == ds.test.size());
  for (std::size_t i = 0; i < ds.test.size(); ++i) {
    CHECK(generated[i].text ==
          decode(greedy_decode(ck.params, ds.test[i], 0), ds.vocab));
  }

  gcmd.out_dir = run / "gen2";
  run_generate(gcmd, nullptr);
  CHECK(dir_snapshot(run / "gen1", false) == dir_snapshot(run / "gen2", false));
  fs::remove_all(data);
  fs::remove_all(run);
}

TEST_CASE("commands: empty split generates an empty file with header, evaluate handles it") {
  fs::path data = fresh_dir("migen_cmd_empty_data");
  fs::path run = fresh_dir("migen_cmd_empty_run");
  SynthConfig sc;
  sc.grid_side = 4;
  sc.embed_dim = 8;
  sc.max_radius = 1;
  sc.n_train = 4;
  sc.n_val = 0;  // empty split under test
  sc.n_test = 2;
  sc.seed = 6;
  run_synth({sc, data}, nullptr);
  TrainCommand tcmd;
  tcmd.data_dir = data;
  tcmd.out_dir = run;
  tcmd.model.n_layers = 1;
  tcmd.model.n_heads = 2;
  tcmd.model.d_model = 16;
  tcmd.model.d_ff = 32;
  tcmd.model.pam_kernels = {3};
  tcmd.train.max_steps = 3;
  run_train(tcmd, nullptr);
  GenerateCommand gcmd;
  gcmd.checkpoint = run / "checkpoint.bin";
  gcmd.data_dir = data;
  gcmd.out_dir = run / "gen";
  gcmd.split = "val";
  const auto generated = run_generate(gcmd, nullptr);
  CHECK(generated.empty());
  std::ifstream csv(run / "gen" / "generated.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "bag_id,generated");
  std::string rest;
  CHECK_FALSE(std::getline(csv, rest));
  fs::remove_all(data);
  fs::remove_all(run);
}

TEST_CASE("commands: evaluating ground-truth reports scores BLEU-1 of 1") {
  fs::path data = fresh_dir("migen_cmd_eval_data");
  fs::path out = fresh_dir("migen_cmd_eval_out");
  SynthConfig sc;
  sc.grid_side = 4;
  sc.embed_dim = 8;
  sc.max_radius = 1;
  sc.n_train = 4;
  sc.n_val = 0;
  sc.n_test = 3;
  sc.seed = 8;
  run_synth({sc, data}, nullptr);
  Dataset ds = load_dataset(data);
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& bag : ds.test) {
    arr.push_back({{"bag_id", bag.bag_id}, {"generated", bag.report}});
  }
  const fs::path gen_file = out / "generated.json";
  std::ofstream(gen_file) << arr.dump(2);
  EvalReport rep = run_evaluate({gen_file, data, out / "eval"}, nullptr);
  CHECK(rep.bleu_1 == doctest::Approx(1.0));
  CHECK(rep.slot_quadrant == doctest::Approx(1.0));
  REQUIRE(rep.semantic_classification.has_value());
  CHECK(rep.semantic_classification->accuracy == doctest::Approx(1.0));

  // unknown bag ids are refused, listing the offender
  arr.push_back({{"bag_id", "bag_bogus"}, {"generated", "x"}});
  std::ofstream(gen_file) << arr.dump(2);
  CHECK_THROWS_WITH_AS(run_evaluate({gen_file, data, out / "eval2"}, nullptr),
                       doctest::Contains("bag_bogus"), std::invalid_argument);
  fs::remove_all(data);
  fs::remove_all(out);
}

TEST_CASE("commands: resume continues near the prior loss and rejects vocab changes") {
  fs::path data = fresh_dir("migen_cmd_resume_data");
  fs::path run1 = fresh_dir("migen_cmd_resume_run1");
  fs::path run2 = fresh_dir("migen_cmd_resume_run2");
  SynthConfig sc;
  sc.grid_side = 4;
  sc.embed_dim = 8;
  sc.max_radius = 1;
  sc.n_train = 6;
  sc.n_val = 0;
  sc.n_test = 2;
  sc.seed = 12;
  run_synth({sc, data}, nullptr);

  TrainCommand first;
  first.data_dir = data;
  first.out_dir = run1;
  first.model.n_layers = 1;
  first.model.n_heads = 2;
  first.model.d_model = 16;
  first.model.d_ff = 32;
  first.model.pam_kernels = {3};
  first.train.max_steps = 300;
  first.train.learning_rate = 1e-3;
  first.train.batch_size = 4;
  first.train.log_interval = 50;
  TrainResult r1 = run_train(first, nullptr);

  TrainCommand resumed = first;
  resumed.out_dir = run2;
  resumed.resume = run1 / "checkpoint.bin";
  resumed.train.max_steps = 10;
  resumed.train.log_interval = 1;
  TrainResult r2 = run_train(resumed, nullptr);
  REQUIRE_FALSE(r2.loss_trace.empty());
  // continuation, allowing batch-sampling noise around small losses
  const double band = std::max(0.1 * r1.final_loss, 0.1);
  CHECK(r2.loss_trace.front().second < r1.final_loss + band);

  // a dataset with a different vocabulary must be refused
  fs::path other = fresh_dir("migen_cmd_resume_other");
  SynthConfig sc2 = sc;
  sc2.seed = 99;
  sc2.subtype_count = 2;
  run_synth({sc2, other}, nullptr);
  TrainCommand bad = resumed;
  bad.data_dir = other;
  CHECK_THROWS_AS(run_train(bad, nullptr), std::invalid_argument);

  fs::remove_all(data);
  fs::remove_all(run1);
  fs::remove_all(run2);
  fs::remove_all(other);
}

TEST_CASE("commands: no command mutates its input dataset directory") {
  fs::path data = fresh_dir("migen_cmd_immutable_data");
  fs::path out = fresh_dir("migen_cmd_immutable_out");
  SynthConfig sc;
  sc.grid_side = 4;
  sc.embed_dim = 8;
  sc.max_radius = 1;
  sc.n_train = 4;
  sc.n_val = 0;
  sc.n_test = 2;
  sc.seed = 21;
  run_synth({sc, data}, nullptr);
  const auto before = dir_snapshot(data);

  TrainCommand tcmd;
  tcmd.data_dir = data;
  tcmd.out_dir = out / "train";
  tcmd.model.n_layers = 1;
  tcmd.model.n_heads = 2;
  tcmd.model.d_model = 16;
  tcmd.model.d_ff = 32;
  tcmd.model.pam_kernels = {3};
  tcmd.train.max_steps = 10;
  run_train(tcmd, nullptr);
  GenerateCommand gcmd;
  gcmd.checkpoint = out / "train" / "checkpoint.bin";
  gcmd.data_dir = data;
  gcmd.out_dir = out / "gen";
  gcmd.beam = 2;
  run_generate(gcmd, nullptr);
  run_evaluate({out / "gen" / "generated.json", data, out / "eval"}, nullptr);

  CHECK(dir_snapshot(data) == before);
  fs::remove_all(data);
  fs::remove_all(out);
}

TEST_CASE("commands: classify finetune reaches full accuracy on separable data") {
  fs::path data = fresh_dir("migen_cmd_classify_data");
  fs::path out = fresh_dir("migen_cmd_classify_out");
  SynthConfig sc;
  sc.grid_side = 4;
  sc.embed_dim = 8;
  sc.max_radius = 1;
  sc.noise_sigma = 0.0;  // linearly separable subtypes
  sc.subtype_count = 2;
  sc.n_train = 12;
  sc.n_val = 0;
  sc.n_test = 8;
  sc.seed = 31;
  run_synth({sc, data}, nullptr);

  TrainCommand tcmd;
  tcmd.data_dir = data;
  tcmd.out_dir = out / "pretrain";
  tcmd.model.n_layers = 1;
  tcmd.model.n_heads = 2;
  tcmd.model.d_model = 16;
  tcmd.model.d_ff = 32;
  tcmd.model.pam_kernels = {3};
  tcmd.train.max_steps = 60;
  tcmd.train.learning_rate = 1e-3;
  run_train(tcmd, nullptr);

  ClassifyCommand ccmd;
  ccmd.checkpoint = out / "pretrain" / "checkpoint.bin";
  ccmd.data_dir = data;
  ccmd.out_dir = out / "cls";
  ccmd.mode = "finetune";
  ccmd.finetune.max_steps = 250;
  ccmd.finetune.learning_rate = 1e-3;
  ccmd.finetune.batch_size = 2;
  ClassificationReport rep = run_classify(ccmd, nullptr);
  CHECK(rep.accuracy == doctest::Approx(1.0));

  // semantic mode on a trained generator agrees with the labels it generates
  ClassifyCommand scmd = ccmd;
  scmd.mode = "semantic";
  scmd.out_dir = out / "sem";
  scmd.beam = 1;
  ClassificationReport sem = run_classify(scmd, nullptr);
  CHECK(sem.n_total == 8);
  CHECK(sem.accuracy >= 0.0);

  ClassifyCommand bad = ccmd;
  bad.mode = "nonsense";
  CHECK_THROWS_AS(run_classify(bad, nullptr), std::invalid_argument);
  fs::remove_all(data);
  fs::remove_all(out);
}

TEST_CASE("commands: mask sweep ratio-0 row equals plain evaluation") {
  fs::path data = fresh_dir("migen_cmd_sweep_data");
  fs::path out = fresh_dir("migen_cmd_sweep_out");
  SynthConfig sc;
  sc.grid_side = 4;
  sc.embed_dim = 8;
  sc.max_radius = 1;
  sc.n_train = 5;
  sc.n_val = 0;
  sc.n_test = 3;
  sc.seed = 41;
  run_synth({sc, data}, nullptr);
  TrainCommand tcmd;
  tcmd.data_dir = data;
  tcmd.out_dir = out / "train";
  tcmd.model.n_layers = 1;
  tcmd.model.n_heads = 2;
  tcmd.model.d_model = 16;
  tcmd.model.d_ff = 32;
  tcmd.model.pam_kernels = {3};
  tcmd.train.max_steps = 50;
  tcmd.train.learning_rate = 1e-3;
  run_train(tcmd, nullptr);

  MaskSweepCommand mcmd;
  mcmd.data_dir = data;
  mcmd.out_dir = out / "sweep";
  mcmd.checkpoints = {out / "train" / "checkpoint.bin"};
  mcmd.ratios = {0.0, 0.5};
  auto rows = run_mask_sweep(mcmd, nullptr);
  REQUIRE(rows.size() == 2);

  GenerateCommand gcmd;
  gcmd.checkpoint = out / "train" / "checkpoint.bin";
  gcmd.data_dir = data;
  gcmd.out_dir = out / "gen";
  gcmd.beam = 1;
  run_generate(gcmd, nullptr);
  EvalReport plain =
      run_evaluate({out / "gen" / "generated.json", data, out / "eval"}, nullptr);
  CHECK(rows[0].bleu_1 == doctest::Approx(plain.bleu_1));
  CHECK(rows[0].quadrant_accuracy == doctest::Approx(plain.slot_quadrant));
  fs::remove_all(data);
  fs::remove_all(out);
}

TEST_CASE("commands: shuffle study emits all six rows consistently") {
  fs::path data = fresh_dir("migen_cmd_shuffle_data");
  fs::path out = fresh_dir("migen_cmd_shuffle_out");
  SynthConfig sc;
  sc.grid_side = 4;
  sc.embed_dim = 8;
  sc.max_radius = 1;
  sc.n_train = 5;
  sc.n_val = 0;
  sc.n_test = 2;
  sc.seed = 51;
  run_synth({sc, data}, nullptr);
  ShuffleStudyCommand cmd;
  cmd.data_dir = data;
  cmd.out_dir = out;
  cmd.base_model.n_layers = 1;
  cmd.base_model.n_heads = 2;
  cmd.base_model.d_model = 16;
  cmd.base_model.d_ff = 32;
  cmd.base_model.pam_kernels = {3};
  cmd.train.max_steps = 20;
  cmd.train.learning_rate = 1e-3;
  auto rows = run_shuffle_study(cmd, nullptr);
  REQUIRE(rows.size() == 6);
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& row : rows) {
    seen.insert({row.augment, row.pam});
    CHECK(row.bleu_1 >= 0.0);
    CHECK(row.bleu_1 <= 1.0);
  }
  CHECK(seen.size() == 6);
  fs::remove_all(data);
  fs::remove_all(out);
}
