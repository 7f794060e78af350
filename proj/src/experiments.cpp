// SPDX-License-Identifier: Apache-2.0

#include "migen/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "migen/decode.hpp"

namespace migen {

using nlohmann::json;

namespace {

constexpr const char* kVersion = "migen 0.1.0";

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(Clock::now() - start_).count();
  }

 private:
  using Clock = std::chrono::steady_clock;
  Clock::time_point start_ = Clock::now();
};

void log_line(std::ostream* log, const std::string& msg) {
  if (log) *log << msg << '\n';
}

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string kernels_csv(const std::vector<int>& ks) {
  std::string s;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(ks[i]);
  }
  return s;
}

KvConfig model_kv(const ModelConfig& m) {
  return {{"n_layers", std::to_string(m.n_layers)},
          {"n_heads", std::to_string(m.n_heads)},
          {"d_model", std::to_string(m.d_model)},
          {"d_ff", std::to_string(m.d_ff)},
          {"input_dim", std::to_string(m.input_dim)},
          {"vocab_size", std::to_string(m.vocab_size)},
          {"max_report_len", std::to_string(m.max_report_len)},
          {"pam_kernels", kernels_csv(m.pam_kernels)},
          {"pam_mode", to_string(m.pam_mode)},
          {"pam_depthwise", m.pam_depthwise ? "1" : "0"},
          {"dropout", fmt(m.dropout_rate)},
          {"n_classes", std::to_string(m.n_classes)}};
}

KvConfig train_kv(const TrainConfig& t) {
  return {{"lr", fmt(t.learning_rate)},
          {"weight_decay", fmt(t.weight_decay)},
          {"beta1", fmt(t.beta1)},
          {"beta2", fmt(t.beta2)},
          {"adam_eps", fmt(t.adam_eps)},
          {"max_steps", std::to_string(t.max_steps)},
          {"batch_size", std::to_string(t.batch_size)},
          {"mask_ratio", fmt(t.mask_ratio)},
          {"mask_jitter", t.mask_jitter ? "1" : "0"},
          {"shuffle_instances", t.shuffle_instances ? "1" : "0"},
          {"seed", std::to_string(t.seed)},
          {"checkpoint_interval", std::to_string(t.checkpoint_interval)},
          {"log_interval", std::to_string(t.log_interval)}};
}

void merge_kv(KvConfig& into, const KvConfig& from, const std::string& prefix) {
  for (const auto& [k, v] : from) into[prefix + k] = v;
}

// Fill the data-determined model fields and sanity-check the bags.
void adapt_model_to_data(ModelConfig& model, const Dataset& ds) {
  if (ds.train.empty()) throw std::invalid_argument("dataset has no training bags");
  model.input_dim = ds.train[0].embed_dim;
  model.vocab_size = ds.vocab.size();
  int longest = 0;
  for (const auto* split : {&ds.train, &ds.val, &ds.test}) {
    for (const auto& bag : *split) {
      if (bag.embed_dim != model.input_dim) {
        throw std::invalid_argument("bag " + bag.bag_id + " embed_dim differs");
      }
      longest = std::max(longest, static_cast<int>(encode(bag.report, ds.vocab).size()));
    }
  }
  model.max_report_len = std::max(model.max_report_len, longest + 2);
}

const InstanceBag* find_bag(const Dataset& ds, const std::string& bag_id) {
  for (const auto* split : {&ds.train, &ds.val, &ds.test}) {
    for (const auto& bag : *split) {
      if (bag.bag_id == bag_id) return &bag;
    }
  }
  return nullptr;
}

void write_generated_files(const std::vector<GeneratedReport>& generated,
                           const std::filesystem::path& out_dir) {
  json arr = json::array();
  for (const auto& g : generated) {
    arr.push_back({{"bag_id", g.bag_id}, {"generated", g.text}});
  }
  std::ofstream js(out_dir / "generated.json", std::ios::binary);
  js << arr.dump(2) << '\n';
  std::ofstream csv(out_dir / "generated.csv", std::ios::binary);
  csv << "bag_id,generated\n";
  for (const auto& g : generated) csv << g.bag_id << ",\"" << g.text << "\"\n";
}

ModelParams load_params_for_data(const std::filesystem::path& checkpoint,
                                 const Dataset& ds) {
  Checkpoint ck = load_checkpoint(checkpoint);
  if (ck.vocab_fp != vocab_fingerprint(ds.vocab)) {
    throw std::invalid_argument("checkpoint " + checkpoint.string() +
                                " was trained with a different vocabulary");
  }
  return std::move(ck.params);
}

EvalReport evaluate_pairs(const std::vector<GeneratedReport>& generated,
                          const Dataset& ds) {
  std::vector<const InstanceBag*> bags;
  std::vector<std::string> unknown;
  for (const auto& g : generated) {
    const InstanceBag* bag = find_bag(ds, g.bag_id);
    if (bag == nullptr) unknown.push_back(g.bag_id);
    else bags.push_back(bag);
  }
  if (!unknown.empty()) {
    std::string joined;
    for (const auto& id : unknown) joined += (joined.empty() ? "" : ", ") + id;
    throw std::invalid_argument("generated file references unknown bag ids: " + joined);
  }
  return evaluate_generated(generated, bags);
}

json eval_report_json(const EvalReport& rep) {
  json j{{"bleu_1", rep.bleu_1},     {"bleu_2", rep.bleu_2},
         {"bleu_3", rep.bleu_3},     {"bleu_4", rep.bleu_4},
         {"rouge_l", rep.rouge_l},   {"meteor_lite", rep.meteor_lite},
         {"n_bags", rep.n_bags},     {"n_with_blob", rep.n_with_blob},
         {"slot_subtype", rep.slot_subtype},
         {"slot_diameter", rep.slot_diameter},
         {"slot_quadrant", rep.slot_quadrant}};
  if (rep.semantic_classification) {
    j["semantic_classification"] = {
        {"accuracy", rep.semantic_classification->accuracy},
        {"macro_f1", rep.semantic_classification->macro_f1},
        {"n_total", rep.semantic_classification->n_total},
        {"n_abstained", rep.semantic_classification->n_abstained}};
  }
  return j;
}

}  // namespace

KvConfig load_kv_config(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw std::invalid_argument("cannot open config file " + file.string());
  KvConfig kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(file.string() + ":" + std::to_string(lineno) +
                                  ": expected key = value");
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::string kv_get(const KvConfig& kv, const std::string& key,
                   const std::string& fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

void append_run_manifest(const std::filesystem::path& out_dir,
                         const std::string& command, const KvConfig& resolved,
                         const std::vector<std::string>& artifacts,
                         double duration_seconds) {
  std::filesystem::create_directories(out_dir);
  json record{{"command", command},
              {"config", resolved},
              {"artifacts", artifacts},
              {"version", kVersion},
              {"duration_seconds", duration_seconds}};
  std::ofstream os(out_dir / "run_manifest.jsonl", std::ios::binary | std::ios::app);
  if (!os) throw std::runtime_error("cannot append manifest in " + out_dir.string());
  os << record.dump() << '\n';
}

void run_synth(const SynthCommand& cmd, std::ostream* log) {
  Stopwatch watch;
  namespace fs = std::filesystem;
  if (fs::exists(cmd.out_dir) && !fs::is_empty(cmd.out_dir) && !cmd.force) {
    throw std::invalid_argument("output directory " + cmd.out_dir.string() +
                                " is not empty (use --force to overwrite)");
  }
  Dataset ds = synth_dataset(cmd.synth);
  fs::create_directories(cmd.out_dir);
  save_dataset(ds, cmd.out_dir);
  log_line(log, "synth: wrote " + std::to_string(ds.train.size()) + "/" +
                    std::to_string(ds.val.size()) + "/" +
                    std::to_string(ds.test.size()) + " bags to " +
                    cmd.out_dir.string());
  KvConfig resolved{{"grid_side", std::to_string(cmd.synth.grid_side)},
                    {"embed_dim", std::to_string(cmd.synth.embed_dim)},
                    {"n_tissue_types", std::to_string(cmd.synth.n_tissue_types)},
                    {"subtype_count", std::to_string(cmd.synth.subtype_count)},
                    {"min_radius", std::to_string(cmd.synth.min_radius)},
                    {"max_radius", std::to_string(cmd.synth.max_radius)},
                    {"noise_sigma", fmt(cmd.synth.noise_sigma)},
                    {"n_train", std::to_string(cmd.synth.n_train)},
                    {"n_val", std::to_string(cmd.synth.n_val)},
                    {"n_test", std::to_string(cmd.synth.n_test)},
                    {"min_freq", std::to_string(cmd.synth.min_freq)},
                    {"seed", std::to_string(cmd.synth.seed)}};
  append_run_manifest(cmd.out_dir, "synth", resolved,
                      {"manifest.json", "vocab.txt"}, watch.seconds());
}

TrainResult run_train(const TrainCommand& cmd, std::ostream* log) {
  Stopwatch watch;
  Dataset ds = load_dataset(cmd.data_dir);
  const std::uint64_t vocab_fp = vocab_fingerprint(ds.vocab);

  ModelParams params;
  if (!cmd.resume.empty()) {
    Checkpoint ck = load_checkpoint(cmd.resume);
    if (ck.vocab_fp != vocab_fp) {
      throw std::invalid_argument("resume checkpoint " + cmd.resume.string() +
                                  " was trained with a different vocabulary");
    }
    params = std::move(ck.params);
  } else {
    ModelConfig model = cmd.model;
    adapt_model_to_data(model, ds);
    params = init_params(model, cmd.init_seed);
  }

  std::filesystem::create_directories(cmd.out_dir);
  const auto ckpt_path = cmd.out_dir / "checkpoint.bin";
  CheckpointSink sink = [&](int, const ModelParams& p) {
    save_checkpoint(p, vocab_fp, ckpt_path);
  };

  log_line(log, "train: " + std::to_string(ds.train.size()) + " bags, " +
                    std::to_string(params.param_count()) + " parameters, " +
                    std::to_string(cmd.train.max_steps) + " steps");
  TrainResult result;
  try {
    result = train(params, ds.train, ds.vocab, cmd.train, sink);
  } catch (const TrainingDiverged&) {
    log_line(log, "train: diverged; last checkpoint retained at " + ckpt_path.string());
    throw;
  }
  write_loss_trace(result, cmd.out_dir / "loss.csv");
  log_line(log, "train: final loss " + fmt(result.final_loss));

  KvConfig resolved = model_kv(params.config);
  merge_kv(resolved, train_kv(cmd.train), "");
  resolved["data_dir"] = cmd.data_dir.string();
  resolved["init_seed"] = std::to_string(cmd.init_seed);
  if (!cmd.resume.empty()) resolved["resume"] = cmd.resume.string();
  append_run_manifest(cmd.out_dir, "train", resolved, {"checkpoint.bin", "loss.csv"},
                      watch.seconds());
  return result;
}

std::vector<GeneratedReport> run_generate(const GenerateCommand& cmd,
                                          std::ostream* log) {
  Stopwatch watch;
  Dataset ds = load_dataset(cmd.data_dir);
  ModelParams params = load_params_for_data(cmd.checkpoint, ds);
  const std::vector<InstanceBag>& bags = ds.split(cmd.split);

  std::vector<GeneratedReport> generated;
  generated.reserve(bags.size());
  BeamConfig bc;
  bc.beam_size = cmd.beam;
  bc.max_len = cmd.max_len;
  bc.length_penalty_alpha = cmd.length_penalty_alpha;
  for (const auto& bag : bags) {
    const TokenSeq ids = cmd.beam <= 1 ? greedy_decode(params, bag, cmd.max_len)
                                       : beam_search(params, bag, bc);
    generated.push_back({bag.bag_id, decode(ids, ds.vocab)});
  }
  std::filesystem::create_directories(cmd.out_dir);
  write_generated_files(generated, cmd.out_dir);
  log_line(log, "generate: " + std::to_string(generated.size()) + " reports for split " +
                    cmd.split);

  KvConfig resolved{{"checkpoint", cmd.checkpoint.string()},
                    {"data_dir", cmd.data_dir.string()},
                    {"split", cmd.split},
                    {"beam", std::to_string(cmd.beam)},
                    {"length_penalty_alpha", fmt(cmd.length_penalty_alpha)},
                    {"max_len", std::to_string(cmd.max_len)}};
  append_run_manifest(cmd.out_dir, "generate", resolved,
                      {"generated.json", "generated.csv"}, watch.seconds());
  return generated;
}

std::vector<GeneratedReport> load_generated_file(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw std::invalid_argument("cannot open generated file " + file.string());
  json arr;
  try {
    is >> arr;
  } catch (const json::exception& e) {
    throw std::runtime_error("generated file " + file.string() + " is not valid JSON: " +
                             e.what());
  }
  std::vector<GeneratedReport> out;
  for (const auto& item : arr) {
    out.push_back({item.at("bag_id").get<std::string>(),
                   item.at("generated").get<std::string>()});
  }
  return out;
}

EvalReport run_evaluate(const EvaluateCommand& cmd, std::ostream* log) {
  Stopwatch watch;
  Dataset ds = load_dataset(cmd.data_dir);
  const std::vector<GeneratedReport> generated = load_generated_file(cmd.generated_file);
  EvalReport aggregate = evaluate_pairs(generated, ds);

  std::filesystem::create_directories(cmd.out_dir);
  json per_bag = json::array();
  std::ofstream csv(cmd.out_dir / "metrics.csv", std::ios::binary);
  csv << "bag_id,bleu_1,bleu_2,bleu_3,bleu_4,rouge_l,meteor_lite,"
         "slot_subtype,slot_diameter,slot_quadrant\n";
  for (const auto& g : generated) {
    const InstanceBag& bag = *find_bag(ds, g.bag_id);
    json rec{{"bag_id", g.bag_id}, {"generated", g.text}, {"reference", bag.report}};
    double b[4];
    for (int n = 1; n <= 4; ++n) {
      b[n - 1] = bleu_n(g.text, {bag.report}, n);
      rec["bleu_" + std::to_string(n)] = b[n - 1];
    }
    rec["rouge_l"] = rouge_l(g.text, bag.report);
    rec["meteor_lite"] = meteor_lite(g.text, bag.report);
    int s1 = -1, s2 = -1, s3 = -1;
    if (bag.blob) {
      const SlotResult slots = slot_accuracy(g.text, *bag.blob);
      s1 = slots.subtype;
      s2 = slots.diameter;
      s3 = slots.quadrant;
      rec["slots"] = {{"subtype", slots.subtype},
                      {"diameter", slots.diameter},
                      {"quadrant", slots.quadrant}};
    }
    per_bag.push_back(rec);
    csv << g.bag_id;
    for (double v : b) csv << ',' << fmt(v);
    csv << ',' << fmt(rec["rouge_l"].get<double>()) << ','
        << fmt(rec["meteor_lite"].get<double>()) << ',' << s1 << ',' << s2 << ','
        << s3 << '\n';
  }
  {
    std::ofstream os(cmd.out_dir / "per_bag.json", std::ios::binary);
    os << per_bag.dump(2) << '\n';
  }
  {
    std::ofstream os(cmd.out_dir / "aggregate.json", std::ios::binary);
    os << eval_report_json(aggregate).dump(2) << '\n';
  }
  log_line(log, "evaluate: BLEU-1 " + fmt(aggregate.bleu_1) + ", quadrant " +
                    fmt(aggregate.slot_quadrant) + " over " +
                    std::to_string(aggregate.n_bags) + " bags");
  KvConfig resolved{{"generated_file", cmd.generated_file.string()},
                    {"data_dir", cmd.data_dir.string()}};
  append_run_manifest(cmd.out_dir, "evaluate", resolved,
                      {"per_bag.json", "aggregate.json", "metrics.csv"},
                      watch.seconds());
  return aggregate;
}

std::vector<SweepRow> run_mask_sweep(const MaskSweepCommand& cmd, std::ostream* log) {
  Stopwatch watch;
  if (cmd.checkpoints.empty()) {
    throw std::invalid_argument("mask sweep needs at least one checkpoint");
  }
  Dataset ds = load_dataset(cmd.data_dir);
  const std::vector<InstanceBag>& bags = ds.split(cmd.split);

  std::vector<SweepRow> rows;
  for (const auto& ckpt_path : cmd.checkpoints) {
    ModelParams params = load_params_for_data(ckpt_path, ds);
    const std::string model_name = to_string(params.config.pam_mode);
    for (std::size_t ri = 0; ri < cmd.ratios.size(); ++ri) {
      const double ratio = cmd.ratios[ri];
      if (ratio < 0 || ratio >= 1) {
        throw std::invalid_argument("mask ratio must be in [0,1), got " + fmt(ratio));
      }
      std::vector<GeneratedReport> generated;
      std::vector<const InstanceBag*> refs;
      std::vector<InstanceBag> masked_store;
      masked_store.reserve(bags.size());
      for (std::size_t bi = 0; bi < bags.size(); ++bi) {
        // per-(ratio,bag) stream so curves share masks across checkpoints
        std::mt19937_64 rng(cmd.seed ^ (0x9e3779b97f4a7c15ull * (ri * 100003 + bi + 1)));
        masked_store.push_back(apply_mask_augment(bags[bi], ratio, rng));
      }
      for (std::size_t bi = 0; bi < bags.size(); ++bi) {
        const TokenSeq ids = greedy_decode(params, masked_store[bi], 0);
        generated.push_back({bags[bi].bag_id, decode(ids, ds.vocab)});
        refs.push_back(&bags[bi]);
      }
      EvalReport rep = evaluate_generated(generated, refs);
      rows.push_back({ratio, model_name, rep.bleu_1, rep.slot_quadrant});
      log_line(log, "mask-sweep: " + model_name + " ratio " + fmt(ratio) +
                        " BLEU-1 " + fmt(rep.bleu_1) + " quadrant " +
                        fmt(rep.slot_quadrant));
    }
  }

  std::filesystem::create_directories(cmd.out_dir);
  std::ofstream csv(cmd.out_dir / "mask_sweep.csv", std::ios::binary);
  csv << "ratio,model,bleu_1,quadrant_accuracy\n";
  for (const auto& row : rows) {
    csv << fmt(row.ratio) << ',' << row.model << ',' << fmt(row.bleu_1) << ','
        << fmt(row.quadrant_accuracy) << '\n';
  }
  KvConfig resolved{{"data_dir", cmd.data_dir.string()},
                    {"split", cmd.split},
                    {"seed", std::to_string(cmd.seed)}};
  for (std::size_t i = 0; i < cmd.checkpoints.size(); ++i) {
    resolved["checkpoint_" + std::to_string(i)] = cmd.checkpoints[i].string();
  }
  std::string ratios;
  for (double r : cmd.ratios) ratios += (ratios.empty() ? "" : ",") + fmt(r);
  resolved["ratios"] = ratios;
  append_run_manifest(cmd.out_dir, "mask-sweep", resolved, {"mask_sweep.csv"},
                      watch.seconds());
  return rows;
}

namespace {

struct Variant {
  std::string name;
  PamMode mode;
  std::vector<int> kernels;
};

// Train one generation model on the shared dataset and evaluate the split.
EvalReport train_and_evaluate(const Dataset& ds, ModelConfig model,
                              const TrainConfig& tc, std::uint64_t init_seed,
                              const std::string& tag, std::ostream* log,
                              ModelParams* out_params = nullptr) {
  adapt_model_to_data(model, ds);
  ModelParams params = init_params(model, init_seed);
  train(params, ds.train, ds.vocab, tc);
  std::vector<GeneratedReport> generated;
  std::vector<const InstanceBag*> refs;
  for (const auto& bag : ds.test) {
    const TokenSeq ids = greedy_decode(params, bag, 0);
    generated.push_back({bag.bag_id, decode(ids, ds.vocab)});
    refs.push_back(&bag);
  }
  EvalReport rep = evaluate_generated(generated, refs);
  log_line(log, tag + ": BLEU-1 " + fmt(rep.bleu_1) + " quadrant " +
                    fmt(rep.slot_quadrant));
  if (out_params) *out_params = std::move(params);
  return rep;
}

}  // namespace

std::vector<AblationRow> run_pam_ablation(const AblationCommand& cmd,
                                          std::ostream* log) {
  Stopwatch watch;
  Dataset ds = load_dataset(cmd.data_dir);
  const std::vector<Variant> variants{
      {"off", PamMode::kOff, {}},
      {"k3", PamMode::kHierarchical, {3}},
      {"k7", PamMode::kHierarchical, {7}},
      {"last_layer_only", PamMode::kLastLayerOnly, {3, 7, 13}},
      {"k3_5_7", PamMode::kHierarchical, {3, 5, 7}},
      {"k3_7_13", PamMode::kHierarchical, {3, 7, 13}},
  };
  std::filesystem::create_directories(cmd.out_dir);
  const std::uint64_t vocab_fp = vocab_fingerprint(ds.vocab);
  std::vector<AblationRow> rows;
  for (const auto& variant : variants) {
    ModelConfig model = cmd.base_model;
    model.pam_mode = variant.mode;
    model.pam_kernels = variant.kernels.empty() ? cmd.base_model.pam_kernels
                                                : variant.kernels;
    ModelParams trained;
    EvalReport rep = train_and_evaluate(ds, model, cmd.train, cmd.init_seed,
                                        "pam-ablate " + variant.name, log, &trained);
    save_checkpoint(trained, vocab_fp, cmd.out_dir / (variant.name + ".bin"));
    rows.push_back({variant.name, rep.bleu_1, rep.bleu_4, rep.slot_subtype,
                    rep.slot_diameter, rep.slot_quadrant});
  }
  std::ofstream csv(cmd.out_dir / "pam_ablation.csv", std::ios::binary);
  csv << "variant,bleu_1,bleu_4,slot_subtype,slot_diameter,slot_quadrant\n";
  for (const auto& row : rows) {
    csv << row.variant << ',' << fmt(row.bleu_1) << ',' << fmt(row.bleu_4) << ','
        << fmt(row.slot_subtype) << ',' << fmt(row.slot_diameter) << ','
        << fmt(row.slot_quadrant) << '\n';
  }
  KvConfig resolved = model_kv(cmd.base_model);
  merge_kv(resolved, train_kv(cmd.train), "");
  resolved["data_dir"] = cmd.data_dir.string();
  resolved["init_seed"] = std::to_string(cmd.init_seed);
  std::vector<std::string> artifacts{"pam_ablation.csv"};
  for (const auto& variant : variants) artifacts.push_back(variant.name + ".bin");
  append_run_manifest(cmd.out_dir, "pam-ablate", resolved, artifacts, watch.seconds());
  return rows;
}

std::vector<ShuffleRow> run_shuffle_study(const ShuffleStudyCommand& cmd,
                                          std::ostream* log) {
  Stopwatch watch;
  Dataset ds = load_dataset(cmd.data_dir);
  std::vector<ShuffleRow> rows;
  for (const std::string& augment : {"none", "shuffle", "shuffle_mask"}) {
    for (PamMode mode : {PamMode::kHierarchical, PamMode::kOff}) {
      ModelConfig model = cmd.base_model;
      model.pam_mode = mode;
      TrainConfig tc = cmd.train;
      tc.shuffle_instances = augment != "none";
      tc.mask_ratio = augment == "shuffle_mask" ? cmd.mask_ratio : 0.0;
      EvalReport rep = train_and_evaluate(
          ds, model, tc, cmd.init_seed,
          "shuffle-study " + augment + "/" + to_string(mode), log);
      rows.push_back({augment, to_string(mode), rep.bleu_1});
    }
  }
  std::filesystem::create_directories(cmd.out_dir);
  std::ofstream csv(cmd.out_dir / "shuffle_study.csv", std::ios::binary);
  csv << "augment,pam,bleu_1\n";
  for (const auto& row : rows) {
    csv << row.augment << ',' << row.pam << ',' << fmt(row.bleu_1) << '\n';
  }
  KvConfig resolved = model_kv(cmd.base_model);
  merge_kv(resolved, train_kv(cmd.train), "");
  resolved["data_dir"] = cmd.data_dir.string();
  resolved["mask_ratio_study"] = fmt(cmd.mask_ratio);
  resolved["init_seed"] = std::to_string(cmd.init_seed);
  append_run_manifest(cmd.out_dir, "shuffle-study", resolved, {"shuffle_study.csv"},
                      watch.seconds());
  return rows;
}

ClassificationReport run_classify(const ClassifyCommand& cmd, std::ostream* log) {
  Stopwatch watch;
  Dataset ds = load_dataset(cmd.data_dir);
  int n_classes = 0;
  for (const auto* split : {&ds.train, &ds.val, &ds.test}) {
    for (const auto& bag : *split) n_classes = std::max(n_classes, bag.class_label + 1);
  }
  if (n_classes < 2) {
    throw std::invalid_argument("classify: dataset has no class labels");
  }

  ClassificationReport report;
  if (cmd.mode == "semantic") {
    ModelParams params = load_params_for_data(cmd.checkpoint, ds);
    std::vector<std::vector<std::string>> keywords(n_classes);
    for (int c = 0; c < n_classes; ++c) keywords[c] = {synth_subtype_names()[c]};
    std::vector<std::optional<int>> predicted;
    std::vector<int> labels;
    BeamConfig bc;
    bc.beam_size = cmd.beam;
    for (const auto& bag : ds.test) {
      const TokenSeq ids = cmd.beam <= 1 ? greedy_decode(params, bag, 0)
                                         : beam_search(params, bag, bc);
      predicted.push_back(semantic_extract(decode(ids, ds.vocab), keywords));
      labels.push_back(bag.class_label);
    }
    report = classification_report(predicted, labels, n_classes);
  } else if (cmd.mode == "finetune") {
    Checkpoint ck = load_checkpoint(cmd.checkpoint);
    if (ck.vocab_fp != vocab_fingerprint(ds.vocab)) {
      throw std::invalid_argument("checkpoint vocabulary does not match the dataset");
    }
    ModelConfig cfg = ck.params.config;
    cfg.n_classes = n_classes;
    ModelParams params = init_params(cfg, cmd.head_seed);
    // adopt every pretrained tensor; the CLS token and classifier stay fresh
    std::unordered_map<std::string, const Tensor*> pretrained;
    ck.params.for_each_param([&pretrained](const std::string& name, const Tensor& t) {
      pretrained.emplace(name, &t);
    });
    params.for_each_param([&pretrained](const std::string& name, Tensor& t) {
      auto it = pretrained.find(name);
      if (it != pretrained.end()) t.data() = it->second->data();
    });

    TrainConfig tc = cmd.finetune;
    tc.validate();
    std::mt19937_64 rng(tc.seed);
    std::uniform_int_distribution<std::size_t> pick(0, ds.train.size() - 1);
    AdamState state = init_adam_state(params);
    const auto head_filter = [](const std::string& name) {
      return name.rfind("cls.", 0) == 0;
    };
    for (int step = 1; step <= tc.max_steps; ++step) {
      params.zero_grad();
      for (int b = 0; b < tc.batch_size; ++b) {
        const InstanceBag& bag = ds.train[pick(rng)];
        Tensor loss = cross_entropy(classify_logits(params, bag), {bag.class_label}, -1);
        backward(tc.batch_size == 1 ? loss : scale(loss, 1.0 / tc.batch_size));
      }
      if (cmd.head_only) adam_step(params, state, tc, head_filter);
      else adam_step(params, state, tc);
    }

    std::vector<std::optional<int>> predicted;
    std::vector<int> labels;
    NoGradGuard no_grad;
    for (const auto& bag : ds.test) {
      Tensor logits = classify_logits(params, bag);
      int best = 0;
      for (int c = 1; c < n_classes; ++c) {
        if (logits.data()[c] > logits.data()[best]) best = c;
      }
      predicted.push_back(best);
      labels.push_back(bag.class_label);
    }
    report = classification_report(predicted, labels, n_classes);
  } else {
    throw std::invalid_argument("classify: unknown mode '" + cmd.mode +
                                "' (finetune|semantic)");
  }

  std::filesystem::create_directories(cmd.out_dir);
  {
    json j{{"mode", cmd.mode},
           {"accuracy", report.accuracy},
           {"macro_f1", report.macro_f1},
           {"n_total", report.n_total},
           {"n_abstained", report.n_abstained}};
    std::ofstream os(cmd.out_dir / "classification.json", std::ios::binary);
    os << j.dump(2) << '\n';
  }
  log_line(log, "classify[" + cmd.mode + "]: accuracy " + fmt(report.accuracy) +
                    " macro-F1 " + fmt(report.macro_f1));
  KvConfig resolved{{"checkpoint", cmd.checkpoint.string()},
                    {"data_dir", cmd.data_dir.string()},
                    {"mode", cmd.mode},
                    {"head_only", cmd.head_only ? "1" : "0"},
                    {"beam", std::to_string(cmd.beam)},
                    {"head_seed", std::to_string(cmd.head_seed)}};
  merge_kv(resolved, train_kv(cmd.finetune), "ft_");
  append_run_manifest(cmd.out_dir, "classify", resolved, {"classification.json"},
                      watch.seconds());
  return report;
}

}  // namespace migen
