// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include <doctest.h>

#include "migen/bag.hpp"

using namespace migen;
namespace fs = std::filesystem;

namespace {

SynthConfig tiny_config() {
  SynthConfig cfg;
  cfg.grid_side = 8;
  cfg.embed_dim = 8;
  cfg.n_train = 6;
  cfg.n_val = 2;
  cfg.n_test = 3;
  cfg.seed = 42;
  return cfg;
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("synth_dataset is deterministic for a fixed seed") {
  Dataset a = synth_dataset(tiny_config());
  Dataset b = synth_dataset(tiny_config());
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].report == b.train[i].report);
    CHECK(a.train[i].embeddings == b.train[i].embeddings);
    CHECK(a.train[i].coords == b.train[i].coords);
  }
  CHECK(a.vocab.id_to_token == b.vocab.id_to_token);
}

TEST_CASE("synth_dataset split sizes and disjoint ids") {
  SynthConfig cfg = tiny_config();
  Dataset ds = synth_dataset(cfg);
  CHECK(ds.train.size() == std::size_t(cfg.n_train));
  CHECK(ds.val.size() == std::size_t(cfg.n_val));
  CHECK(ds.test.size() == std::size_t(cfg.n_test));
  std::set<std::string> ids;
  for (const auto* split : {&ds.train, &ds.val, &ds.test}) {
    for (const auto& bag : *split) CHECK(ids.insert(bag.bag_id).second);
  }
}

TEST_CASE("generated reports agree with planted blob metadata") {
  Dataset ds = synth_dataset(tiny_config());
  for (const auto& bag : ds.train) {
    REQUIRE(bag.blob.has_value());
    const auto& blob = *bag.blob;
    const int mid = tiny_config().grid_side / 2;
    std::string expect_quadrant = blob.center_row < mid ? "upper" : "lower";
    expect_quadrant += blob.center_col < mid ? "-left" : "-right";
    CHECK(blob.quadrant == expect_quadrant);
    CHECK(blob.diameter == 2 * blob.radius);
    CHECK(bag.report.find(blob.quadrant) != std::string::npos);
    CHECK(bag.report.find(blob.subtype_name) != std::string::npos);
    CHECK(bag.report.find("measuring " + std::to_string(blob.diameter) + " units") !=
          std::string::npos);
    CHECK(bag.class_label == blob.subtype);
  }
}

TEST_CASE("blob centered in the first quadrant reports upper-left") {
  // With radius == grid_side/4 forced, a center at (g/4, g/4) is feasible;
  // generate until one lands there and check the slot.
  SynthConfig cfg = tiny_config();
  cfg.n_train = 200;
  cfg.n_val = 0;
  cfg.n_test = 0;
  Dataset ds = synth_dataset(cfg);
  const int g4 = cfg.grid_side / 4;
  bool found = false;
  for (const auto& bag : ds.train) {
    if (bag.blob->center_row == g4 && bag.blob->center_col == g4) {
      CHECK(bag.blob->quadrant == "upper-left");
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("noise-free bags are perfectly separable by nearest base vector") {
  SynthConfig cfg = tiny_config();
  cfg.noise_sigma = 0.0;
  cfg.n_train = 8;
  Dataset ds = synth_dataset(cfg);
  // oracle: collect the distinct embedding rows as exemplars, then check each
  // instance matches exactly one of its bag's base vectors
  for (const auto& bag : ds.train) {
    std::set<std::vector<double>> distinct;
    for (int i = 0; i < bag.size(); ++i) {
      std::vector<double> row(bag.embeddings.begin() + i * bag.embed_dim,
                              bag.embeddings.begin() + (i + 1) * bag.embed_dim);
      distinct.insert(row);
    }
    // one tissue base + one subtype base (blob always plants at least 1 cell)
    CHECK(distinct.size() == 2);
  }
}

TEST_CASE("infeasible blob radius is a configuration error") {
  SynthConfig cfg = tiny_config();
  cfg.max_radius = cfg.grid_side;  // cannot fit
  CHECK_THROWS_AS(synth_dataset(cfg), std::invalid_argument);
}

TEST_CASE("dataset save/load round-trips to the last bit") {
  Dataset ds = synth_dataset(tiny_config());
  fs::path dir = fresh_dir("migen_bag_roundtrip");
  save_dataset(ds, dir);
  Dataset back = load_dataset(dir);
  REQUIRE(back.train.size() == ds.train.size());
  REQUIRE(back.test.size() == ds.test.size());
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    CHECK(back.train[i].bag_id == ds.train[i].bag_id);
    CHECK(back.train[i].embeddings == ds.train[i].embeddings);
    CHECK(back.train[i].coords == ds.train[i].coords);
    CHECK(back.train[i].report == ds.train[i].report);
    CHECK(back.train[i].class_label == ds.train[i].class_label);
  }
  CHECK(back.vocab.id_to_token == ds.vocab.id_to_token);
  fs::remove_all(dir);
}

TEST_CASE("single-bag save/load round trip") {
  Dataset ds = synth_dataset(tiny_config());
  fs::path dir = fresh_dir("migen_bag_single");
  save_bag(ds.train[0], dir, "train");
  InstanceBag back = load_bag(dir, ds.train[0].bag_id);
  CHECK(back.embeddings == ds.train[0].embeddings);
  CHECK(back.report == ds.train[0].report);
  CHECK_THROWS_AS(load_bag(dir, "bag_99999"), std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("truncated embedding file is a format error, not garbage data") {
  Dataset ds = synth_dataset(tiny_config());
  fs::path dir = fresh_dir("migen_bag_truncated");
  save_bag(ds.train[0], dir, "train");
  const fs::path bin = dir / (ds.train[0].bag_id + ".bin");
  fs::resize_file(bin, fs::file_size(bin) - 8);
  CHECK_THROWS_WITH_AS(load_bag(dir, ds.train[0].bag_id),
                       doctest::Contains(ds.train[0].bag_id.c_str()),
                       std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("manifest M larger than the stored scalars is a format error") {
  Dataset ds = synth_dataset(tiny_config());
  fs::path dir = fresh_dir("migen_bag_badm");
  save_bag(ds.train[0], dir, "train");
  // rewrite the manifest with an inflated M
  std::ifstream is(dir / "manifest.json");
  std::string text((std::istreambuf_iterator<char>(is)), {});
  is.close();
  const std::string needle = "\"m\": " + std::to_string(ds.train[0].size());
  const auto pos = text.find(needle);
  REQUIRE(pos != std::string::npos);
  text.replace(pos, needle.size(), "\"m\": " + std::to_string(ds.train[0].size() + 1));
  std::ofstream os(dir / "manifest.json");
  os << text;
  os.close();
  CHECK_THROWS_AS(load_bag(dir, ds.train[0].bag_id), std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("raster_order: fixpoint, reversal, and random permutations") {
  Dataset ds = synth_dataset(tiny_config());
  const InstanceBag& bag = ds.train[0];

  InstanceBag sorted = raster_order(bag);
  CHECK(sorted.coords == bag.coords);
  CHECK(sorted.embeddings == bag.embeddings);

  InstanceBag reversed = bag;
  std::reverse(reversed.coords.begin(), reversed.coords.end());
  std::vector<double> rev_emb;
  for (int i = bag.size() - 1; i >= 0; --i) {
    rev_emb.insert(rev_emb.end(), bag.embeddings.begin() + i * bag.embed_dim,
                   bag.embeddings.begin() + (i + 1) * bag.embed_dim);
  }
  reversed.embeddings = rev_emb;
  InstanceBag restored = raster_order(reversed);
  CHECK(restored.coords == bag.coords);
  CHECK(restored.embeddings == bag.embeddings);

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    InstanceBag shuffled = bag;
    std::vector<int> perm(bag.size());
    for (int i = 0; i < bag.size(); ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int i = 0; i < bag.size(); ++i) {
      shuffled.coords[i] = bag.coords[perm[i]];
      std::copy_n(&bag.embeddings[std::size_t(perm[i]) * bag.embed_dim], bag.embed_dim,
                  &shuffled.embeddings[std::size_t(i) * bag.embed_dim]);
    }
    InstanceBag again = raster_order(shuffled);
    for (int i = 1; i < again.size(); ++i) CHECK(again.coords[i - 1] < again.coords[i]);
    CHECK(again.embeddings == bag.embeddings);
  }
}

TEST_CASE("raster_order rejects duplicate coords") {
  Dataset ds = synth_dataset(tiny_config());
  InstanceBag bad = ds.train[0];
  bad.coords[1] = bad.coords[0];
  CHECK_THROWS_AS(raster_order(bad), std::invalid_argument);
}
