// SPDX-License-Identifier: Apache-2.0
//
// Bag data model, the on-disk dataset format, and the synthetic spatial-slide
// generator. A bag is one slide: M instance embeddings on a grid plus the
// ground-truth report. Bags are immutable after load.

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "migen/tensor.hpp"
#include "migen/vocab.hpp"

namespace migen {

struct BlobMeta {
  int subtype = -1;
  std::string subtype_name;
  int center_row = 0;
  int center_col = 0;
  int radius = 0;
  int diameter = 0;
  std::string quadrant;
};

struct InstanceBag {
  std::string bag_id;
  int embed_dim = 0;
  std::vector<double> embeddings;           // M x embed_dim, row-major
  std::vector<std::pair<int, int>> coords;  // (row, col) per instance, unique
  std::string report;
  int class_label = -1;  // -1 when absent
  std::optional<BlobMeta> blob;

  int size() const { return static_cast<int>(coords.size()); }
};

struct SynthConfig {
  int grid_side = 8;       // instances form a grid_side x grid_side raster
  int embed_dim = 32;
  int n_tissue_types = 3;  // background base vectors
  int subtype_count = 3;   // tumor subtypes (also the class labels)
  int min_radius = 1;
  int max_radius = 2;
  double noise_sigma = 0.1;
  int n_train = 512;
  int n_val = 64;
  int n_test = 128;
  int min_freq = 1;  // vocab threshold over training reports
  std::uint64_t seed = 1;
  // Templates with <subtype>, <d> and <quadrant> slots; one is chosen
  // uniformly per bag.
  std::vector<std::string> templates{
      "invasive <subtype> carcinoma measuring <d> units located in the "
      "<quadrant> quadrant"};
};

struct Dataset {
  std::vector<InstanceBag> train, val, test;
  Vocab vocab;

  const std::vector<InstanceBag>& split(const std::string& name) const;
};

// Subtype names the generator draws from (in label order).
const std::vector<std::string>& synth_subtype_names();

Dataset synth_dataset(const SynthConfig& cfg);

// Dataset directory layout: manifest.json (bag ids, shapes, splits, reports,
// blob metadata, coords), one <bag_id>.bin of M*embed_dim little-endian
// 64-bit floats in raster order per bag, and vocab.txt.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// Single-bag round trip against the same layout. save_bag updates the
// directory manifest in place.
void save_bag(const InstanceBag& bag, const std::filesystem::path& dir,
              const std::string& split = "train");
InstanceBag load_bag(const std::filesystem::path& dir, const std::string& bag_id);

// Canonical row-major order by (row, col); embeddings permuted consistently.
InstanceBag raster_order(const InstanceBag& bag);

// The bag's M x embed_dim embedding matrix as a constant tensor.
Tensor bag_matrix(const InstanceBag& bag);

}  // namespace migen
