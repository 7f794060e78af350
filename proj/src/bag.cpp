// SPDX-License-Identifier: Apache-2.0

#include "migen/bag.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <stdexcept>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "bag files are little-endian; big-endian hosts are unsupported");

namespace migen {

using nlohmann::json;

namespace {

void replace_slot(std::string& text, const std::string& slot, const std::string& value) {
  const auto pos = text.find(slot);
  if (pos == std::string::npos) return;
  text.replace(pos, slot.size(), value);
}

std::string quadrant_name(int row, int col, int grid_side) {
  const int mid = grid_side / 2;
  std::string q = row < mid ? "upper" : "lower";
  q += col < mid ? "-left" : "-right";
  return q;
}

json bag_entry(const InstanceBag& bag, const std::string& split) {
  json e;
  e["bag_id"] = bag.bag_id;
  e["m"] = bag.size();
  e["embed_dim"] = bag.embed_dim;
  e["split"] = split;
  e["report"] = bag.report;
  if (bag.class_label >= 0) e["class_label"] = bag.class_label;
  json coords = json::array();
  for (const auto& [r, c] : bag.coords) coords.push_back(json::array({r, c}));
  e["coords"] = std::move(coords);
  if (bag.blob) {
    e["blob"] = {{"subtype", bag.blob->subtype},
                 {"subtype_name", bag.blob->subtype_name},
                 {"center", {bag.blob->center_row, bag.blob->center_col}},
                 {"radius", bag.blob->radius},
                 {"diameter", bag.blob->diameter},
                 {"quadrant", bag.blob->quadrant}};
  }
  return e;
}

InstanceBag bag_from_entry(const json& e) {
  InstanceBag bag;
  bag.bag_id = e.at("bag_id").get<std::string>();
  bag.embed_dim = e.at("embed_dim").get<int>();
  bag.report = e.at("report").get<std::string>();
  bag.class_label = e.value("class_label", -1);
  for (const auto& rc : e.at("coords")) {
    bag.coords.emplace_back(rc.at(0).get<int>(), rc.at(1).get<int>());
  }
  if (e.contains("blob")) {
    BlobMeta b;
    const auto& jb = e.at("blob");
    b.subtype = jb.at("subtype").get<int>();
    b.subtype_name = jb.at("subtype_name").get<std::string>();
    b.center_row = jb.at("center").at(0).get<int>();
    b.center_col = jb.at("center").at(1).get<int>();
    b.radius = jb.at("radius").get<int>();
    b.diameter = jb.at("diameter").get<int>();
    b.quadrant = jb.at("quadrant").get<std::string>();
    bag.blob = b;
  }
  return bag;
}

void write_embeddings(const InstanceBag& bag, const std::filesystem::path& file) {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw std::runtime_error("save_bag: cannot open " + file.string() +
                                    " for bag " + bag.bag_id);
  os.write(reinterpret_cast<const char*>(bag.embeddings.data()),
           static_cast<std::streamsize>(bag.embeddings.size() * sizeof(double)));
}

void read_embeddings(InstanceBag& bag, int expected_m, const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary | std::ios::ate);
  if (!is) throw std::runtime_error("load_bag: cannot open " + file.string() +
                                    " for bag " + bag.bag_id);
  const auto bytes = static_cast<std::size_t>(is.tellg());
  const std::size_t want =
      static_cast<std::size_t>(expected_m) * bag.embed_dim * sizeof(double);
  if (bytes != want) {
    throw std::runtime_error("load_bag: " + file.string() + " holds " +
                             std::to_string(bytes / sizeof(double)) +
                             " scalars, manifest expects " +
                             std::to_string(want / sizeof(double)) + " for bag " +
                             bag.bag_id);
  }
  bag.embeddings.resize(want / sizeof(double));
  is.seekg(0);
  is.read(reinterpret_cast<char*>(bag.embeddings.data()),
          static_cast<std::streamsize>(want));
  if (!is) throw std::runtime_error("load_bag: short read from " + file.string());
}

json load_manifest(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw std::runtime_error("dataset manifest not found in " + dir.string());
  json m;
  is >> m;
  return m;
}

void store_manifest(const json& m, const std::filesystem::path& dir) {
  std::ofstream os(dir / "manifest.json", std::ios::binary);
  if (!os) throw std::runtime_error("cannot write manifest in " + dir.string());
  os << m.dump(2) << '\n';
}

void validate_bag(const InstanceBag& bag) {
  if (bag.size() < 1) throw std::invalid_argument("bag " + bag.bag_id + " is empty");
  if (bag.embeddings.size() !=
      static_cast<std::size_t>(bag.size()) * bag.embed_dim) {
    throw std::invalid_argument("bag " + bag.bag_id + ": embedding matrix is not M x embed_dim");
  }
  std::set<std::pair<int, int>> uniq(bag.coords.begin(), bag.coords.end());
  if (uniq.size() != bag.coords.size()) {
    throw std::invalid_argument("bag " + bag.bag_id + " has duplicate grid coords");
  }
}

}  // namespace

const std::vector<InstanceBag>& Dataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw std::invalid_argument("unknown split '" + name + "' (train|val|test)");
}

const std::vector<std::string>& synth_subtype_names() {
  static const std::vector<std::string> names{
      "ductal", "lobular", "mucinous", "papillary",
      "tubular", "medullary", "metaplastic", "cribriform"};
  return names;
}

Dataset synth_dataset(const SynthConfig& cfg) {
  if (cfg.grid_side < 4) throw std::invalid_argument("synth: grid_side must be >= 4");
  if (cfg.embed_dim < 1) throw std::invalid_argument("synth: embed_dim must be >= 1");
  if (cfg.noise_sigma < 0) throw std::invalid_argument("synth: noise_sigma must be >= 0");
  if (cfg.min_radius < 1 || cfg.min_radius > cfg.max_radius) {
    throw std::invalid_argument("synth: need 1 <= min_radius <= max_radius");
  }
  if (cfg.max_radius >= (cfg.grid_side + 1) / 2) {
    throw std::invalid_argument("synth: max_radius " + std::to_string(cfg.max_radius) +
                                " does not fit a grid of side " +
                                std::to_string(cfg.grid_side));
  }
  if (cfg.subtype_count < 1 ||
      cfg.subtype_count > static_cast<int>(synth_subtype_names().size())) {
    throw std::invalid_argument("synth: subtype_count must be in [1," +
                                std::to_string(synth_subtype_names().size()) + "]");
  }
  if (cfg.templates.empty()) throw std::invalid_argument("synth: template set is empty");

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int l = cfg.embed_dim;

  auto unit_vector = [&] {
    std::vector<double> v(l);
    double norm = 0.0;
    for (double& x : v) {
      x = gauss(rng);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
  };
  std::vector<std::vector<double>> tissue_base(cfg.n_tissue_types);
  for (auto& v : tissue_base) v = unit_vector();
  std::vector<std::vector<double>> subtype_base(cfg.subtype_count);
  for (auto& v : subtype_base) v = unit_vector();

  const int g = cfg.grid_side;
  auto make_bag = [&](int index) {
    InstanceBag bag;
    char id[32];
    std::snprintf(id, sizeof(id), "bag_%05d", index);
    bag.bag_id = id;
    bag.embed_dim = l;

    const int tissue = static_cast<int>(rng() % cfg.n_tissue_types);
    const int subtype = static_cast<int>(rng() % cfg.subtype_count);
    const int radius =
        cfg.min_radius + static_cast<int>(rng() % (cfg.max_radius - cfg.min_radius + 1));
    const int lo = radius, hi = g - 1 - radius;
    const int cr = lo + static_cast<int>(rng() % (hi - lo + 1));
    const int cc = lo + static_cast<int>(rng() % (hi - lo + 1));

    bag.embeddings.resize(static_cast<std::size_t>(g) * g * l);
    for (int r = 0; r < g; ++r) {
      for (int c = 0; c < g; ++c) {
        bag.coords.emplace_back(r, c);
        const bool in_blob =
            (r - cr) * (r - cr) + (c - cc) * (c - cc) <= radius * radius;
        const auto& base = in_blob ? subtype_base[subtype] : tissue_base[tissue];
        double* row = &bag.embeddings[(static_cast<std::size_t>(r) * g + c) * l];
        for (int j = 0; j < l; ++j) row[j] = base[j] + cfg.noise_sigma * gauss(rng);
      }
    }

    BlobMeta blob;
    blob.subtype = subtype;
    blob.subtype_name = synth_subtype_names()[subtype];
    blob.center_row = cr;
    blob.center_col = cc;
    blob.radius = radius;
    blob.diameter = 2 * radius;
    blob.quadrant = quadrant_name(cr, cc, g);
    bag.blob = blob;
    bag.class_label = subtype;

    std::string report = cfg.templates[rng() % cfg.templates.size()];
    replace_slot(report, "<subtype>", blob.subtype_name);
    replace_slot(report, "<d>", std::to_string(blob.diameter));
    replace_slot(report, "<quadrant>", blob.quadrant);
    bag.report = report;
    return bag;
  };

  Dataset ds;
  int index = 0;
  for (int i = 0; i < cfg.n_train; ++i) ds.train.push_back(make_bag(index++));
  for (int i = 0; i < cfg.n_val; ++i) ds.val.push_back(make_bag(index++));
  for (int i = 0; i < cfg.n_test; ++i) ds.test.push_back(make_bag(index++));

  std::vector<std::string> corpus;
  corpus.reserve(ds.train.size());
  for (const auto& bag : ds.train) corpus.push_back(bag.report);
  ds.vocab = build_vocab(corpus, cfg.min_freq);
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["format"] = "migen-dataset-v1";
  manifest["bags"] = json::array();
  auto dump_split = [&](const std::vector<InstanceBag>& bags, const char* split) {
    for (const auto& bag : bags) {
      validate_bag(bag);
      manifest["bags"].push_back(bag_entry(bag, split));
      write_embeddings(bag, dir / (bag.bag_id + ".bin"));
    }
  };
  dump_split(ds.train, "train");
  dump_split(ds.val, "val");
  dump_split(ds.test, "test");
  store_manifest(manifest, dir);
  save_vocab(ds.vocab, dir / "vocab.txt");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const json manifest = load_manifest(dir);
  Dataset ds;
  std::set<std::string> seen;
  for (const auto& e : manifest.at("bags")) {
    InstanceBag bag = bag_from_entry(e);
    if (!seen.insert(bag.bag_id).second) {
      throw std::runtime_error("dataset manifest lists bag " + bag.bag_id + " twice");
    }
    read_embeddings(bag, e.at("m").get<int>(), dir / (bag.bag_id + ".bin"));
    if (static_cast<int>(bag.coords.size()) != e.at("m").get<int>()) {
      throw std::runtime_error("bag " + bag.bag_id + ": coords do not match manifest M");
    }
    validate_bag(bag);
    const std::string split = e.at("split").get<std::string>();
    if (split == "train") ds.train.push_back(std::move(bag));
    else if (split == "val") ds.val.push_back(std::move(bag));
    else if (split == "test") ds.test.push_back(std::move(bag));
    else throw std::runtime_error("bag " + bag.bag_id + " has unknown split '" + split + "'");
  }
  ds.vocab = load_vocab(dir / "vocab.txt");
  return ds;
}

void save_bag(const InstanceBag& bag, const std::filesystem::path& dir,
              const std::string& split) {
  validate_bag(bag);
  std::filesystem::create_directories(dir);
  json manifest;
  if (std::filesystem::exists(dir / "manifest.json")) {
    manifest = load_manifest(dir);
  } else {
    manifest["format"] = "migen-dataset-v1";
    manifest["bags"] = json::array();
  }
  auto& bags = manifest["bags"];
  json entry = bag_entry(bag, split);
  bool replaced = false;
  for (auto& e : bags) {
    if (e.at("bag_id") == bag.bag_id) {
      e = entry;
      replaced = true;
      break;
    }
  }
  if (!replaced) bags.push_back(std::move(entry));
  write_embeddings(bag, dir / (bag.bag_id + ".bin"));
  store_manifest(manifest, dir);
}

InstanceBag load_bag(const std::filesystem::path& dir, const std::string& bag_id) {
  const json manifest = load_manifest(dir);
  for (const auto& e : manifest.at("bags")) {
    if (e.at("bag_id") != bag_id) continue;
    InstanceBag bag = bag_from_entry(e);
    read_embeddings(bag, e.at("m").get<int>(), dir / (bag_id + ".bin"));
    validate_bag(bag);
    return bag;
  }
  throw std::runtime_error("bag " + bag_id + " not listed in " +
                           (dir / "manifest.json").string());
}

InstanceBag raster_order(const InstanceBag& bag) {
  validate_bag(bag);
  std::vector<int> perm(bag.size());
  for (int i = 0; i < bag.size(); ++i) perm[i] = i;
  std::sort(perm.begin(), perm.end(), [&](int a, int b) {
    return bag.coords[a] < bag.coords[b];
  });
  InstanceBag out = bag;
  for (int i = 0; i < bag.size(); ++i) {
    out.coords[i] = bag.coords[perm[i]];
    std::copy_n(&bag.embeddings[static_cast<std::size_t>(perm[i]) * bag.embed_dim],
                bag.embed_dim,
                &out.embeddings[static_cast<std::size_t>(i) * bag.embed_dim]);
  }
  return out;
}

Tensor bag_matrix(const InstanceBag& bag) {
  return Tensor::from_data({bag.size(), bag.embed_dim}, bag.embeddings);
}

}  // namespace migen
