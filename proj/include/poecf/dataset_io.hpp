#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "poecf/dataset.hpp"

namespace poecf {

// On-disk layout of a dataset directory:
//
//   manifest.json            counts, thresholds, split spec, domain names
//   items_<d>.tsv            item_key <TAB> column id
//   train/users.tsv          user_key <TAB> row id
//   train/domain_<d>.sm      "U I_d NNZ" header, then "row col" lines
//   test/...                 same files for the test split
//
// The fold-in masking of the test split is recomputed at evaluation time from
// the manifest's seed and fold_in_fraction, so it never needs to be stored.

struct DatasetMeta {
  std::vector<std::string> domain_names;
  double binarize_threshold = 0.0;
  bool has_binarize_threshold = false;
  std::vector<std::int64_t> item_thresholds;
  std::int64_t min_user_interactions = 0;
  SplitSpec split;
  std::string source;  // "prepare" or "synth"
};

namespace io_detail {

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot open for writing: " + path.string());
  out << content;
  if (!out) throw DatasetError("write failed: " + path.string());
}

inline void write_index_map(const std::filesystem::path& path,
                            const std::vector<std::string>& keys) {
  std::ostringstream os;
  for (std::size_t i = 0; i < keys.size(); ++i) os << keys[i] << '\t' << i << '\n';
  write_text_file(path, os.str());
}

inline std::vector<std::string> read_index_map(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open index map: " + path.string());
  std::vector<std::string> keys;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DatasetError("malformed index map line in " + path.string());
    const auto id = std::stoll(line.substr(tab + 1));
    if (id != static_cast<std::int64_t>(keys.size()))
      throw DatasetError("index map ids not dense in " + path.string());
    keys.push_back(line.substr(0, tab));
  }
  return keys;
}

inline void write_sparse_matrix(const std::filesystem::path& path, const DomainDataset& dom,
                                std::int32_t user_count) {
  std::ostringstream os;
  os << user_count << ' ' << dom.item_count << ' ' << dom.total_interactions() << '\n';
  for (std::int32_t u = 0; u < user_count; ++u)
    for (auto col : dom.rows[static_cast<std::size_t>(u)]) os << u << ' ' << col << '\n';
  write_text_file(path, os.str());
}

inline void read_sparse_matrix(const std::filesystem::path& path, DomainDataset& dom,
                               std::int32_t user_count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open sparse matrix: " + path.string());
  std::int64_t u_hdr = 0, i_hdr = 0, nnz = 0;
  if (!(in >> u_hdr >> i_hdr >> nnz)) throw DatasetError("bad header in " + path.string());
  if (u_hdr != user_count || i_hdr != dom.item_count)
    throw DatasetError("sparse matrix header disagrees with manifest in " + path.string());
  dom.rows.assign(static_cast<std::size_t>(user_count), {});
  for (std::int64_t e = 0; e < nnz; ++e) {
    std::int64_t r = 0, c = 0;
    if (!(in >> r >> c)) throw DatasetError("truncated sparse matrix " + path.string());
    if (r < 0 || r >= user_count || c < 0 || c >= dom.item_count)
      throw DatasetError("entry out of range in " + path.string());
    dom.rows[static_cast<std::size_t>(r)].push_back(static_cast<std::int32_t>(c));
  }
  for (auto& row : dom.rows) {
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
  }
}

}  // namespace io_detail

inline void save_dataset_dir(const std::filesystem::path& dir, const DatasetMeta& meta,
                             const MultiDomainDataset& train, const MultiDomainDataset& test) {
  namespace fs = std::filesystem;
  const int d_count = train.domain_count();
  if (test.domain_count() != d_count) throw DatasetError("save_dataset_dir: split domain mismatch");
  fs::create_directories(dir / "train");
  fs::create_directories(dir / "test");

  nlohmann::json manifest;
  manifest["domains"] = d_count;
  manifest["domain_names"] = meta.domain_names;
  manifest["items"] = nlohmann::json::array();
  for (const auto& dom : train.domains) manifest["items"].push_back(dom.item_count);
  if (meta.has_binarize_threshold) manifest["binarize_threshold"] = meta.binarize_threshold;
  if (!meta.item_thresholds.empty()) manifest["item_thresholds"] = meta.item_thresholds;
  manifest["min_user_interactions"] = meta.min_user_interactions;
  manifest["seed"] = meta.split.seed;
  manifest["train_fraction"] = meta.split.train_fraction;
  manifest["fold_in_fraction"] = meta.split.fold_in_fraction;
  manifest["source"] = meta.source;
  for (const auto* split : {&train, &test}) {
    nlohmann::json s;
    s["users"] = split->user_count();
    s["interactions"] = nlohmann::json::array();
    for (const auto& dom : split->domains) s["interactions"].push_back(dom.total_interactions());
    manifest[split == &train ? "train" : "test"] = s;
  }
  io_detail::write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");

  for (int d = 0; d < d_count; ++d)
    io_detail::write_index_map(dir / ("items_" + std::to_string(d) + ".tsv"),
                               train.domains[static_cast<std::size_t>(d)].item_keys);
  for (const auto* split : {&train, &test}) {
    const fs::path sub = dir / (split == &train ? "train" : "test");
    io_detail::write_index_map(sub / "users.tsv", split->user_keys);
    for (int d = 0; d < d_count; ++d)
      io_detail::write_sparse_matrix(sub / ("domain_" + std::to_string(d) + ".sm"),
                                     split->domains[static_cast<std::size_t>(d)],
                                     split->user_count());
  }
}

inline nlohmann::json load_dataset_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DatasetError("cannot open manifest: " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  return manifest;
}

inline MultiDomainDataset load_dataset_split(const std::filesystem::path& dir,
                                             const std::string& split_name) {
  const nlohmann::json manifest = load_dataset_manifest(dir);
  const int d_count = manifest.at("domains").get<int>();
  MultiDomainDataset ds;
  ds.user_keys = io_detail::read_index_map(dir / split_name / "users.tsv");
  ds.domains.resize(static_cast<std::size_t>(d_count));
  for (int d = 0; d < d_count; ++d) {
    auto& dom = ds.domains[static_cast<std::size_t>(d)];
    dom.domain_id = d;
    dom.item_keys = io_detail::read_index_map(dir / ("items_" + std::to_string(d) + ".tsv"));
    dom.item_count = static_cast<std::int32_t>(dom.item_keys.size());
    if (dom.item_count != manifest.at("items").at(static_cast<std::size_t>(d)).get<std::int32_t>())
      throw DatasetError("item map size disagrees with manifest for domain " + std::to_string(d));
    io_detail::read_sparse_matrix(dir / split_name / ("domain_" + std::to_string(d) + ".sm"), dom,
                                  ds.user_count());
  }
  ds.presence = recompute_presence(ds);
  return ds;
}

inline SplitSpec load_split_spec(const std::filesystem::path& dir) {
  const nlohmann::json manifest = load_dataset_manifest(dir);
  SplitSpec spec;
  spec.seed = manifest.at("seed").get<std::uint64_t>();
  spec.train_fraction = manifest.at("train_fraction").get<double>();
  spec.fold_in_fraction = manifest.at("fold_in_fraction").get<double>();
  return spec;
}

}  // namespace poecf
