#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "poecf/model.hpp"

namespace poecf {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Present when the checkpoint was trained on the concatenated single-domain
// view of a multi-domain dataset. `offsets[d]` is where domain d's item block
// starts inside the merged item space.
struct ConcatInfo {
  std::vector<std::int32_t> source_items;
  std::vector<std::int32_t> offsets;
};

struct CheckpointMeta {
  std::uint64_t seed = 0;
  long long step = 0;
  std::vector<double> lambda;
  std::string objective = "subsampled";
  std::optional<ConcatInfo> concat;
};

namespace ckpt_detail {

inline std::string tensor_file_name(std::string name) {
  for (char& c : name)
    if (c == '.') c = '_';
  return name + ".bin";
}

inline void write_f64_le(std::ofstream& out, const std::vector<double>& data) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
  } else {
    for (double v : data) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof(bits));
      char buf[8];
      for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
      out.write(buf, 8);
    }
  }
}

inline void read_f64_le(std::ifstream& in, std::vector<double>& data) {
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
  } else {
    for (double& v : data) {
      char buf[8];
      in.read(buf, 8);
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i)
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
      std::memcpy(&v, &bits, sizeof(v));
    }
  }
}

}  // namespace ckpt_detail

inline void save_checkpoint(const PoeModel& model, const std::filesystem::path& dir,
                            const CheckpointMeta& meta) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["k"] = model.latent_dim();
  manifest["hidden"] = model.hidden_dim();
  manifest["domains"] = model.domain_count();
  manifest["items"] = model.item_counts();
  manifest["normalize_input"] = model.config().normalize_input;
  manifest["normalize_at_inference"] = model.config().normalize_at_inference;
  manifest["prior_expert"] = model.config().prior_expert;
  manifest["seed"] = meta.seed;
  manifest["step"] = meta.step;
  manifest["lambda"] = meta.lambda;
  manifest["objective"] = meta.objective;
  if (meta.concat) {
    manifest["concat"]["source_items"] = meta.concat->source_items;
    manifest["concat"]["offsets"] = meta.concat->offsets;
  }
  nlohmann::json tensors = nlohmann::json::object();
  auto refs = const_cast<PoeModel&>(model).parameters();
  for (const auto& r : refs) {
    const std::string file = ckpt_detail::tensor_file_name(r.name);
    tensors[r.name] = {{"rows", r.tensor->rows}, {"cols", r.tensor->cols}, {"file", file}};
    std::ofstream out(dir / file, std::ios::binary);
    if (!out) throw CheckpointError("cannot write tensor file: " + (dir / file).string());
    ckpt_detail::write_f64_le(out, r.tensor->data);
    if (!out) throw CheckpointError("write failed for tensor: " + r.name);
  }
  manifest["tensors"] = tensors;
  std::ofstream mf(dir / "manifest.json", std::ios::binary);
  if (!mf) throw CheckpointError("cannot write checkpoint manifest in " + dir.string());
  mf << manifest.dump(2) << "\n";
}

struct LoadedCheckpoint {
  PoeModel model;
  CheckpointMeta meta;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw CheckpointError("cannot open checkpoint manifest: " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint manifest: ") + e.what());
  }

  ModelConfig cfg;
  cfg.latent_dim = manifest.at("k").get<int>();
  cfg.hidden_dim = manifest.at("hidden").get<int>();
  cfg.normalize_input = manifest.at("normalize_input").get<bool>();
  cfg.normalize_at_inference = manifest.at("normalize_at_inference").get<bool>();
  cfg.prior_expert = manifest.at("prior_expert").get<bool>();
  const auto items = manifest.at("items").get<std::vector<std::int32_t>>();
  const int domains = manifest.at("domains").get<int>();
  if (static_cast<int>(items.size()) != domains)
    throw CheckpointError("checkpoint manifest: domain count disagrees with item list");

  LoadedCheckpoint out{PoeModel(cfg, items, /*init_seed=*/0), {}};
  out.meta.seed = manifest.at("seed").get<std::uint64_t>();
  out.meta.step = manifest.at("step").get<long long>();
  out.meta.lambda = manifest.at("lambda").get<std::vector<double>>();
  out.meta.objective = manifest.at("objective").get<std::string>();
  if (manifest.contains("concat")) {
    ConcatInfo ci;
    ci.source_items = manifest["concat"].at("source_items").get<std::vector<std::int32_t>>();
    ci.offsets = manifest["concat"].at("offsets").get<std::vector<std::int32_t>>();
    out.meta.concat = std::move(ci);
  }

  const auto& tensors = manifest.at("tensors");
  auto refs = out.model.parameters();
  if (tensors.size() != refs.size())
    throw CheckpointError("checkpoint manifest: tensor count disagrees with domain count");
  for (auto& r : refs) {
    if (!tensors.contains(r.name)) throw CheckpointError("checkpoint missing tensor: " + r.name);
    const auto& t = tensors.at(r.name);
    if (t.at("rows").get<int>() != r.tensor->rows || t.at("cols").get<int>() != r.tensor->cols)
      throw CheckpointError("shape mismatch for tensor: " + r.name);
    const auto path = dir / t.at("file").get<std::string>();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("missing tensor file for: " + r.name);
    ckpt_detail::read_f64_le(in, r.tensor->data);
    if (!in || in.gcount() == 0 || in.peek() != std::char_traits<char>::eof()) {
      // Either a short read above or trailing bytes below.
      if (!in) throw CheckpointError("truncated tensor file for: " + r.name);
      throw CheckpointError("tensor file size mismatch for: " + r.name);
    }
    if (!r.tensor->all_finite()) throw CheckpointError("non-finite values in tensor: " + r.name);
  }
  return out;
}

}  // namespace poecf
