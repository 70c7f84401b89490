#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>

#include "istapp/error.hpp"
#include "istapp/net.hpp"
#include "istapp/serialization.hpp"
#include "istapp/training.hpp"

namespace istapp {

/// Everything a `train` run needs, as read from a key=value file.
struct RunConfig {
  NetConfig net;
  TrainConfig train;
  std::uint64_t operator_seed = 1;
  bool resume = false;
};

/// Parses key=value lines ('#' starts a comment). Relative paths are taken
/// relative to `base_dir`. Unknown keys are rejected.
inline RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir = {}) {
  static const std::set<std::string> known{
      "stages",     "channels",   "cm_hidden",         "block_size",  "ratios",        "dus_rho",
      "dus_sigma",  "cbs",        "seed",              "operator_seed", "epochs",      "batch_size",
      "lr",         "patch_size", "patches_per_image", "dataset_dir", "checkpoint_dir", "resume"};
  const serial::KeyValues kv = serial::KeyValues::parse(text);
  for (const auto& [k, v] : kv.entries())
    if (!known.count(k)) throw DomainError("unknown config key '" + k + "'");

  RunConfig rc;
  auto uint_or = [&](const char* key, std::uint64_t fallback) { return kv.find(key) ? kv.get_uint(key) : fallback; };
  auto bool_or = [&](const char* key, bool fallback) { return kv.find(key) ? kv.get_bool(key) : fallback; };
  auto path_or = [&](const char* key) -> std::filesystem::path {
    if (!kv.find(key)) return {};
    std::filesystem::path p = kv.get(key);
    return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
  };

  NetConfig& n = rc.net;
  n.stages = uint_or("stages", n.stages);
  n.channels = uint_or("channels", n.channels);
  n.cm_hidden = uint_or("cm_hidden", n.cm_hidden);
  n.block_size = uint_or("block_size", n.block_size);
  if (kv.find("ratios")) n.ratios = kv.get_doubles("ratios");
  n.dus_rho = bool_or("dus_rho", n.dus_rho);
  n.dus_sigma = bool_or("dus_sigma", n.dus_sigma);
  n.cbs = bool_or("cbs", n.cbs);
  n.seed = uint_or("seed", n.seed);

  TrainConfig& t = rc.train;
  t.epochs = uint_or("epochs", t.epochs);
  t.batch_size = uint_or("batch_size", t.batch_size);
  if (kv.find("lr")) t.lr = kv.get_double("lr");
  t.ratios = n.ratios;
  t.patch_size = uint_or("patch_size", t.patch_size);
  t.patches_per_image = uint_or("patches_per_image", t.patches_per_image);
  t.seed = n.seed;
  t.dataset_dir = path_or("dataset_dir");
  t.checkpoint_dir = path_or("checkpoint_dir");
  rc.operator_seed = uint_or("operator_seed", n.seed + 1);
  rc.resume = bool_or("resume", false);

  n.validate();
  t.validate(n.block_size);
  if (t.dataset_dir.empty()) throw DomainError("config needs dataset_dir");
  if (t.checkpoint_dir.empty()) throw DomainError("config needs checkpoint_dir");
  return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  const auto bytes = serial::read_file(path);
  const std::string text(bytes.begin(), bytes.end());
  try {
    return parse_run_config(text, path.parent_path());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.reason(), e.offset());
  }
}

}  // namespace istapp
