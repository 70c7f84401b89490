#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "istapp/adam.hpp"
#include "istapp/error.hpp"
#include "istapp/net.hpp"
#include "istapp/sampling.hpp"
#include "istapp/serialization.hpp"

namespace istapp {

/// Everything needed to resume training or to reconstruct reproducibly.
struct ModelCheckpoint {
  Model model;
  std::vector<SamplingOperator> operators;  // one per configured ratio, ascending
  AdamState adam;
  std::uint64_t epoch = 0;
  double running_loss = 0.0;

  /// Operator for ratio `gamma` (exact match up to 1e-12).
  const SamplingOperator& operator_for(double gamma) const {
    for (const SamplingOperator& op : operators)
      if (std::abs(op.ratio - gamma) <= 1e-12) return op;
    throw DomainError("checkpoint has no sampling operator for ratio " + serial::format_double(gamma));
  }
};

/// Fresh state: initialized model, ratio-set operators seeded from
/// `operator_seed`, empty optimizer.
inline ModelCheckpoint make_checkpoint(const NetConfig& cfg, std::uint64_t operator_seed, AdamHyper hyper = {}) {
  cfg.validate();
  ModelCheckpoint ck{Model(cfg), make_ratio_set(cfg.block_size, cfg.ratios, operator_seed), {}, 0, 0.0};
  ck.adam.hyper = hyper;
  return ck;
}

namespace checkpoint {

inline constexpr std::string_view magic = "ISTAPP01";
inline constexpr std::uint64_t format_version = 1;

namespace detail {

inline void write_config(serial::KeyValues& kv, const NetConfig& cfg) {
  kv.set("stages", std::to_string(cfg.stages));
  kv.set("channels", std::to_string(cfg.channels));
  kv.set("cm_hidden", std::to_string(cfg.cm_hidden));
  kv.set("block_size", std::to_string(cfg.block_size));
  kv.set("ratios", serial::join(cfg.ratios));
  kv.set("dus_rho", cfg.dus_rho ? "1" : "0");
  kv.set("dus_sigma", cfg.dus_sigma ? "1" : "0");
  kv.set("cbs", cfg.cbs ? "1" : "0");
  kv.set("seed", std::to_string(cfg.seed));
}

inline NetConfig read_config(const serial::KeyValues& kv) {
  NetConfig cfg;
  cfg.stages = kv.get_uint("stages");
  cfg.channels = kv.get_uint("channels");
  cfg.cm_hidden = kv.get_uint("cm_hidden");
  cfg.block_size = kv.get_uint("block_size");
  cfg.ratios = kv.get_doubles("ratios");
  cfg.dus_rho = kv.get_bool("dus_rho");
  cfg.dus_sigma = kv.get_bool("dus_sigma");
  cfg.cbs = kv.get_bool("cbs");
  cfg.seed = kv.get_uint("seed");
  try {
    cfg.validate();
  } catch (const DomainError& e) {
    throw FormatError(std::string("invalid model config: ") + e.what(), kv.offset_of("stages"));
  }
  return cfg;
}

}  // namespace detail

/// Byte image of a checkpoint:
///   "ISTAPP01" | u64 LE header length | key=value header |
///   f64 LE: parameters (Model::parameters() order), phi per ratio, then
///   Adam first and second moments in parameter order (when present).
inline std::vector<unsigned char> encode(const ModelCheckpoint& ck) {
  const NetConfig& cfg = ck.model.config();
  if (ck.operators.size() != cfg.ratios.size()) throw ShapeError("checkpoint: one operator per ratio required");
  const auto params = ck.model.parameters();
  const bool has_moments = !ck.adam.m.empty();
  if (has_moments && (ck.adam.m.size() != params.size() || ck.adam.v.size() != params.size())) {
    throw ShapeError("checkpoint: optimizer state does not match the parameter list");
  }

  serial::KeyValues kv;
  kv.set("format_version", std::to_string(format_version));
  detail::write_config(kv, cfg);
  std::vector<std::uint64_t> seeds, rows;
  std::vector<double> op_ratios;
  std::vector<std::uint64_t> ortho;
  for (std::size_t i = 0; i < ck.operators.size(); ++i) {
    const SamplingOperator& op = ck.operators[i];
    if (op.block_size != cfg.block_size || std::abs(op.ratio - cfg.ratios[i]) > 1e-12) {
      throw ShapeError("checkpoint: operator " + std::to_string(i) + " does not match the configured ratios");
    }
    seeds.push_back(op.seed);
    rows.push_back(op.measurements);
    ortho.push_back(op.orthonormal ? 1 : 0);
  }
  kv.set("operator_seeds", serial::join(seeds));
  kv.set("operator_rows", serial::join(rows));
  kv.set("operator_orthonormal", serial::join(ortho));
  kv.set("adam_lr", serial::format_double(ck.adam.hyper.lr));
  kv.set("adam_beta1", serial::format_double(ck.adam.hyper.beta1));
  kv.set("adam_beta2", serial::format_double(ck.adam.hyper.beta2));
  kv.set("adam_eps", serial::format_double(ck.adam.hyper.eps));
  kv.set("adam_t", std::to_string(ck.adam.t));
  kv.set("adam_moments", has_moments ? "1" : "0");
  kv.set("epoch", std::to_string(ck.epoch));
  kv.set("running_loss", serial::format_double(ck.running_loss));

  std::vector<unsigned char> out = serial::frame(magic, kv.to_string());
  for (const Parameter* p : params) serial::put_f64(out, p->value.data());
  for (const SamplingOperator& op : ck.operators) serial::put_f64(out, op.phi.data());
  if (has_moments) {
    for (const Tensor& m : ck.adam.m) serial::put_f64(out, m.data());
    for (const Tensor& v : ck.adam.v) serial::put_f64(out, v.data());
  }
  return out;
}

/// Parses a checkpoint image. Magic and version are validated before any
/// numeric data is touched; every failure reports the byte offset.
inline ModelCheckpoint decode(std::span<const unsigned char> bytes) {
  serial::Reader in(bytes);
  const serial::KeyValues kv = serial::unframe(in, magic, "checkpoint");
  if (const auto v = kv.get_uint("format_version"); v != format_version) {
    throw FormatError("unsupported checkpoint version " + std::to_string(v) + " (expected " +
                          std::to_string(format_version) + ")",
                      kv.offset_of("format_version"));
  }
  const NetConfig cfg = detail::read_config(kv);
  const auto seeds = kv.get_uints("operator_seeds");
  const auto rows = kv.get_uints("operator_rows");
  const auto ortho = kv.get_uints("operator_orthonormal");
  const std::size_t n_ops = cfg.ratios.size();
  if (seeds.size() != n_ops || rows.size() != n_ops || ortho.size() != n_ops) {
    throw FormatError("operator lists do not match the ratio count", kv.offset_of("operator_seeds"));
  }
  const std::size_t N = cfg.block_size * cfg.block_size;
  for (std::uint64_t m : rows)
    if (m < 1 || m > N) throw FormatError("operator row count out of range", kv.offset_of("operator_rows"));

  ModelCheckpoint ck;
  ck.model = Model(cfg);
  ck.adam.hyper = {kv.get_double("adam_lr"), kv.get_double("adam_beta1"), kv.get_double("adam_beta2"),
                   kv.get_double("adam_eps")};
  ck.adam.t = kv.get_uint("adam_t");
  ck.epoch = kv.get_uint("epoch");
  ck.running_loss = kv.get_double("running_loss");
  const bool has_moments = kv.get_bool("adam_moments");

  // Check the total payload size up front so truncation is reported before any array is read.
  std::size_t doubles = ck.model.parameter_count();
  for (std::uint64_t m : rows) doubles += static_cast<std::size_t>(m) * N;
  if (has_moments) doubles += 2 * ck.model.parameter_count();
  if (in.remaining() / 8 < doubles) in.need(8 * doubles, "checkpoint payload");
  if (in.remaining() != 8 * doubles) {
    throw FormatError("trailing bytes after checkpoint payload", in.pos() + 8 * doubles);
  }

  for (Parameter* p : ck.model.parameters()) in.f64(p->value.data(), "parameter " + p->name);
  for (std::size_t i = 0; i < n_ops; ++i) {
    Tensor phi({static_cast<std::size_t>(rows[i]), N});
    in.f64(phi.data(), "sampling matrix");
    ck.operators.push_back(operator_from_matrix(cfg.block_size, cfg.ratios[i], seeds[i], std::move(phi), ortho[i] != 0));
  }
  if (has_moments) {
    for (auto* buffers : {&ck.adam.m, &ck.adam.v})
      for (const Parameter* p : ck.model.parameters()) {
        buffers->push_back(Tensor::zeros_like(p->value));
        in.f64(buffers->back().data(), "optimizer state");
      }
  }
  return ck;
}

inline void save(const std::filesystem::path& path, const ModelCheckpoint& ck) {
  serial::write_file_atomic(path, encode(ck));
}

inline ModelCheckpoint load(const std::filesystem::path& path) {
  const auto bytes = serial::read_file(path);
  try {
    return decode(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.reason(), e.offset());
  }
}

/// Loads and checks that the stored architecture matches `expected`
/// (seed excluded: it only affects initialization).
inline ModelCheckpoint load(const std::filesystem::path& path, const NetConfig& expected) {
  ModelCheckpoint ck = load(path);
  NetConfig got = ck.model.config();
  got.seed = expected.seed;
  if (!(got == expected)) {
    const NetConfig& c = ck.model.config();
    throw ShapeError(path.string() + ": checkpoint architecture (K=" + std::to_string(c.stages) +
                     ", C=" + std::to_string(c.channels) + ", B=" + std::to_string(c.block_size) +
                     ", ratios=" + serial::join(c.ratios) + ") does not match the expected one (K=" +
                     std::to_string(expected.stages) + ", C=" + std::to_string(expected.channels) +
                     ", B=" + std::to_string(expected.block_size) + ", ratios=" + serial::join(expected.ratios) + ")");
  }
  return ck;
}

}  // namespace checkpoint

}  // namespace istapp
