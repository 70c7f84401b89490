#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "istapp/adam.hpp"
#include "istapp/autodiff.hpp"
#include "istapp/checkpoint.hpp"
#include "istapp/error.hpp"
#include "istapp/image_io.hpp"
#include "istapp/net.hpp"
#include "istapp/ops.hpp"
#include "istapp/sampling.hpp"
#include "istapp/serialization.hpp"

namespace istapp {

struct TrainConfig {
  std::size_t epochs = 1;  // epochs to run in this call (resumed runs continue the counter)
  std::size_t batch_size = 64;
  double lr = 1e-4;
  std::vector<double> ratios{0.1, 0.2, 0.3, 0.4, 0.5};
  std::size_t patch_size = 96;
  std::size_t patches_per_image = 4;
  std::uint64_t seed = 0;
  std::filesystem::path dataset_dir;
  std::filesystem::path checkpoint_dir;  // empty: no per-epoch checkpoint

  void validate(std::size_t block_size) const {
    if (batch_size < 1) throw DomainError("batch_size must be at least 1");
    if (patch_size == 0 || patch_size % block_size != 0) {
      throw DomainError("patch_size " + std::to_string(patch_size) + " is not a positive multiple of block size " +
                        std::to_string(block_size));
    }
    if (patches_per_image < 1) throw DomainError("patches_per_image must be at least 1");
    if (ratios.empty()) throw DomainError("training needs at least one ratio");
    for (double r : ratios) check_ratio(r);
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw DomainError("learning rate must be finite and nonnegative");
  }
};

struct Dataset {
  std::vector<ImagePlane> patches;
  std::vector<std::filesystem::path> files;  // successfully read, in load order
  std::size_t skipped = 0;
  std::vector<std::string> warnings;
};

/// Regular files of `dir` in lexicographic order.
inline std::vector<std::filesystem::path> list_files(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  return files;
}

/// Random square crops; images smaller than the patch are reflect-padded first.
inline std::vector<ImagePlane> extract_patches(const ImagePlane& img, std::size_t patch, std::size_t count,
                                               std::mt19937_64& rng) {
  const std::size_t H = std::max(img.dim(1), patch), W = std::max(img.dim(2), patch);
  std::vector<ImagePlane> out;
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t y0 = std::uniform_int_distribution<std::size_t>(0, H - patch)(rng);
    const std::size_t x0 = std::uniform_int_distribution<std::size_t>(0, W - patch)(rng);
    ImagePlane p({1, patch, patch});
    for (std::size_t y = 0; y < patch; ++y)
      for (std::size_t x = 0; x < patch; ++x)
        p.at(0, y, x) = img.at(0, reflect_index(static_cast<std::ptrdiff_t>(y0 + y), img.dim(1)),
                               reflect_index(static_cast<std::ptrdiff_t>(x0 + x), img.dim(2)));
    out.push_back(std::move(p));
  }
  return out;
}

/// Reads every graymap in `dir` (sorted by name) and cuts `patches_per_image`
/// seeded random patches from each. Unreadable files are skipped and counted.
inline Dataset load_dataset(const std::filesystem::path& dir, std::size_t patch_size, std::size_t block_size,
                            std::uint64_t seed, std::size_t patches_per_image = 4) {
  if (block_size < 2 || patch_size == 0 || patch_size % block_size != 0) {
    throw DomainError("patch size must be a positive multiple of the block size");
  }
  const auto files = list_files(dir);
  if (files.empty()) throw IoError("dataset directory is empty: " + dir.string());
  Dataset ds;
  std::mt19937_64 rng(seed);
  for (const auto& f : files) {
    ImagePlane img;
    try {
      img = pgm::read(f);
    } catch (const IoError& e) {
      ++ds.skipped;
      ds.warnings.push_back(std::string("skipping ") + e.what());
      continue;
    }
    ds.files.push_back(f);
    for (auto& p : extract_patches(img, patch_size, patches_per_image, rng)) ds.patches.push_back(std::move(p));
  }
  if (ds.files.empty()) throw IoError("no readable images in " + dir.string());
  return ds;
}

/// Squared error of one reconstruction, summed over pixels.
template <class M>
Var reconstruction_error(Graph& g, M& model, const ImagePlane& target, const SamplingOperator& op) {
  const Var x(target);
  const std::vector<Var> trace = reconstruct_trace(g, model, measure(op, x), op, op.ratio);
  return ops::sum_squares(ops::sub(trace.back(), x));
}

/// sum_i sum_t ||H(Y_it, Phi_t, gamma_t) - X_i||^2 / (N_D * N_gamma).
template <class M>
Var batch_loss(Graph& g, M& model, const std::vector<ImagePlane>& batch, const std::vector<SamplingOperator>& ops) {
  if (batch.empty()) throw DomainError("batch_loss: empty batch");
  if (ops.empty()) throw DomainError("batch_loss: empty ratio set");
  Var total;
  bool first = true;
  for (const ImagePlane& img : batch)
    for (const SamplingOperator& op : ops) {
      const Var e = reconstruction_error(g, model, img, op);
      total = first ? e : ops::add(total, e);
      first = false;
    }
  return ops::mul_const(total, 1.0 / static_cast<double>(batch.size() * ops.size()));
}

/// Loss of the current parameters over a whole image set (no gradients).
inline double dataset_loss(const Model& model, const std::vector<ImagePlane>& images,
                           const std::vector<SamplingOperator>& ops) {
  Graph g(Graph::Mode::inference);
  double sum = 0.0;
  for (const ImagePlane& img : images)
    for (const SamplingOperator& op : ops) sum += reconstruction_error(g, model, img, op).value().item();
  return sum / static_cast<double>(images.size() * ops.size());
}

/// Operators of `ck` for the given ratios, in the given order.
inline std::vector<SamplingOperator> select_operators(const ModelCheckpoint& ck, const std::vector<double>& ratios) {
  std::vector<SamplingOperator> out;
  for (double r : ratios) out.push_back(ck.operator_for(r));
  return out;
}

struct TrainResult {
  std::vector<double> epoch_losses;  // mean batch loss of each epoch run in this call
  std::vector<double> batch_losses;
};

struct TrainHooks {
  std::function<void(std::uint64_t epoch, double loss)> on_epoch;
};

namespace detail {

inline std::uint64_t epoch_seed(std::uint64_t seed, std::uint64_t epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

[[noreturn]] inline void report_non_finite(const Model& model, const ImagePlane& img, const SamplingOperator& op,
                                           std::uint64_t epoch, std::size_t batch) {
  Graph g(Graph::Mode::inference);
  const auto trace = reconstruct_trace(g, model, measure(op, Var(img)), op, op.ratio);
  std::string where = "the loss itself";
  for (std::size_t k = 0; k < trace.size(); ++k)
    if (!trace[k].value().all_finite()) {
      where = k == 0 ? "the initialization" : "stage " + std::to_string(k);
      break;
    }
  throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                     std::to_string(batch + 1) + ", ratio " + serial::format_double(op.ratio) + ": output of " +
                     where + " is the first non-finite value");
}

}  // namespace detail

/// Runs cfg.epochs epochs of minibatch Adam on the multi-ratio loss.
///
/// Each epoch shuffles the patches with a generator seeded by (cfg.seed,
/// epoch), evaluates every batch over all cfg.ratios, and writes
/// `checkpoint.ckpt` into cfg.checkpoint_dir (when set) after the epoch.
/// Gradients are accumulated image by image, which equals the gradient of
/// batch_loss over the whole batch.
inline TrainResult train(ModelCheckpoint& ck, const TrainConfig& cfg, const std::vector<ImagePlane>& patches,
                         const TrainHooks& hooks = {}) {
  Model& model = ck.model;
  cfg.validate(model.config().block_size);
  if (patches.empty()) throw DomainError("train: no training patches");
  for (const ImagePlane& p : patches)
    if (p.shape() != Shape{1, cfg.patch_size, cfg.patch_size}) {
      throw ShapeError("train: patch " + shape_string(p.shape()) + " does not match patch_size " +
                       std::to_string(cfg.patch_size));
    }
  const std::vector<SamplingOperator> ops = select_operators(ck, cfg.ratios);
  if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);
  ck.adam.hyper.lr = cfg.lr;
  const std::vector<Parameter*> params = model.parameters();

  TrainResult result;
  std::vector<std::size_t> order(patches.size());
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const std::uint64_t epoch = ck.epoch + 1;
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(detail::epoch_seed(cfg.seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_sum = 0.0;
    const std::size_t n_batches = (order.size() + cfg.batch_size - 1) / cfg.batch_size;
    for (std::size_t b = 0; b < n_batches; ++b) {
      const std::size_t begin = b * cfg.batch_size, end = std::min(order.size(), begin + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>((end - begin) * ops.size());
      model.zero_grad();
      double batch = 0.0;
      for (std::size_t i = begin; i < end; ++i) {
        const ImagePlane& img = patches[order[i]];
        Graph g;
        Var loss;
        bool first = true;
        for (const SamplingOperator& op : ops) {
          const Var err = reconstruction_error(g, model, img, op);
          if (!std::isfinite(err.value().item())) detail::report_non_finite(model, img, op, epoch, b);
          loss = first ? err : ops::add(loss, err);
          first = false;
        }
        loss = ops::mul_const(loss, scale);
        batch += loss.value().item();
        g.backward(loss);
      }
      adam_step(params, ck.adam);
      for (const Parameter* p : params)
        if (!p->value.all_finite()) {
          throw NumericError("parameter " + p->name + " became non-finite after the update at epoch " +
                             std::to_string(epoch) + ", batch " + std::to_string(b + 1));
        }
      result.batch_losses.push_back(batch);
      epoch_sum += batch * static_cast<double>(end - begin);
    }
    ck.epoch = epoch;
    ck.running_loss = epoch_sum / static_cast<double>(order.size());
    result.epoch_losses.push_back(ck.running_loss);
    if (!cfg.checkpoint_dir.empty()) checkpoint::save(cfg.checkpoint_dir / "checkpoint.ckpt", ck);
    if (hooks.on_epoch) hooks.on_epoch(epoch, ck.running_loss);
  }
  return result;
}

}  // namespace istapp
