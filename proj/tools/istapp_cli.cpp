// istapp: sampling, reconstruction, training and evaluation from the shell.
//
// Exit codes: 0 ok, 1 internal error, 2 usage, 3 I/O, 4 numeric failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "istapp/config_file.hpp"
#include "istapp/istapp.hpp"

namespace fs = std::filesystem;
using namespace istapp;

namespace {

constexpr int exit_usage = 2;
constexpr int exit_io = 3;
constexpr int exit_numeric = 4;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<double> parse_ratios(const std::string& list) {
  std::vector<double> out;
  for (auto part : serial::split(list, ',')) {
    const auto v = serial::parse_double(part);
    if (!v) throw UsageError("bad ratio '" + std::string(part) + "'");
    check_ratio(*v);
    out.push_back(*v);
  }
  if (out.empty()) throw UsageError("empty ratio list");
  return out;
}

std::vector<std::string> parse_names(const std::string& list) {
  std::vector<std::string> out;
  for (auto part : serial::split(list, ','))
    if (!part.empty()) out.emplace_back(part);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  serial::write_file_atomic(path, std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

struct SampleArgs {
  std::string in, out, ckpt;
  double ratio = 0.0;
  std::size_t block = 32;
  std::uint64_t seed = 0;
  bool orthonormal = false;
};

int run_sample(const SampleArgs& a, CLI::App& cmd) {
  check_ratio(a.ratio);
  const ImagePlane img = pgm::read(a.in);
  SamplingOperator op;
  if (!a.ckpt.empty()) {
    const ModelCheckpoint ck = checkpoint::load(a.ckpt);
    if (cmd.count("--block") && a.block != ck.model.config().block_size) {
      throw UsageError("--block " + std::to_string(a.block) + " differs from the checkpoint block size " +
                       std::to_string(ck.model.config().block_size));
    }
    op = ck.operator_for(a.ratio);
  } else {
    op = make_operator(a.block, a.ratio, a.seed, a.orthonormal);
  }
  const PaddedImage padded = pad_to_blocks(img, op.block_size);
  MeasurementFile m;
  m.block_size = op.block_size;
  m.ratio = a.ratio;
  m.seed = op.seed;
  m.orthonormal = op.orthonormal;
  m.image_height = padded.height;
  m.image_width = padded.width;
  m.values = measure(op, padded.image);
  measurement_io::save(a.out, m);
  std::printf("wrote %zu x %zu x %zu measurements (B=%zu, ratio %s, seed %llu) to %s\n", m.measurements(), m.rows(),
              m.cols(), m.block_size, serial::format_double(m.ratio).c_str(), static_cast<unsigned long long>(m.seed),
              a.out.c_str());
  return 0;
}

struct ReconstructArgs {
  std::string method = "istanetpp", meas, ckpt, out, ref;
  double lambda = 0.0;
  int iters = 200;
  bool extrapolate = false;
};

int run_reconstruct(const ReconstructArgs& a) {
  const MeasurementFile m = measurement_io::load(a.meas);
  Tensor x;
  if (a.method == "ista") {
    const SamplingOperator op = m.regenerate_operator();
    ista::IstaConfig cfg = ista::default_config(op, a.lambda);
    cfg.max_iters = a.iters;
    x = ista::run_ista(m.values, op, cfg).image;
  } else if (a.method == "istanetpp") {
    if (a.ckpt.empty()) throw UsageError("--method istanetpp needs --ckpt");
    const ModelCheckpoint ck = checkpoint::load(a.ckpt);
    if (ck.model.config().block_size != m.block_size) {
      throw UsageError("measurement block size " + std::to_string(m.block_size) + " differs from checkpoint block size " +
                       std::to_string(ck.model.config().block_size));
    }
    std::optional<SamplingOperator> op;
    for (const SamplingOperator& o : ck.operators)
      if (std::abs(o.ratio - m.ratio) <= 1e-12) op = o;
    if (op && (op->seed != m.seed || op->orthonormal != m.orthonormal)) {
      throw UsageError("measurements were taken with operator seed " + std::to_string(m.seed) +
                       " but the checkpoint holds seed " + std::to_string(op->seed) +
                       " for this ratio; sample with --ckpt");
    }
    if (!op) {
      if (!a.extrapolate) {
        throw UsageError("ratio " + serial::format_double(m.ratio) +
                         " is not a trained ratio of the checkpoint (use --allow-extrapolation)");
      }
      op = m.regenerate_operator();
      std::fprintf(stderr, "warning: ratio %s was not trained; extrapolated result is untested\n",
                   serial::format_double(m.ratio).c_str());
    }
    ReconstructOptions opts;
    opts.allow_extrapolation = a.extrapolate;
    x = reconstruct(ck.model, m.values, *op, m.ratio, opts).image;
  } else {
    throw UsageError("unknown method '" + a.method + "' (expected ista or istanetpp)");
  }
  const ImagePlane img = crop_back(x, m.image_height, m.image_width);
  pgm::write(a.out, img);
  std::printf("wrote %s (%zu x %zu)\n", a.out.c_str(), m.image_width, m.image_height);
  if (!a.ref.empty()) {
    const ImagePlane ref = pgm::read(a.ref);
    if (ref.shape() != img.shape()) throw UsageError("reference image size differs from the reconstruction");
    std::printf("PSNR: %s dB\n", psnr(pgm::quantized(img), ref).to_string(2).c_str());
  }
  return 0;
}

int run_train(const std::string& config_path) {
  const RunConfig rc = load_run_config(config_path);
  const Dataset ds = load_dataset(rc.train.dataset_dir, rc.train.patch_size, rc.net.block_size, rc.train.seed,
                                  rc.train.patches_per_image);
  for (const auto& w : ds.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  std::printf("dataset: %zu images, %zu patches, %zu skipped\n", ds.files.size(), ds.patches.size(), ds.skipped);

  const fs::path ckpt_path = rc.train.checkpoint_dir / "checkpoint.ckpt";
  ModelCheckpoint ck;
  if (rc.resume && fs::exists(ckpt_path)) {
    ck = checkpoint::load(ckpt_path, rc.net);
    std::printf("resuming from %s at epoch %llu\n", ckpt_path.c_str(), static_cast<unsigned long long>(ck.epoch));
  } else {
    ck = make_checkpoint(rc.net, rc.operator_seed);
  }
  std::printf("model: %zu parameters\n", ck.model.parameter_count());
  TrainHooks hooks;
  hooks.on_epoch = [](std::uint64_t epoch, double loss) {
    std::printf("epoch %llu loss %.6g\n", static_cast<unsigned long long>(epoch), loss);
    std::fflush(stdout);
  };
  train(ck, rc.train, ds.patches, hooks);
  std::printf("checkpoint: %s\n", ckpt_path.c_str());
  return 0;
}

struct EvalArgs {
  std::string ckpt, dataset, ratios = "0.1,0.2,0.3,0.4,0.5", csv = "report.csv", methods = "istanetpp,init";
};

int run_eval(const EvalArgs& a) {
  const std::vector<double> ratios = parse_ratios(a.ratios);
  EvalOptions opt;
  opt.methods.clear();
  for (const auto& m : parse_names(a.methods)) opt.methods.push_back(parse_method(m));
  if (opt.methods.empty()) throw UsageError("no methods given");
  const ModelCheckpoint ck = checkpoint::load(a.ckpt);
  std::vector<std::string> warnings;
  const auto images = load_images(a.dataset, &warnings);
  for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  const EvalReport rep = evaluate(ck, images, ratios, opt);
  std::fputs(format_table(rep).c_str(), stdout);
  write_text(a.csv, format_csv(rep));
  std::printf("csv: %s\n", a.csv.c_str());
  return 0;
}

int run_gradcheck(std::uint64_t seed) {
  bool ok = true;
  for (const auto& r : gradcheck::run_suite(seed)) {
    std::printf("%-4s %-32s probes %4zu  max rel err %.3e  (tol %.0e)\n", r.passed ? "ok" : "FAIL", r.name.c_str(),
                r.probes, r.max_rel_error, r.tolerance);
    ok = ok && r.passed;
  }
  std::printf("%s\n", ok ? "all gradient checks passed" : "gradient check FAILED");
  return ok ? 0 : exit_numeric;
}

struct AblateArgs {
  std::string flags = "dus_rho,dus_sigma,cbs", dataset, test_dataset, ratios = "0.1,0.3,0.5";
  std::size_t epochs = 10, stages = 5, channels = 8, block = 16, patch = 64, per_image = 3, batch = 4;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

int run_ablate(const AblateArgs& a) {
  const auto flags = parse_names(a.flags);
  if (flags.empty()) throw UsageError("no ablation flags given");
  NetConfig base;
  base.stages = a.stages;
  base.channels = a.channels;
  base.cm_hidden = 32;
  base.block_size = a.block;
  base.ratios = parse_ratios(a.ratios);
  base.seed = a.seed;
  for (const auto& f : flags) flag_ref(base, f);
  base.validate();
  TrainConfig t;
  t.epochs = a.epochs;
  t.batch_size = a.batch;
  t.lr = a.lr;
  t.ratios = base.ratios;
  t.patch_size = a.patch;
  t.patches_per_image = a.per_image;
  t.seed = a.seed;
  const Dataset ds = load_dataset(a.dataset, a.patch, a.block, a.seed, a.per_image);
  for (const auto& w : ds.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  const auto test = load_images(a.test_dataset.empty() ? a.dataset : a.test_dataset);
  const AblationReport rep = run_ablation(base, t, a.seed + 1, flags, ds.patches, test, [](const std::string& line) {
    std::fprintf(stderr, "%s\n", line.c_str());
  });
  std::fputs(format_table(rep).c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Block compressive sensing: sampling, unfolded-network reconstruction, training, evaluation"};
  app.require_subcommand(1);

  SampleArgs sa;
  auto* sample = app.add_subcommand("sample", "measure an image with a block Gaussian operator");
  sample->add_option("--in", sa.in, "input graymap")->required();
  sample->add_option("--ratio", sa.ratio, "CS ratio in (0, 1]")->required();
  sample->add_option("--block", sa.block, "block size B");
  sample->add_option("--seed", sa.seed, "operator seed");
  sample->add_option("--out", sa.out, "measurement file")->required();
  sample->add_option("--ckpt", sa.ckpt, "take the operator from a checkpoint");
  sample->add_flag("--orthonormal", sa.orthonormal, "orthonormalize the operator rows");

  ReconstructArgs ra;
  auto* recon = app.add_subcommand("reconstruct", "recover an image from a measurement file");
  recon->add_option("--method", ra.method, "ista or istanetpp");
  recon->add_option("--meas", ra.meas, "measurement file")->required();
  recon->add_option("--ckpt", ra.ckpt, "checkpoint (istanetpp)");
  recon->add_option("--out", ra.out, "output graymap")->required();
  recon->add_option("--ref", ra.ref, "reference image; prints PSNR");
  recon->add_option("--lambda", ra.lambda, "ista l1 weight");
  recon->add_option("--iters", ra.iters, "ista iterations");
  recon->add_flag("--allow-extrapolation", ra.extrapolate, "accept ratios the model was not trained on");

  std::string config;
  auto* trn = app.add_subcommand("train", "train a model from a key=value config file");
  trn->add_option("--config", config, "config file")->required();

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "multi-ratio PSNR report over a directory");
  ev->add_option("--ckpt", ea.ckpt, "checkpoint")->required();
  ev->add_option("--dataset", ea.dataset, "directory of graymaps")->required();
  ev->add_option("--ratios", ea.ratios, "comma-separated ratios");
  ev->add_option("--csv", ea.csv, "csv output path");
  ev->add_option("--methods", ea.methods, "istanetpp,init,ista");

  std::uint64_t gc_seed = 2024;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every backward rule");
  gc->add_option("--seed", gc_seed, "fixture seed");

  AblateArgs aa;
  auto* ab = app.add_subcommand("ablate", "train and compare every on/off combination of the given switches");
  ab->add_option("--flags", aa.flags, "subset of dus_rho,dus_sigma,cbs");
  ab->add_option("--dataset", aa.dataset, "training images")->required();
  ab->add_option("--test-dataset", aa.test_dataset, "held-out images (default: the training directory)");
  ab->add_option("--ratios", aa.ratios, "comma-separated ratios");
  ab->add_option("--epochs", aa.epochs, "epochs per configuration");
  ab->add_option("--stages", aa.stages, "K");
  ab->add_option("--channels", aa.channels, "C");
  ab->add_option("--block", aa.block, "B");
  ab->add_option("--patch", aa.patch, "patch size");
  ab->add_option("--patches-per-image", aa.per_image, "patches per image");
  ab->add_option("--batch", aa.batch, "batch size");
  ab->add_option("--lr", aa.lr, "learning rate");
  ab->add_option("--seed", aa.seed, "seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "istapp: error: %s\n", e.what());
    return exit_usage;
  }

  try {
    if (*sample) return run_sample(sa, *sample);
    if (*recon) return run_reconstruct(ra);
    if (*trn) return run_train(config);
    if (*ev) return run_eval(ea);
    if (*gc) return run_gradcheck(gc_seed);
    if (*ab) return run_ablate(aa);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "istapp: error: %s\n", e.what());
    return exit_usage;
  } catch (const std::invalid_argument& e) {  // ShapeError, DomainError
    std::fprintf(stderr, "istapp: error: %s\n", e.what());
    return exit_usage;
  } catch (const IoError& e) {
    std::fprintf(stderr, "istapp: error: %s\n", e.what());
    return exit_io;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "istapp: error: %s\n", e.what());
    return exit_io;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "istapp: error: %s\n", e.what());
    return exit_numeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "istapp: internal error: %s\n", e.what());
    return 1;
  }
  return exit_usage;
}
