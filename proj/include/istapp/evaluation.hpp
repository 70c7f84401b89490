#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "istapp/checkpoint.hpp"
#include "istapp/image_io.hpp"
#include "istapp/ista.hpp"
#include "istapp/metrics.hpp"
#include "istapp/net.hpp"
#include "istapp/sampling.hpp"
#include "istapp/serialization.hpp"
#include "istapp/training.hpp"

namespace istapp {

struct NamedImage {
  std::string name;
  ImagePlane image;
};

/// Reads every graymap of `dir` in name order; unreadable files are reported
/// through `warnings` and skipped.
inline std::vector<NamedImage> load_images(const std::filesystem::path& dir, std::vector<std::string>* warnings = nullptr) {
  std::vector<NamedImage> out;
  for (const auto& f : list_files(dir)) {
    try {
      out.push_back({f.filename().string(), pgm::read(f)});
    } catch (const IoError& e) {
      if (warnings) warnings->push_back(std::string("skipping ") + e.what());
    }
  }
  if (out.empty()) throw IoError("no readable images in " + dir.string());
  return out;
}

/// Recovery methods an evaluation can compare.
enum class Method { istanetpp, init, ista };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::istanetpp: return "istanetpp";
    case Method::init: return "init";
    case Method::ista: return "ista";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "istanetpp") return Method::istanetpp;
  if (s == "init") return Method::init;
  if (s == "ista") return Method::ista;
  throw DomainError("unknown method '" + s + "' (expected istanetpp, init or ista)");
}

struct EvalOptions {
  std::vector<Method> methods{Method::istanetpp, Method::init};
  double ista_lambda = 0.0;
  int ista_iters = 200;
};

struct EvalReport {
  struct Row {
    std::string image;
    double ratio = 0.0;
    std::string method;
    Psnr psnr;
    BlockArtifactScore artifact;
  };

  std::vector<Row> rows;
  std::vector<double> ratios;
  std::vector<std::string> methods;
  double seconds = 0.0;
  std::string config;  // echo of the evaluated configuration

  /// Rows matching (method, ratio) in insertion order.
  std::vector<const Row*> select(const std::string& method, double ratio) const {
    std::vector<const Row*> out;
    for (const Row& r : rows)
      if (r.method == method && r.ratio == ratio) out.push_back(&r);
    return out;
  }

  /// Arithmetic mean of the per-image PSNR values; infinite if any is.
  Psnr mean_psnr(const std::string& method, double ratio) const {
    const auto sel = select(method, ratio);
    if (sel.empty()) throw DomainError("no rows for method " + method);
    double s = 0.0;
    for (const Row* r : sel) {
      if (r->psnr.infinite) return Psnr{0.0, true};
      s += r->psnr.db;
    }
    return Psnr{s / static_cast<double>(sel.size()), false};
  }

  double mean_artifact(const std::string& method, double ratio) const {
    const auto sel = select(method, ratio);
    if (sel.empty()) throw DomainError("no rows for method " + method);
    double s = 0.0;
    for (const Row* r : sel) s += r->artifact.raw;
    return s / static_cast<double>(sel.size());
  }

  /// Mean over ratios of the per-ratio means.
  Psnr average_psnr(const std::string& method) const {
    double s = 0.0;
    for (double r : ratios) {
      const Psnr p = mean_psnr(method, r);
      if (p.infinite) return p;
      s += p.db;
    }
    return Psnr{s / static_cast<double>(ratios.size()), false};
  }

  double average_artifact(const std::string& method) const {
    double s = 0.0;
    for (double r : ratios) s += mean_artifact(method, r);
    return s / static_cast<double>(ratios.size());
  }
};

/// One image at one ratio: pad, measure with the checkpoint's operator,
/// recover, crop back.
inline ImagePlane recover(const ModelCheckpoint& ck, const ImagePlane& image, double ratio, Method method,
                          const EvalOptions& opt = {}) {
  const std::size_t B = ck.model.config().block_size;
  const PaddedImage padded = pad_to_blocks(image, B);
  const SamplingOperator& op = ck.operator_for(ratio);
  const Tensor y = measure(op, padded.image);
  Tensor x;
  switch (method) {
    case Method::istanetpp: x = reconstruct(ck.model, y, op, ratio).image; break;
    case Method::init: x = init_transpose(op, y); break;
    case Method::ista: {
      ista::IstaConfig cfg = ista::default_config(op, opt.ista_lambda);
      cfg.max_iters = opt.ista_iters;
      x = ista::run_ista(y, op, cfg).image;
      break;
    }
  }
  return crop_back(x, padded.height, padded.width);
}

/// PSNR and artifact score of every (image, ratio, method). The artifact
/// score is measured on the padded grid so block boundaries line up.
inline EvalReport evaluate(const ModelCheckpoint& ck, const std::vector<NamedImage>& images,
                           const std::vector<double>& ratios, const EvalOptions& opt = {}) {
  if (images.empty()) throw DomainError("evaluate: no images");
  if (ratios.empty()) throw DomainError("evaluate: no ratios");
  const auto start = std::chrono::steady_clock::now();
  const std::size_t B = ck.model.config().block_size;
  EvalReport rep;
  rep.ratios = ratios;
  for (Method m : opt.methods) rep.methods.push_back(method_name(m));
  for (double r : ratios) {
    check_ratio(r);
    ck.operator_for(r);
  }
  for (const NamedImage& img : images)
    for (double r : ratios)
      for (Method m : opt.methods) {
        const ImagePlane x = recover(ck, img.image, r, m, opt);
        rep.rows.push_back({img.name, r, method_name(m), psnr(x, img.image),
                            block_artifact_score(pad_to_blocks(x, B).image, B)});
      }
  const NetConfig& c = ck.model.config();
  rep.config = "K=" + std::to_string(c.stages) + " C=" + std::to_string(c.channels) + " B=" +
               std::to_string(c.block_size) + " dus_rho=" + (c.dus_rho ? "1" : "0") +
               " dus_sigma=" + (c.dus_sigma ? "1" : "0") + " cbs=" + (c.cbs ? "1" : "0") +
               " epoch=" + std::to_string(ck.epoch);
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

namespace detail {

inline std::string fixed(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

inline std::string pad_left(const std::string& s, std::size_t w) {
  return s.size() >= w ? s : std::string(w - s.size(), ' ') + s;
}

inline std::string pad_right(const std::string& s, std::size_t w) {
  return s.size() >= w ? s : s + std::string(w - s.size(), ' ');
}

}  // namespace detail

/// Aligned table: one row per ratio plus an average row, one PSNR column per
/// method and the artifact score of the first method.
inline std::string format_table(const EvalReport& rep) {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> head{"ratio"};
  for (const auto& m : rep.methods) head.push_back(m + " dB");
  head.push_back("artifact");
  cells.push_back(head);
  for (double r : rep.ratios) {
    std::vector<std::string> row{serial::format_double(r)};
    for (const auto& m : rep.methods) row.push_back(rep.mean_psnr(m, r).to_string(2));
    row.push_back(detail::fixed(rep.mean_artifact(rep.methods.front(), r), 4));
    cells.push_back(row);
  }
  std::vector<std::string> avg{"average"};
  for (const auto& m : rep.methods) avg.push_back(rep.average_psnr(m).to_string(2));
  avg.push_back(detail::fixed(rep.average_artifact(rep.methods.front()), 4));
  cells.push_back(avg);

  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& row : cells)
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  std::string out = "# " + rep.config + "\n";
  for (const auto& row : cells) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      out += i == 0 ? detail::pad_right(row[i], width[i]) : "  " + detail::pad_left(row[i], width[i]);
    }
    out += "\n";
  }
  out += "# " + std::to_string(rep.rows.size()) + " reconstructions in " + detail::fixed(rep.seconds, 2) + " s\n";
  return out;
}

/// Machine-readable per-reconstruction rows followed by per-ratio means.
/// Timing is left out so the file is reproducible byte for byte.
inline std::string format_csv(const EvalReport& rep) {
  std::string out = "kind,image,ratio,method,psnr_db,artifact_raw\n";
  auto db = [](const Psnr& p) { return p.infinite ? std::string("inf") : serial::format_double(p.db); };
  for (const auto& r : rep.rows) {
    out += "image," + r.image + "," + serial::format_double(r.ratio) + "," + r.method + "," + db(r.psnr) + "," +
           serial::format_double(r.artifact.raw) + "\n";
  }
  for (const auto& m : rep.methods) {
    for (double r : rep.ratios) {
      out += "mean,," + serial::format_double(r) + "," + m + "," + db(rep.mean_psnr(m, r)) + "," +
             serial::format_double(rep.mean_artifact(m, r)) + "\n";
    }
    out += "average,,," + m + "," + db(rep.average_psnr(m)) + "," + serial::format_double(rep.average_artifact(m)) + "\n";
  }
  return out;
}

/// Ablation switches of NetConfig by name.
inline bool& flag_ref(NetConfig& cfg, const std::string& name) {
  if (name == "dus_rho") return cfg.dus_rho;
  if (name == "dus_sigma") return cfg.dus_sigma;
  if (name == "cbs") return cfg.cbs;
  throw DomainError("unknown ablation flag '" + name + "' (expected dus_rho, dus_sigma or cbs)");
}

struct AblationRow {
  std::map<std::string, bool> flags;
  std::vector<Psnr> psnr;  // per ratio
  Psnr average;
  double artifact = 0.0;   // mean raw score over ratios
  double final_loss = 0.0;
};

struct AblationReport {
  std::vector<std::string> flags;
  std::vector<double> ratios;
  std::vector<AblationRow> rows;
};

/// Trains one model per on/off combination of `flags` (all other switches
/// as in `base`) with identical seeds and budget, then evaluates each.
inline AblationReport run_ablation(const NetConfig& base, const TrainConfig& tcfg, std::uint64_t operator_seed,
                                   const std::vector<std::string>& flags, const std::vector<ImagePlane>& train_patches,
                                   const std::vector<NamedImage>& test_images,
                                   const std::function<void(const std::string&)>& log = {}) {
  if (flags.size() > 3) throw DomainError("at most three ablation flags");
  AblationReport rep{flags, tcfg.ratios, {}};
  const std::size_t combos = std::size_t{1} << flags.size();
  for (std::size_t mask = 0; mask < combos; ++mask) {
    NetConfig cfg = base;
    AblationRow row;
    for (std::size_t i = 0; i < flags.size(); ++i) {
      const bool on = (mask >> i) & 1u;
      flag_ref(cfg, flags[i]) = on;
      row.flags[flags[i]] = on;
    }
    ModelCheckpoint ck = make_checkpoint(cfg, operator_seed);
    TrainConfig t = tcfg;
    t.checkpoint_dir.clear();
    const TrainResult tr = train(ck, t, train_patches);
    row.final_loss = tr.epoch_losses.empty() ? 0.0 : tr.epoch_losses.back();
    EvalOptions opt;
    opt.methods = {Method::istanetpp};
    const EvalReport ev = evaluate(ck, test_images, tcfg.ratios, opt);
    for (double r : tcfg.ratios) row.psnr.push_back(ev.mean_psnr("istanetpp", r));
    row.average = ev.average_psnr("istanetpp");
    row.artifact = ev.average_artifact("istanetpp");
    if (log) {
      std::string label;
      for (const auto& [k, v] : row.flags) label += k + "=" + (v ? "on " : "off ");
      log(label + "-> " + row.average.to_string(2) + " dB");
    }
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

inline std::string format_table(const AblationReport& rep) {
  std::string out;
  for (const auto& f : rep.flags) out += detail::pad_right(f, 10);
  for (double r : rep.ratios) out += detail::pad_left(serial::format_double(r), 8);
  out += detail::pad_left("average", 9) + detail::pad_left("artifact", 10) + "\n";
  for (const AblationRow& row : rep.rows) {
    for (const auto& f : rep.flags) out += detail::pad_right(row.flags.at(f) ? "on" : "off", 10);
    for (const Psnr& p : row.psnr) out += detail::pad_left(p.to_string(2), 8);
    out += detail::pad_left(row.average.to_string(2), 9) + detail::pad_left(detail::fixed(row.artifact, 4), 10) + "\n";
  }
  return out;
}

}  // namespace istapp
