#pragma once

// Commands behind the CLI and the HTTP service: training, inversion,
// direction discovery, editing, analysis and ablation. Every command writes
// its artifacts plus a manifest.json (config hash, seeds, metrics, file
// digests) and is deterministic given the configuration.

#include "semdir/analysis.hpp"
#include "semdir/artifacts.hpp"
#include "semdir/blobs.hpp"
#include "semdir/checkpoint.hpp"
#include "semdir/config.hpp"
#include "semdir/digest.hpp"
#include "semdir/directions.hpp"
#include "semdir/editing.hpp"
#include "semdir/experiments.hpp"
#include "semdir/image_io.hpp"
#include "semdir/report.hpp"
#include "semdir/sampling.hpp"
#include "semdir/train.hpp"

#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace semdir {

inline constexpr const char* kVersion = "1.0.0";

namespace fs = std::filesystem;

// --------------------------------------------------------------- manifest --

inline json manifest_base(const std::string& command, const RunConfig& cfg) {
  return json{{"command", command},
              {"version", kVersion},
              {"config_sha256", cfg.hash()},
              {"seeds",
               {{"data", cfg.dataset_seed},
                {"train", cfg.train.seed},
                {"discover", cfg.discover_seed},
                {"analysis", cfg.analysis_seed},
                {"ablation", cfg.ablation_seed}}}};
}

/// Adds the SHA-256 of each listed file (relative to dir) and writes
/// dir/manifest.json.
inline void write_manifest(const fs::path& dir, json manifest, const std::vector<std::string>& files) {
  json digests = json::object();
  for (const auto& f : files) digests[f] = sha256_hex(read_text(dir / f));
  manifest["files"] = digests;
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

// ------------------------------------------------------------------ model --

inline EpsilonModel load_model(const RunConfig& cfg) {
  cfg.require_existing({cfg.checkpoint});
  EpsilonModel model = load_checkpoint(cfg.resolve(cfg.checkpoint));
  const NoiseSchedule& s = model.schedule();
  std::vector<std::string> bad;
  if (s.T != cfg.T) bad.push_back("T " + std::to_string(s.T) + " vs config " + std::to_string(cfg.T));
  if (s.kind != cfg.schedule) bad.push_back("schedule kind differs from config");
  if (s.snr_shift != cfg.snr_shift)
    bad.push_back("snr_shift " + format_double(s.snr_shift) + " vs config " + format_double(cfg.snr_shift));
  if (model.arch().to_string() != cfg.arch.to_string())
    bad.push_back("architecture " + model.arch().to_string() + " vs config " + cfg.arch.to_string());
  if (!bad.empty()) {
    std::string msg = "checkpoint does not match the configuration:";
    for (const auto& b : bad) msg += "\n  - " + b;
    throw Error(ErrorKind::config_invalid, msg);
  }
  return model;
}

inline Mat load_dataset(const RunConfig& cfg) {
  if (cfg.dataset_dir.empty()) return make_blobs(cfg.dataset_count, cfg.dataset_seed, cfg.arch.image).images;
  cfg.require_existing({cfg.dataset_dir});
  return read_png_dir(cfg.resolve(cfg.dataset_dir), cfg.arch.image);
}

/// Held-out images: blobs from a seed disjoint from the training set.
inline Mat held_out_images(const RunConfig& cfg, Index count) {
  return make_blobs(count, cfg.dataset_seed + 1000003ULL, cfg.arch.image).images;
}

inline fs::path output_dir(const RunConfig& cfg, const std::string& sub) {
  const fs::path d = cfg.resolve(cfg.output_dir) / sub;
  fs::create_directories(d);
  return d;
}

// ------------------------------------------------------------------ train --

/// Digest of every setting that influences the trained weights.
inline std::string training_fingerprint(const RunConfig& cfg) {
  const TrainConfig& t = cfg.train;
  std::ostringstream os;
  os << cfg.arch.to_string() << "|" << cfg.T << "|" << to_string(cfg.schedule) << "|" << format_double(cfg.snr_shift)
     << "|" << cfg.dataset_count << "|" << cfg.dataset_seed << "|" << cfg.resolve(cfg.dataset_dir).string() << "|"
     << t.epochs << "|" << t.batch_size << "|" << format_double(t.learning_rate) << "|"
     << format_double(t.final_learning_rate) << "|" << format_double(t.grad_clip) << "|"
     << format_double(t.ema_decay) << "|" << t.seed << "|" << t.validation_count << "|"
     << format_double(t.max_validation_loss);
  return sha256_hex(os.str());
}

/// True when the checkpoint on disk was written by cmd_train with the same
/// training settings and is unmodified since.
inline bool checkpoint_current(const RunConfig& cfg) {
  const fs::path ckpt = cfg.resolve(cfg.checkpoint);
  const fs::path manifest = (ckpt.parent_path().empty() ? fs::path(".") : ckpt.parent_path()) / "train_manifest.json";
  if (!fs::exists(ckpt) || !fs::exists(manifest)) return false;
  try {
    const json m = json::parse(read_text(manifest));
    return m.value("training_fingerprint", "") == training_fingerprint(cfg) &&
           m.at("files").value(ckpt.filename().string(), "") == sha256_hex(read_text(ckpt));
  } catch (const json::exception&) {
    return false;
  }
}

inline TrainReport cmd_train(const RunConfig& cfg, std::ostream& log) {
  const Mat data = load_dataset(cfg);
  const NoiseSchedule schedule = cfg.make_noise_schedule();
  TrainConfig tc = cfg.train;
  tc.on_epoch = [&](int epoch, double loss) { log << "epoch " << epoch + 1 << "/" << tc.epochs << " loss " << loss << "\n"; };
  TrainReport report;
  const EpsilonModel model = train(data, schedule, cfg.arch, tc, &report);
  const fs::path ckpt = cfg.resolve(cfg.checkpoint);
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  save_checkpoint(model, ckpt);
  log << "validation loss " << report.validation_loss << "\n";
  json m = manifest_base("train", cfg);
  m["training_fingerprint"] = training_fingerprint(cfg);
  m["metrics"] = {{"epoch_loss", report.epoch_loss},
                  {"validation_loss", report.validation_loss},
                  {"dataset_images", data.cols()},
                  {"architecture", cfg.arch.to_string()}};
  const fs::path dir = ckpt.parent_path().empty() ? fs::path(".") : ckpt.parent_path();
  json files = json::object();
  files[ckpt.filename().string()] = sha256_hex(read_text(ckpt));
  m["files"] = files;
  write_text(dir / "train_manifest.json", m.dump(2) + "\n");
  return report;
}

/// Writes the procedural training images as PNGs.
inline void cmd_export_dataset(const RunConfig& cfg, const fs::path& dir, Index count) {
  fs::create_directories(dir);
  const BlobDataset ds = make_blobs(count, cfg.dataset_seed, cfg.arch.image);
  char name[32];
  for (Index j = 0; j < count; ++j) {
    std::snprintf(name, sizeof name, "blob_%05ld.png", long(j));
    write_png(dir / name, ds.images.col(j), cfg.arch.image);
  }
}

// ----------------------------------------------------------------- invert --

struct InversionSummary {
  std::vector<double> mse;
  double mean_mse = 0.0;
  double max_mse = 0.0;
  int t = 0;
  int steps = 0;
};

template <DiffusionModel M>
InversionSummary invert_and_reconstruct(const M& model, const Mat& images, int t, int steps, int refine,
                                        Mat* latents = nullptr, Mat* recon = nullptr) {
  const NoiseSchedule& sch = model.schedule();
  const Mat z = ddim_invert_batch(model, images, sch, t, {steps, refine});
  const Mat r = ddim_sample_batch(model, z, t, sch, {steps, 0.0});
  InversionSummary s;
  s.t = t;
  s.steps = steps;
  for (Index j = 0; j < images.cols(); ++j) {
    s.mse.push_back((r.col(j) - images.col(j)).squaredNorm() / double(images.rows()));
    s.mean_mse += s.mse.back() / double(images.cols());
    s.max_mse = std::max(s.max_mse, s.mse.back());
  }
  if (latents) *latents = z;
  if (recon) *recon = r;
  return s;
}

/// Inverts the PNGs in images_dir (or held-out blobs when empty) to the
/// table row's timestep and writes latents, reconstructions and their error.
inline InversionSummary cmd_invert(const RunConfig& cfg, const fs::path& images_dir, const std::string& t_label,
                                   Index held_out = 20) {
  const EpsilonModel model = load_model(cfg);
  const EditRow& row = cfg.row(t_label);
  const int t = cfg.timestep(row.label);
  const Mat images = images_dir.empty() ? held_out_images(cfg, held_out) : read_png_dir(images_dir, cfg.arch.image);
  Mat z, recon;
  const InversionSummary s =
      invert_and_reconstruct(model, images, t, row.inversion_steps, cfg.inversion_refine, &z, &recon);
  const fs::path dir = output_dir(cfg, "invert");
  std::vector<std::string> files;
  Container c;
  c.kind = "latents";
  c.set("t", std::to_string(t));
  c.set("steps", std::to_string(row.inversion_steps));
  c.add_block("x", z);
  write_container(dir / "latents.sdc", c);
  files.push_back("latents.sdc");
  Table tab{{"image", "mse"}, {}};
  char name[32];
  for (Index j = 0; j < images.cols(); ++j) {
    std::snprintf(name, sizeof name, "recon_%03ld.png", long(j));
    write_png(dir / name, recon.col(j), cfg.arch.image);
    files.push_back(name);
    tab.add({std::to_string(j), format_double(s.mse[std::size_t(j)])});
  }
  write_text(dir / "mse.tsv", tab.tsv());
  files.push_back("mse.tsv");
  json m = manifest_base("invert", cfg);
  m["metrics"] = {{"t", t},
                  {"steps", row.inversion_steps},
                  {"mean_mse", s.mean_mse},
                  {"max_mse", s.max_mse},
                  {"bound", cfg.inversion_max_mse},
                  {"within_bound", s.max_mse < cfg.inversion_max_mse}};
  write_manifest(dir, m, files);
  return s;
}

// --------------------------------------------------------------- discover --

inline std::string file_label(const std::string& t_label) {
  std::string s = t_label;
  for (auto& ch : s)
    if (ch == '.') ch = 'p';
  return s;
}

/// Global basis at T, PCA baselines and per-sample local frames at every
/// table timestep, plus catalog.json.
inline Catalog cmd_discover(const RunConfig& cfg, std::ostream& log) {
  const EpsilonModel model = load_model(cfg);
  const NoiseSchedule& sch = model.schedule();
  const fs::path dir = output_dir(cfg, "discover");
  Catalog cat;
  std::vector<std::string> files;
  json metrics = json::object();
  const int top = cfg.T - 1;

  log << "global directions: L = " << cfg.global_samples << ", n = " << cfg.global_n << "\n";
  const GlobalBasis g = global_directions(model, cfg.global_samples, cfg.global_n, cfg.discover_seed);
  write_container(dir / "global_T.sdc", to_container(g));
  files.push_back("global_T.sdc");
  for (Index i = 0; i < g.n; ++i)
    cat.entries.push_back({"global:" + std::to_string(i), "global", "T", top, "global_T.sdc", "U_bar", i,
                           g.raw_norms[i], "L=" + std::to_string(g.sample_count) + " seed=" + std::to_string(g.seed)});
  metrics["global_raw_norms"] = std::vector<double>(g.raw_norms.data(), g.raw_norms.data() + g.raw_norms.size());

  for (const EditRow& row : cfg.rows()) {
    const int t = cfg.timestep(row.label);
    const std::string fl = file_label(row.label);
    log << "t = " << row.label << " (index " << t << "): PCA and local frames\n";
    const PCABasis p = pca_baseline(model, sch, cfg.pca_samples, t, cfg.pca_k, cfg.discover_seed, cfg.sample_steps);
    const std::string pca_file = "pca_" + fl + ".sdc";
    write_container(dir / pca_file, to_container(p));
    files.push_back(pca_file);
    for (Index i = 0; i < p.k; ++i)
      cat.entries.push_back({"pca:" + row.label + ":" + std::to_string(i), "pca", row.label, t, pca_file,
                             "components", i, p.explained[i], "samples=" + std::to_string(cfg.pca_samples)});

    Rng rng(cfg.discover_seed);
    const Mat x = sample_latents(model, sch, cfg.local_samples, t, rng, cfg.sample_steps);
    for (Index j = 0; j < cfg.local_samples; ++j) {
      const TangentFrame f = local_directions(model, LatentState{x.col(j), t}, row.threshold);
      const std::string frame_file = "frame_" + fl + "_s" + std::to_string(j) + ".sdc";
      write_container(dir / frame_file, to_container(f));
      files.push_back(frame_file);
      for (Index i = 0; i < f.n; ++i)
        cat.entries.push_back({"local:" + row.label + ":s" + std::to_string(j) + ":" + std::to_string(i), "local",
                               row.label, t, frame_file, "U", i, f.lambdas[i], "sample=" + std::to_string(j)});
    }
  }
  write_catalog(dir / "catalog.json", cat);
  files.push_back("catalog.json");
  json m = manifest_base("discover", cfg);
  metrics["directions"] = cat.entries.size();
  m["metrics"] = metrics;
  write_manifest(dir, m, files);
  return cat;
}

/// Unit H-direction named by id. "local:<i>" is the i-th direction of the
/// frame at `state`; any other id must be a catalog entry at state.t.
template <DiffusionModel M>
DirectionSource resolve_direction(const M& model, const Catalog* catalog, const fs::path& catalog_dir,
                                  const std::string& id, const LatentState& state, double threshold) {
  const auto colon = id.find(':');
  require(colon != std::string::npos, ErrorKind::invalid_argument, "direction id '" + id + "' has no kind prefix");
  const std::string kind = id.substr(0, colon);
  const std::string rest = id.substr(colon + 1);
  if (kind == "local" && rest.find(':') == std::string::npos) {
    Index i = 0;
    try {
      i = std::stol(rest);
    } catch (const std::exception&) {
      throw Error(ErrorKind::invalid_argument, "bad direction index in '" + id + "'");
    }
    DirectionSource d = DirectionSource::local(local_directions(model, state, threshold), i);
    d.label = id;
    return d;
  }
  require(catalog != nullptr, ErrorKind::invalid_argument, "direction '" + id + "' needs a discovery catalog");
  const CatalogEntry* e = catalog->find(id);
  require(e != nullptr, ErrorKind::index_out_of_range, "unknown direction '" + id + "'");
  require(e->t == state.t, ErrorKind::invalid_argument,
          "direction '" + id + "' belongs to t = " + e->t_label + " but the state is at index " +
              std::to_string(state.t));
  const Container c = read_container(catalog_dir / e->file);
  const Mat block = c.block(e->block);
  require(e->column < block.cols(), ErrorKind::format_error, "catalog column out of range for " + e->file);
  const Vec u = block.col(e->column);
  require(u.norm() > 0.0, ErrorKind::degenerate_direction, "direction '" + id + "' is zero");
  return {u / u.norm(), id};
}

// ------------------------------------------------------------------- edit --

struct EditRequest {
  std::string t_label;  // table row; empty: cfg.default_t
  std::string direction = "local:0";
  std::optional<double> gamma;
  std::optional<int> n_iter;
  std::uint64_t seed = 0;  // sample seed when no image is given
  fs::path image;
  std::string name = "edit";
};

struct EditOutcome {
  LatentState start;
  ShootResult result;
  Vec original;
  Vec edited;
  EditConfig config;
};

inline EditConfig edit_config_for(const RunConfig& cfg, const EditRow& row) {
  EditConfig e;
  e.t_edit = cfg.timestep(row.label);
  e.gamma = row.gamma;
  e.n_iter = cfg.n_iter;
  e.kappa = cfg.kappa;
  e.threshold = row.threshold;
  e.direction_index = cfg.direction_index;
  return e;
}

/// Clean image from a latent, with the row's stochastic tail when set. The
/// tail noise is seeded so decoding is reproducible.
template <DiffusionModel M>
Vec decode_state(const M& model, const RunConfig& cfg, const EditRow& row, const LatentState& s, std::uint64_t seed) {
  if (!row.t_boost_fraction) return ddim_sample(model, s, model.schedule(), cfg.decode_steps);
  const int tb = timestep_at(*row.t_boost_fraction, cfg.T);
  if (s.t <= tb) return ddim_sample(model, s, model.schedule(), cfg.decode_steps);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  return quality_boost(model, s, model.schedule(), double(tb), rng, cfg.decode_steps).image;
}

template <DiffusionModel M>
LatentState start_state(const M& model, const RunConfig& cfg, const EditRow& row, std::uint64_t seed,
                        const fs::path& image) {
  const int t = cfg.timestep(row.label);
  if (!image.empty()) {
    ImageShape got;
    const Vec img = read_png(image, &got);
    require(got.height == cfg.arch.image.height && got.width == cfg.arch.image.width, ErrorKind::dimension_mismatch,
            "image is " + std::to_string(got.height) + "x" + std::to_string(got.width));
    return ddim_invert(model, img, model.schedule(), row.inversion_steps, t, cfg.inversion_refine);
  }
  Rng rng(seed);
  return {sample_latents(model, model.schedule(), 1, t, rng, cfg.sample_steps).col(0), t};
}

inline EditOutcome cmd_edit(const RunConfig& cfg, const EditRequest& req) {
  const EpsilonModel model = load_model(cfg);
  const EditRow& row = cfg.row(req.t_label.empty() ? cfg.default_t : req.t_label);
  EditConfig ec = edit_config_for(cfg, row);
  if (req.gamma) ec.gamma = *req.gamma;
  if (req.n_iter) ec.n_iter = *req.n_iter;
  ec.validate();

  EditOutcome out;
  out.config = ec;
  out.start = start_state(model, cfg, row, req.seed, req.image);
  const fs::path disc = cfg.resolve(cfg.output_dir) / "discover";
  std::optional<Catalog> cat;
  if (fs::exists(disc / "catalog.json")) cat = read_catalog(disc / "catalog.json");
  const DirectionSource src =
      resolve_direction(model, cat ? &*cat : nullptr, disc, req.direction, out.start, ec.threshold);
  out.result = shoot(model, out.start, src, ec, model.schedule());
  out.original = decode_state(model, cfg, row, out.start, req.seed);
  out.edited = decode_state(model, cfg, row, out.result.state, req.seed);

  const fs::path dir = output_dir(cfg, "edit/" + req.name);
  write_trace(dir / "trace", out.result.trace, cfg.arch.image);
  write_png(dir / "original.png", out.original, cfg.arch.image);
  write_png(dir / "edited.png", out.edited, cfg.arch.image);
  Container c;
  c.kind = "edit-result";
  c.set("t", std::to_string(out.start.t));
  c.set("direction", src.label);
  c.add_block("x_start", out.start.x);
  c.add_block("x_end", out.result.state.x);
  write_container(dir / "latents.sdc", c);
  std::vector<std::string> files{"original.png", "edited.png", "latents.sdc", "trace/trace.jsonl"};
  for (std::size_t i = 0; i < out.result.trace.size(); ++i) {
    char name[40];
    std::snprintf(name, sizeof name, "trace/iter_%03zu.png", i);
    files.push_back(name);
  }
  json m = manifest_base("edit", cfg);
  m["seeds"]["sample"] = req.seed;
  m["request"] = {{"t", row.label},
                  {"direction", src.label},
                  {"gamma", ec.gamma},
                  {"n_iter", ec.n_iter},
                  {"image", req.image.empty() ? "" : req.image.filename().string()}};
  json ranks = json::array();
  for (const auto& r : out.result.trace) ranks.push_back(r.frame_rank);
  m["metrics"] = {{"displacement", (out.result.state.x - out.start.x).norm()},
                  {"pixel_change", (out.edited - out.original).norm() / std::sqrt(double(out.edited.size()))},
                  {"frame_ranks", ranks}};
  write_manifest(dir, m, files);
  return out;
}

// ---------------------------------------------------------------- analyze --

inline const std::set<std::string>& analysis_parts() {
  static const std::set<std::string> parts{"psd", "homogeneity", "spectrum", "paths", "kappa"};
  return parts;
}

struct AnalysisContext {
  const RunConfig& cfg;
  const EpsilonModel& model;
  fs::path dir;
  std::vector<std::string> files;
  json metrics = json::object();

  void save(const std::string& name, const std::string& text) {
    write_text(dir / name, text);
    files.push_back(name);
  }
};

inline void analyze_psd(AnalysisContext& a) {
  const auto& cfg = a.cfg;
  Table tab{{"t_label", "t", "bin", "radial_freq", "power", "count"}, {}};
  Table sum{{"t_label", "t", "low_fraction"}, {}};
  LineChart chart{"Radial PSD of top directions", "radial frequency (cycles / image)", "power", true, {}};
  json m = json::object();
  for (const auto& label : cfg.spectrum_t) {
    const int t = cfg.timestep(label);
    const PSDResult r = direction_psd(a.model, a.model.schedule(), cfg.psd_samples, t, cfg.psd_top_k,
                                      cfg.analysis_seed, cfg.sample_steps);
    Series s{label, {}, {}, {}};
    for (Index b = 0; b < r.power.size(); ++b) {
      tab.add({label, std::to_string(t), std::to_string(b), format_double(r.radial_freqs[b]),
               format_double(r.power[b]), format_double(r.counts[b])});
      if (b > 0) {
        s.x.push_back(r.radial_freqs[b]);
        s.y.push_back(r.power[b]);
      }
    }
    chart.series.push_back(std::move(s));
    sum.add({label, std::to_string(t), format_double(r.low_fraction)});
    m[label] = r.low_fraction;
  }
  a.save("psd.tsv", tab.tsv());
  a.save("psd_summary.tsv", sum.tsv());
  a.save("psd.svg", chart.svg());
  a.metrics["psd_low_fraction"] = m;
}

inline void analyze_homogeneity(AnalysisContext& a) {
  const auto& cfg = a.cfg;
  Table tab{{"t_label", "pair", "direction", "max_abs_cos", "control"}, {}};
  Table sum{{"t_label", "mean_max_abs_cos", "mean_control", "rank_sum_z", "p_greater"}, {}};
  LineChart chart{"Top-1 homogeneity (sorted)", "quantile", "max |cos|", false, {}};
  json m = json::object();
  for (const std::string label : {"T", "0.25T"}) {
    const int t = cfg.timestep(label);
    const HomogeneityStats h = homogeneity_stats(a.model, a.model.schedule(), cfg.homogeneity_pairs,
                                                 cfg.homogeneity_top_k, t, cfg.row(label).threshold,
                                                 cfg.analysis_seed, cfg.sample_steps);
    for (Index p = 0; p < h.maxima.rows(); ++p)
      for (Index i = 0; i < h.maxima.cols(); ++i)
        tab.add({label, std::to_string(p), std::to_string(i), format_double(h.maxima(p, i)),
                 format_double(h.control(p, i))});
    sum.add({label, format_double(h.maxima.col(0).mean()), format_double(h.control.col(0).mean()),
             format_double(h.top1.z), format_double(h.top1.p_greater)});
    auto sorted_series = [&](const std::string& name, const Vec& col) {
      std::vector<double> v(col.data(), col.data() + col.size());
      std::sort(v.begin(), v.end());
      Series s{name, {}, v, {}};
      for (std::size_t i = 0; i < v.size(); ++i) s.x.push_back((double(i) + 0.5) / double(v.size()));
      return s;
    };
    chart.series.push_back(sorted_series(label, h.maxima.col(0)));
    chart.series.push_back(sorted_series(label + " random", h.control.col(0)));
    m[label] = {{"mean", h.maxima.col(0).mean()}, {"control", h.control.col(0).mean()}, {"p", h.top1.p_greater}};
  }
  a.save("homogeneity.tsv", tab.tsv());
  a.save("homogeneity_summary.tsv", sum.tsv());
  a.save("homogeneity.svg", chart.svg());
  a.metrics["homogeneity"] = m;
}

inline void analyze_spectrum(AnalysisContext& a) {
  const auto& cfg = a.cfg;
  std::vector<int> ts;
  for (const auto& l : cfg.spectrum_t) ts.push_back(cfg.timestep(l));
  const auto spectra =
      eigen_spectrum(a.model, a.model.schedule(), cfg.spectrum_samples, ts, cfg.analysis_seed, cfg.sample_steps);
  Table tab{{"t_label", "t", "index", "mean_singular_value"}, {}};
  Table sum{{"t_label", "t", "top_share", "top_energy"}, {}};
  LineChart chart{"Singular value spectrum", "index", "mean singular value", true, {}};
  json m = json::object();
  for (std::size_t k = 0; k < spectra.size(); ++k) {
    const auto& s = spectra[k];
    const std::string& label = cfg.spectrum_t[k];
    Series se{label, {}, {}, {}};
    for (Index i = 0; i < s.mean_singular_values.size(); ++i) {
      tab.add({label, std::to_string(s.t), std::to_string(i), format_double(s.mean_singular_values[i])});
      if (i < 50) {
        se.x.push_back(double(i + 1));
        se.y.push_back(s.mean_singular_values[i]);
      }
    }
    chart.series.push_back(std::move(se));
    sum.add({label, std::to_string(s.t), format_double(s.top_share), format_double(s.top_energy)});
    m[label] = {{"top_share", s.top_share}, {"top_energy", s.top_energy}};
  }
  a.save("spectrum.tsv", tab.tsv());
  a.save("spectrum_summary.tsv", sum.tsv());
  a.save("spectrum.svg", chart.svg());
  a.metrics["spectrum"] = m;
}

inline std::string path_table_text(const PathExperiment& e, Index pairs) {
  Table t{{"path", "semantic path length"}, {}};
  for (PathKind k : {PathKind::lerp, PathKind::slerp, PathKind::shoot}) {
    const auto& s = e.of(k);
    t.add({to_string(k), fixed(s.mean, 3) + " +- " + fixed(s.stddev, 3)});
  }
  return "Semantic path length, " + std::to_string(pairs) + " pairs, " + std::to_string(e.segments) +
         " segments, t index " + std::to_string(e.t) + "\n" + t.text();
}

template <DiffusionModel M>
PathExperiment run_path_experiment(const M& model, const RunConfig& cfg, Index pairs) {
  const EditRow& row = cfg.row("T");
  EditConfig ec = edit_config_for(cfg, row);
  ec.threshold = cfg.path_threshold;
  return path_experiment(model, model.schedule(), pairs, cfg.path_segments, cfg.path_threshold, cfg.T - 1, ec,
                         cfg.analysis_seed);
}

inline void analyze_paths(AnalysisContext& a) {
  const auto& cfg = a.cfg;
  const PathExperiment e = run_path_experiment(a.model, cfg, cfg.path_pairs);
  Table tab{{"pair", "lerp", "slerp", "shoot"}, {}};
  for (Index p = 0; p < cfg.path_pairs; ++p)
    tab.add({std::to_string(p), format_double(e.of(PathKind::lerp).totals[std::size_t(p)]),
             format_double(e.of(PathKind::slerp).totals[std::size_t(p)]),
             format_double(e.of(PathKind::shoot).totals[std::size_t(p)])});
  Table prof{{"segment", "lerp", "lerp_std", "slerp", "slerp_std", "shoot", "shoot_std"}, {}};
  LineChart chart{"Per-segment D_geo", "segment", "D_geo", false, {}};
  for (PathKind k : {PathKind::lerp, PathKind::slerp, PathKind::shoot}) {
    const auto& s = e.of(k);
    Series se{to_string(k), {}, s.profile_mean, {}};
    for (double v : s.profile_std) se.spread.push_back(0.5 * v);
    for (int i = 0; i < e.segments; ++i) se.x.push_back(double(i));
    chart.series.push_back(std::move(se));
  }
  for (int i = 0; i < e.segments; ++i) {
    std::vector<std::string> r{std::to_string(i)};
    for (PathKind k : {PathKind::lerp, PathKind::slerp, PathKind::shoot}) {
      r.push_back(format_double(e.of(k).profile_mean[std::size_t(i)]));
      r.push_back(format_double(e.of(k).profile_std[std::size_t(i)]));
    }
    prof.add(r);
  }
  a.save("paths.tsv", tab.tsv());
  a.save("paths_profile.tsv", prof.tsv());
  a.save("paths_table.txt", path_table_text(e, cfg.path_pairs));
  a.save("paths_profile.svg", chart.svg());
  json m = json::object();
  for (PathKind k : {PathKind::lerp, PathKind::slerp, PathKind::shoot})
    m[to_string(k)] = {{"mean", e.of(k).mean}, {"std", e.of(k).stddev}};
  const ProfileShape ps = profile_shape(e.of(PathKind::lerp).profile_mean);
  m["lerp_profile"] = {{"ends", ps.ends}, {"middle", ps.middle}};
  a.metrics["paths"] = m;
}

inline void analyze_kappa(AnalysisContext& a) {
  const auto& cfg = a.cfg;
  Table tab{{"t_label", "sample", "cosine"}, {}};
  json m = json::object();
  for (const std::string label : {"T", "0.75T", "0.5T", "0.25T"}) {
    const KappaStats k = kappa_statistics(a.model, a.model.schedule(), cfg.kappa_samples, cfg.timestep(label),
                                          cfg.kappa_step, cfg.analysis_seed, cfg.sample_steps);
    for (std::size_t j = 0; j < k.cosines.size(); ++j) tab.add({label, std::to_string(j), format_double(k.cosines[j])});
    m[label] = k.mean;
  }
  a.save("kappa.tsv", tab.tsv());
  a.metrics["kappa_mean_cosine"] = m;
}

inline json cmd_analyze(const RunConfig& cfg, const std::set<std::string>& parts, std::ostream& log) {
  for (const auto& p : parts)
    require(analysis_parts().count(p) == 1, ErrorKind::invalid_argument, "unknown analysis '" + p + "'");
  const EpsilonModel model = load_model(cfg);
  AnalysisContext a{cfg, model, output_dir(cfg, "analysis"), {}, json::object()};
  const std::vector<std::pair<std::string, void (*)(AnalysisContext&)>> steps{{"psd", analyze_psd},
                                                                               {"homogeneity", analyze_homogeneity},
                                                                               {"spectrum", analyze_spectrum},
                                                                               {"kappa", analyze_kappa},
                                                                               {"paths", analyze_paths}};
  for (const auto& [name, fn] : steps) {
    if (!parts.count(name)) continue;
    log << "analysis: " << name << "\n";
    fn(a);
  }
  if (parts.count("paths")) log << read_text(a.dir / "paths_table.txt");
  json m = manifest_base("analyze", cfg);
  m["metrics"] = a.metrics;
  write_manifest(a.dir, m, a.files);
  return a.metrics;
}

// ----------------------------------------------------------------- ablate --

inline AblationConfig ablation_config_for(const RunConfig& cfg) {
  const EditRow& row = cfg.row(cfg.ablation_t);
  AblationConfig ac;
  ac.edits = int(cfg.ablation_edits);
  ac.n_iter = cfg.ablation_n_iter;
  ac.gamma = row.gamma;
  ac.kappa = cfg.kappa;
  ac.threshold = row.threshold;
  ac.t_edit = cfg.timestep(row.label);
  ac.decode_steps = cfg.decode_steps;
  ac.seed = cfg.ablation_seed;
  return ac;
}

inline AblationResult cmd_ablate(const RunConfig& cfg, std::ostream& log) {
  const EpsilonModel model = load_model(cfg);
  const AblationResult r = run_ablation(model, model.schedule(), ablation_config_for(cfg));
  const fs::path dir = output_dir(cfg, "ablation");
  Table tab{{"edit", "arm", "std_drift", "eps_loss", "pixel_change"}, {}};
  for (const auto& e : r.edits)
    tab.add({std::to_string(e.edit), to_string(e.arm), format_double(e.std_drift), format_double(e.eps_loss),
             format_double(e.pixel_change)});
  Table sum{{"arm", "mean_std_drift", "mean_eps_loss", "mean_pixel_change"}, {}};
  json m = json::object();
  for (const auto& s : r.summary) {
    sum.add({to_string(s.arm), fixed(s.mean_std_drift, 5), fixed(s.mean_eps_loss, 5), fixed(s.mean_pixel_change, 5)});
    m[to_string(s.arm)] = {{"std_drift", s.mean_std_drift}, {"eps_loss", s.mean_eps_loss},
                           {"pixel_change", s.mean_pixel_change}};
  }
  m["unedited_eps_loss"] = r.baseline_eps_loss;
  write_text(dir / "ablation.tsv", tab.tsv());
  write_text(dir / "ablation_summary.txt", sum.text());
  log << sum.text();
  json man = manifest_base("ablate", cfg);
  man["metrics"] = m;
  write_manifest(dir, man, {"ablation.tsv", "ablation_summary.txt"});
  return r;
}

}  // namespace semdir
