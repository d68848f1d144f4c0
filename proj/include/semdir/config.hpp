#pragma once

// Run configuration: a sectioned key = value file. Validation collects every
// violation before failing.

#include "semdir/core.hpp"
#include "semdir/digest.hpp"
#include "semdir/schedule.hpp"
#include "semdir/train.hpp"
#include "semdir/unet.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace semdir {

/// "T", "0.75T", "0.15T" -> fraction of T. Plain numbers are accepted too.
inline double parse_t_fraction(const std::string& text) {
  std::string s = text;
  if (!s.empty() && s.back() == 'T') s.pop_back();
  if (s.empty()) return 1.0;
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw Error(ErrorKind::config_invalid, "'" + text + "' is not a timestep like 0.75T");
  }
  require(used == s.size(), ErrorKind::config_invalid, "'" + text + "' is not a timestep like 0.75T");
  return v;
}

inline std::string format_t_fraction(double f) {
  if (f == 1.0) return "T";
  std::ostringstream os;
  os << f << "T";
  return os.str();
}

/// One row of the per-timestep editing table.
struct EditRow {
  std::string label;       // "T", "0.75T", ...
  double t_fraction = 1.0;
  double gamma = 0.0;
  int inversion_steps = 40;
  double threshold = 0.5;
  std::optional<double> t_boost_fraction;  // none disables quality boosting
};

struct RunConfig {
  std::filesystem::path base_dir;  // relative paths resolve against this
  std::string canonical_text;      // normalized INI text after overrides

  std::string hash() const { return sha256_hex(canonical_text); }

  // [model]
  std::filesystem::path checkpoint = "model.sdc";
  int T = 1000;
  ScheduleKind schedule = ScheduleKind::linear;
  double snr_shift = 192.0;
  ArchConfig arch{};

  // [data]
  int dataset_count = 2000;
  std::uint64_t dataset_seed = 7;
  std::filesystem::path dataset_dir;  // empty: procedural blobs

  // [train]
  TrainConfig train{};

  // [sampling]
  int sample_steps = 50;

  // [inversion]
  int inversion_refine = 0;
  double inversion_max_mse = 0.005;  // round-trip bound on held-out images

  // [edit]
  std::string profile = "celeba_hq";
  double kappa = 0.99;
  int n_iter = 5;
  int decode_steps = 50;
  Index direction_index = 0;
  std::string default_t = "T";
  std::map<std::string, std::vector<EditRow>> table;  // profile -> rows

  // [discover]
  Index global_samples = 100;
  Index global_n = 10;
  std::uint64_t discover_seed = 1;
  Index pca_samples = 1000;
  Index pca_k = 10;
  Index local_samples = 4;

  // [analysis]
  std::uint64_t analysis_seed = 11;
  Index psd_samples = 20;
  Index psd_top_k = 10;
  Index homogeneity_pairs = 100;
  Index homogeneity_top_k = 1;
  Index spectrum_samples = 20;
  std::vector<std::string> spectrum_t{"T", "0.75T", "0.5T", "0.25T"};
  Index path_pairs = 50;
  int path_segments = 30;
  double path_threshold = 0.5;
  Index kappa_samples = 100;
  double kappa_step = 0.01;

  // [ablation]
  Index ablation_edits = 20;
  int ablation_n_iter = 5;
  std::uint64_t ablation_seed = 3;
  std::string ablation_t = "0.25T";  // table row supplying gamma and threshold

  // [output]
  std::filesystem::path output_dir = "out";

  // [serve]
  std::string host = "127.0.0.1";
  int port = 8080;

  std::filesystem::path resolve(const std::filesystem::path& p) const {
    return p.empty() || p.is_absolute() ? p : base_dir / p;
  }

  const std::vector<EditRow>& rows() const {
    auto it = table.find(profile);
    require(it != table.end(), ErrorKind::config_invalid, "no table rows for profile '" + profile + "'");
    return it->second;
  }

  const EditRow& row(const std::string& label) const {
    const double f = parse_t_fraction(label);
    for (const auto& r : rows())
      if (std::abs(r.t_fraction - f) < 1e-12) return r;
    throw Error(ErrorKind::config_invalid, "profile '" + profile + "' has no row for t = " + label);
  }

  int timestep(const std::string& label) const { return timestep_at(parse_t_fraction(label), T); }

  NoiseSchedule make_noise_schedule() const { return make_schedule(T, schedule, snr_shift); }

  /// Every violation, in file order; empty means valid.
  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    auto need = [&](bool ok, const std::string& msg) {
      if (!ok) v.push_back(msg);
    };
    need(T >= 2, "model.T must be >= 2");
    need(snr_shift > 0.0, "model.snr_shift must be positive");
    try {
      arch.validate();
    } catch (const Error& e) {
      v.push_back(std::string("model: ") + e.what());
    }
    need(dataset_count >= 1, "data.count must be >= 1");
    need(train.epochs >= 1, "train.epochs must be >= 1");
    need(train.batch_size >= 1, "train.batch_size must be >= 1");
    need(train.learning_rate > 0.0, "train.learning_rate must be positive");
    need(train.final_learning_rate > 0.0, "train.final_learning_rate must be positive");
    need(train.ema_decay >= 0.0 && train.ema_decay < 1.0, "train.ema_decay must be in [0, 1)");
    need(train.max_validation_loss > 0.0, "train.max_validation_loss must be positive");
    need(sample_steps >= 1, "sampling.steps must be >= 1");
    need(inversion_refine >= 0, "inversion.refine must be >= 0");
    need(inversion_max_mse > 0.0, "inversion.max_mse must be positive");
    need(kappa > 0.0 && kappa < 1.0, "edit.kappa must be in (0, 1)");
    need(n_iter >= 1, "edit.n_iter must be >= 1");
    need(decode_steps >= 1, "edit.decode_steps must be >= 1");
    need(direction_index >= 0, "edit.direction_index must be >= 0");
    need(table.count(profile) == 1, "edit.profile '" + profile + "' has no table rows");
    for (const auto& [name, rs] : table)
      for (const auto& r : rs) {
        const std::string where = "table." + name + "." + r.label;
        need(r.t_fraction > 0.0 && r.t_fraction <= 1.0, where + ".t_edit must be in (0, T]");
        need(r.gamma > 0.0, where + ".gamma must be positive");
        need(r.inversion_steps >= 1, where + ".inversion_steps must be >= 1");
        need(r.threshold > 0.0 && r.threshold <= 1.0, where + ".threshold must be in (0, 1]");
        if (r.t_boost_fraction)
          need(*r.t_boost_fraction > 0.0 && *r.t_boost_fraction < 1.0, where + ".t_boost must be in (0, T)");
      }
    need(global_samples >= 2, "discover.global_samples must be >= 2");
    need(global_n >= 1, "discover.global_n must be >= 1");
    need(pca_samples >= pca_k && pca_k >= 1, "discover.pca_samples must be >= pca_k >= 1");
    need(local_samples >= 1, "discover.local_samples must be >= 1");
    need(psd_samples >= 1 && psd_top_k >= 1, "analysis.psd_samples and psd_top_k must be >= 1");
    need(homogeneity_pairs >= 1 && homogeneity_top_k >= 1, "analysis.homogeneity_pairs and top_k must be >= 1");
    need(spectrum_samples >= 1, "analysis.spectrum_samples must be >= 1");
    need(path_pairs >= 1, "analysis.path_pairs must be >= 1");
    need(path_segments >= 1, "analysis.path_segments must be >= 1");
    need(path_threshold > 0.0 && path_threshold <= 1.0, "analysis.path_threshold must be in (0, 1]");
    need(kappa_samples >= 1, "analysis.kappa_samples must be >= 1");
    need(kappa_step > 0.0, "analysis.kappa_step must be positive");
    need(ablation_edits >= 1, "ablation.edits must be >= 1");
    need(ablation_n_iter >= 1, "ablation.n_iter must be >= 1");
    need(port > 0 && port < 65536, "serve.port must be in [1, 65535]");
    return v;
  }

  void validate() const {
    const auto v = violations();
    if (v.empty()) return;
    std::string msg = std::to_string(v.size()) + " configuration error(s):";
    for (const auto& s : v) msg += "\n  - " + s;
    throw Error(ErrorKind::config_invalid, msg);
  }

  /// Paths a command reads must exist.
  void require_existing(const std::vector<std::filesystem::path>& paths) const {
    std::vector<std::string> missing;
    for (const auto& p : paths)
      if (!std::filesystem::exists(resolve(p))) missing.push_back(resolve(p).string());
    if (missing.empty()) return;
    std::string msg = "missing input file(s):";
    for (const auto& m : missing) msg += "\n  - " + m;
    throw Error(ErrorKind::config_invalid, msg);
  }
};

namespace detail {

using boost::property_tree::ptree;

/// Typed reader over one INI tree that records bad values and unknown keys
/// instead of stopping at the first one.
class IniReader {
 public:
  explicit IniReader(const ptree& tree) : tree_(tree) {}

  template <typename T>
  void get(const std::string& section, const std::string& key, T& out) {
    seen_.insert(section + "." + key);
    const auto* sec = tree_.get_child_optional(ptree::path_type(section, '\0')).get_ptr();
    if (!sec) return;
    const auto* node = sec->get_child_optional(ptree::path_type(key, '\0')).get_ptr();
    if (!node) return;
    parse(section + "." + key, node->data(), out);
  }

  void check_unknown(const std::set<std::string>& dynamic_sections) {
    for (const auto& [section, sec] : tree_) {
      const bool dynamic = dynamic_sections.count(section) > 0;
      for (const auto& [key, node] : sec) {
        (void)node;
        if (!dynamic && !seen_.count(section + "." + key)) errors.push_back("unknown key " + section + "." + key);
      }
    }
  }

  std::vector<std::string> errors;

 private:
  template <typename T>
  void parse(const std::string& where, const std::string& text, T& out) {
    try {
      if constexpr (std::is_same_v<T, std::string>) {
        out = text;
      } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
        out = text;
      } else if constexpr (std::is_same_v<T, bool>) {
        require(text == "true" || text == "false", ErrorKind::config_invalid, "expected true/false");
        out = text == "true";
      } else if constexpr (std::is_same_v<T, ScheduleKind>) {
        out = parse_schedule_kind(text);
      } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
        out.clear();
        std::istringstream is(text);
        std::string item;
        while (std::getline(is, item, ',')) {
          const auto b = item.find_first_not_of(' ');
          const auto e = item.find_last_not_of(' ');
          if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
        }
      } else {
        std::istringstream is(text);
        T v{};
        is >> v;
        require(!is.fail() && is.eof(), ErrorKind::config_invalid, "not a valid number");
        out = v;
      }
    } catch (const std::exception& e) {
      errors.push_back(where + " = '" + text + "': " + e.what());
    }
  }

  const ptree& tree_;
  std::set<std::string> seen_;
};

}  // namespace detail

/// Overrides are "section.key=value"; the key is the part after the last dot,
/// so table rows work as "table.celeba_hq.0.5T.gamma=0.3".
inline RunConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = {},
                              const std::vector<std::string>& overrides = {}) {
  detail::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(ErrorKind::config_invalid, std::string("cannot parse configuration: ") + e.what());
  }
  std::vector<std::string> override_errors;
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    const auto dot = o.substr(0, eq).rfind('.');
    if (eq == std::string::npos || dot == std::string::npos || dot == 0) {
      override_errors.push_back("override '" + o + "' is not section.key=value");
      continue;
    }
    const std::string section = o.substr(0, dot);
    const std::string key = o.substr(dot + 1, eq - dot - 1);
    auto child = tree.get_child_optional(detail::ptree::path_type(section, '\0'));
    if (!child) child = tree.add_child(detail::ptree::path_type(section, '\0'), detail::ptree{});
    child->put(detail::ptree::path_type(key, '\0'), o.substr(eq + 1));
  }
  RunConfig c;
  c.base_dir = base_dir;
  {
    std::ostringstream os;
    boost::property_tree::ini_parser::write_ini(os, tree);
    c.canonical_text = os.str();
  }
  detail::IniReader r(tree);
  r.errors = override_errors;
  r.get("model", "checkpoint", c.checkpoint);
  r.get("model", "T", c.T);
  r.get("model", "schedule", c.schedule);
  r.get("model", "snr_shift", c.snr_shift);
  r.get("model", "width1", c.arch.width1);
  r.get("model", "width2", c.arch.width2);
  r.get("model", "width3", c.arch.width3);
  r.get("model", "bottleneck", c.arch.bottleneck);
  r.get("model", "temb_dim", c.arch.temb_dim);
  r.get("model", "groups", c.arch.groups);
  r.get("model", "image_size", c.arch.image.height);
  c.arch.image.width = c.arch.image.height;
  r.get("data", "count", c.dataset_count);
  r.get("data", "seed", c.dataset_seed);
  r.get("data", "dir", c.dataset_dir);
  r.get("train", "epochs", c.train.epochs);
  r.get("train", "batch_size", c.train.batch_size);
  r.get("train", "learning_rate", c.train.learning_rate);
  r.get("train", "final_learning_rate", c.train.final_learning_rate);
  r.get("train", "grad_clip", c.train.grad_clip);
  r.get("train", "ema_decay", c.train.ema_decay);
  r.get("train", "seed", c.train.seed);
  r.get("train", "validation_count", c.train.validation_count);
  r.get("train", "max_validation_loss", c.train.max_validation_loss);
  r.get("sampling", "steps", c.sample_steps);
  r.get("inversion", "refine", c.inversion_refine);
  r.get("inversion", "max_mse", c.inversion_max_mse);
  r.get("edit", "profile", c.profile);
  r.get("edit", "kappa", c.kappa);
  r.get("edit", "n_iter", c.n_iter);
  r.get("edit", "decode_steps", c.decode_steps);
  r.get("edit", "direction_index", c.direction_index);
  r.get("edit", "default_t", c.default_t);
  r.get("discover", "global_samples", c.global_samples);
  r.get("discover", "global_n", c.global_n);
  r.get("discover", "seed", c.discover_seed);
  r.get("discover", "pca_samples", c.pca_samples);
  r.get("discover", "pca_k", c.pca_k);
  r.get("discover", "local_samples", c.local_samples);
  r.get("analysis", "seed", c.analysis_seed);
  r.get("analysis", "psd_samples", c.psd_samples);
  r.get("analysis", "psd_top_k", c.psd_top_k);
  r.get("analysis", "homogeneity_pairs", c.homogeneity_pairs);
  r.get("analysis", "homogeneity_top_k", c.homogeneity_top_k);
  r.get("analysis", "spectrum_samples", c.spectrum_samples);
  r.get("analysis", "spectrum_t", c.spectrum_t);
  r.get("analysis", "path_pairs", c.path_pairs);
  r.get("analysis", "path_segments", c.path_segments);
  r.get("analysis", "path_threshold", c.path_threshold);
  r.get("analysis", "kappa_samples", c.kappa_samples);
  r.get("analysis", "kappa_step", c.kappa_step);
  r.get("ablation", "edits", c.ablation_edits);
  r.get("ablation", "n_iter", c.ablation_n_iter);
  r.get("ablation", "seed", c.ablation_seed);
  r.get("ablation", "t", c.ablation_t);
  r.get("output", "dir", c.output_dir);
  r.get("serve", "host", c.host);
  r.get("serve", "port", c.port);

  // [table.<profile>.<t>] sections, one per row.
  std::set<std::string> table_sections;
  for (const auto& [section, sec] : tree) {
    if (section.rfind("table.", 0) != 0) continue;
    table_sections.insert(section);
    const std::string rest = section.substr(6);
    const auto dot = rest.find('.');
    if (dot == std::string::npos) {
      r.errors.push_back("section [" + section + "] should be [table.<profile>.<t>]");
      continue;
    }
    EditRow row;
    row.label = rest.substr(dot + 1);
    std::string t_edit = row.label;
    std::string boost = "none";
    r.get(section, "t_edit", t_edit);
    r.get(section, "gamma", row.gamma);
    r.get(section, "inversion_steps", row.inversion_steps);
    r.get(section, "threshold", row.threshold);
    r.get(section, "t_boost", boost);
    try {
      row.t_fraction = parse_t_fraction(t_edit);
      if (boost != "none") row.t_boost_fraction = parse_t_fraction(boost);
    } catch (const Error& e) {
      r.errors.push_back(section + ": " + e.what());
    }
    for (const auto& [key, node] : sec) {
      (void)node;
      static const std::set<std::string> known{"t_edit", "gamma", "inversion_steps", "threshold", "t_boost"};
      if (!known.count(key)) r.errors.push_back("unknown key " + section + "." + key);
    }
    c.table[rest.substr(0, dot)].push_back(row);
  }
  r.check_unknown(table_sections);

  std::vector<std::string> all = r.errors;
  for (auto& v : c.violations()) all.push_back(std::move(v));
  if (!all.empty()) {
    std::string msg = std::to_string(all.size()) + " configuration error(s):";
    for (const auto& s : all) msg += "\n  - " + s;
    throw Error(ErrorKind::config_invalid, msg);
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  std::ifstream f(path);
  require(bool(f), ErrorKind::io_error, "cannot read config " + path.string());
  return parse_config(f, path.parent_path(), overrides);
}

}  // namespace semdir
