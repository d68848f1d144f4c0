#pragma once

// Persistence of frames and direction bases in the shared container format,
// the JSON direction catalog, and edit-trace logs.

#include "semdir/container.hpp"
#include "semdir/directions.hpp"
#include "semdir/editing.hpp"
#include "semdir/geometry.hpp"
#include "semdir/image_io.hpp"

#include <json.hpp>

#include <filesystem>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace semdir {

using json = nlohmann::json;

inline Container to_container(const TangentFrame& f) {
  Container c;
  c.kind = "tangent-frame";
  c.set("n", std::to_string(f.n));
  c.set("t", std::to_string(f.t));
  c.set("threshold", std::to_string(f.threshold_used));
  c.add_block("V", f.V);
  c.add_block("U", f.U);
  c.add_block("lambdas", f.lambdas);
  c.add_block("base_x", f.base_x);
  return c;
}

inline TangentFrame frame_from_container(const Container& c) {
  require(c.kind == "tangent-frame", ErrorKind::format_error, "container is a '" + c.kind + "', not a tangent-frame");
  TangentFrame f;
  f.V = c.block("V");
  f.U = c.block("U");
  f.lambdas = c.block("lambdas");
  f.base_x = c.block("base_x");
  f.n = std::stol(c.get("n"));
  f.t = std::stoi(c.get("t"));
  f.threshold_used = std::stod(c.get("threshold"));
  require(f.V.cols() == f.n && f.U.cols() == f.n && f.lambdas.size() == f.n, ErrorKind::format_error,
          "frame blocks disagree with n");
  return f;
}

inline Container to_container(const GlobalBasis& g) {
  Container c;
  c.kind = "global-basis";
  c.set("n", std::to_string(g.n));
  c.set("t", std::to_string(g.t));
  c.set("sample_count", std::to_string(g.sample_count));
  c.set("seed", std::to_string(g.seed));
  c.add_block("U_bar", g.U_bar);
  c.add_block("raw_norms", g.raw_norms);
  return c;
}

inline GlobalBasis global_from_container(const Container& c) {
  require(c.kind == "global-basis", ErrorKind::format_error, "container is a '" + c.kind + "', not a global-basis");
  GlobalBasis g;
  g.U_bar = c.block("U_bar");
  g.raw_norms = c.block("raw_norms");
  g.n = std::stol(c.get("n"));
  g.t = std::stoi(c.get("t"));
  g.sample_count = std::stol(c.get("sample_count"));
  g.seed = std::stoull(c.get("seed"));
  require(g.U_bar.cols() == g.n, ErrorKind::format_error, "basis blocks disagree with n");
  return g;
}

inline Container to_container(const PCABasis& p) {
  Container c;
  c.kind = "pca-basis";
  c.set("k", std::to_string(p.k));
  c.set("t", std::to_string(p.t));
  c.add_block("components", p.components);
  c.add_block("mean_h", p.mean_h);
  c.add_block("explained", p.explained);
  return c;
}

inline PCABasis pca_from_container(const Container& c) {
  require(c.kind == "pca-basis", ErrorKind::format_error, "container is a '" + c.kind + "', not a pca-basis");
  PCABasis p;
  p.components = c.block("components");
  p.mean_h = c.block("mean_h");
  p.explained = c.block("explained");
  p.k = std::stol(c.get("k"));
  p.t = std::stoi(c.get("t"));
  require(p.components.cols() == p.k, ErrorKind::format_error, "basis blocks disagree with k");
  return p;
}

/// One direction listed in the catalog.
struct CatalogEntry {
  std::string id;    // "global:3", "pca:0.5T:1", "local:T:s2:0"
  std::string kind;  // global | pca | local
  std::string t_label;
  int t = 0;
  std::string file;  // container holding the direction, relative to the catalog
  std::string block;
  Index column = 0;
  double weight = 0.0;  // raw norm, explained fraction or singular value
  std::string provenance;
};

inline json to_json(const CatalogEntry& e) {
  return json{{"id", e.id},     {"kind", e.kind},     {"t_label", e.t_label}, {"t", e.t},
              {"file", e.file}, {"block", e.block},   {"column", e.column},   {"weight", e.weight},
              {"provenance", e.provenance}};
}

inline CatalogEntry catalog_entry_from_json(const json& j) {
  CatalogEntry e;
  e.id = j.at("id").get<std::string>();
  e.kind = j.at("kind").get<std::string>();
  e.t_label = j.at("t_label").get<std::string>();
  e.t = j.at("t").get<int>();
  e.file = j.at("file").get<std::string>();
  e.block = j.at("block").get<std::string>();
  e.column = j.at("column").get<Index>();
  e.weight = j.at("weight").get<double>();
  e.provenance = j.at("provenance").get<std::string>();
  return e;
}

struct Catalog {
  std::vector<CatalogEntry> entries;

  json to_json() const {
    json arr = json::array();
    for (const auto& e : entries) arr.push_back(semdir::to_json(e));
    return json{{"format", 1}, {"directions", arr}};
  }

  static Catalog from_json(const json& j) {
    Catalog c;
    for (const auto& e : j.at("directions")) c.entries.push_back(catalog_entry_from_json(e));
    return c;
  }

  const CatalogEntry* find(const std::string& id) const {
    for (const auto& e : entries)
      if (e.id == id) return &e;
    return nullptr;
  }
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  require(bool(f), ErrorKind::io_error, "cannot write " + path.string());
  f << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(bool(f), ErrorKind::io_error, "cannot read " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

inline void write_catalog(const std::filesystem::path& path, const Catalog& c) {
  write_text(path, c.to_json().dump(2) + "\n");
}

inline Catalog read_catalog(const std::filesystem::path& path) {
  try {
    return Catalog::from_json(json::parse(read_text(path)));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format_error, path.string() + ": " + e.what());
  }
}

inline json vec_to_json(const Vec& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

inline Vec vec_from_json(const json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(values.data(), Index(values.size()));
}

/// Compact per-iteration summary (no full vectors).
inline json trace_record_summary(const EditRecord& r, std::size_t iteration) {
  return json{{"iteration", iteration},          {"frame_rank", r.frame_rank},     {"dx_norm", r.dx_norm},
              {"x_norm", r.x.norm()},            {"h_norm", r.h.norm()},           {"v_norm", r.v.norm()},
              {"x0_before_std", detail::moments(r.x0_before).std},
              {"x0_after_std", detail::moments(r.x0_after).std}};
}

inline json trace_record_full(const EditRecord& r, std::size_t iteration) {
  json j = trace_record_summary(r, iteration);
  j["x"] = vec_to_json(r.x);
  j["h"] = vec_to_json(r.h);
  j["v"] = vec_to_json(r.v);
  j["u"] = vec_to_json(r.u);
  j["x0_before"] = vec_to_json(r.x0_before);
  j["x0_after"] = vec_to_json(r.x0_after);
  return j;
}

/// Line-delimited JSON log plus one PNG of the normalized x0 per iteration.
inline void write_trace(const std::filesystem::path& dir, const EditTrace& trace, const ImageShape& shape) {
  std::filesystem::create_directories(dir);
  std::string lines;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    lines += trace_record_full(trace[i], i).dump() + "\n";
    char name[32];
    std::snprintf(name, sizeof name, "iter_%03zu.png", i);
    write_png(dir / name, trace[i].x0_after, shape);
  }
  write_text(dir / "trace.jsonl", lines);
}

inline EditTrace read_trace(const std::filesystem::path& file) {
  std::istringstream is(read_text(file));
  EditTrace out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    EditRecord r;
    r.x = vec_from_json(j.at("x"));
    r.h = vec_from_json(j.at("h"));
    r.v = vec_from_json(j.at("v"));
    r.u = vec_from_json(j.at("u"));
    r.x0_before = vec_from_json(j.at("x0_before"));
    r.x0_after = vec_from_json(j.at("x0_after"));
    r.frame_rank = j.at("frame_rank").get<Index>();
    r.dx_norm = j.at("dx_norm").get<double>();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace semdir
