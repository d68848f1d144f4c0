#pragma once

// HTTP service for interactive editing sessions. The model and the discovery
// catalog are loaded once and shared read-only; each session is serialized by
// its own mutex. Undo replays the remaining edits from the session origin.

#include "semdir/pipeline.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace semdir {

struct HttpResult {
  int status = 200;
  json body;
};

inline HttpResult error_result(int status, const std::string& name, const std::string& message) {
  return {status, json{{"error", name}, {"message", message}}};
}

inline int status_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::unknown_session: return 404;
    case ErrorKind::direction_lost:
    case ErrorKind::step_degenerate:
    case ErrorKind::cannot_normalize:
    case ErrorKind::degenerate_direction: return 422;
    default: return 400;
  }
}

struct EditOp {
  std::string direction;
  double gamma = 0.0;
  int n_iter = 1;
};

/// One editing session: origin latent, the applied edits and their traces.
struct SessionState {
  std::string id;
  std::string t_label;
  LatentState origin;
  LatentState current;
  std::uint64_t seed = 0;
  std::string source;  // "seed" or "image"
  std::vector<EditOp> ops;
  std::vector<EditTrace> traces;
  std::mutex mutex;
};

class Service {
 public:
  explicit Service(RunConfig cfg) : cfg_(std::move(cfg)), model_(load_model(cfg_)) {
    catalog_dir_ = cfg_.resolve(cfg_.output_dir) / "discover";
    if (fs::exists(catalog_dir_ / "catalog.json")) catalog_ = read_catalog(catalog_dir_ / "catalog.json");
    checkpoint_sha_ = sha256_hex(read_text(cfg_.resolve(cfg_.checkpoint)));
  }

  const RunConfig& config() const { return cfg_; }
  const EpsilonModel& model() const { return model_; }

  HttpResult model_info() const {
    json rows = json::array();
    for (const auto& r : cfg_.rows())
      rows.push_back({{"t", r.label},
                      {"index", cfg_.timestep(r.label)},
                      {"gamma", r.gamma},
                      {"inversion_steps", r.inversion_steps},
                      {"threshold", r.threshold},
                      {"t_boost", r.t_boost_fraction ? json(format_t_fraction(*r.t_boost_fraction)) : json(nullptr)}});
    const auto& s = model_.schedule();
    return {200, json{{"version", kVersion},
                      {"architecture", model_.arch().to_string()},
                      {"image", {{"channels", model_.shape().channels},
                                 {"height", model_.shape().height},
                                 {"width", model_.shape().width}}},
                      {"h_dim", model_.h_dim()},
                      {"T", s.T},
                      {"schedule", to_string(s.kind)},
                      {"snr_shift", s.snr_shift},
                      {"checkpoint_sha256", checkpoint_sha_},
                      {"profile", cfg_.profile},
                      {"table", rows},
                      {"catalog", catalog_.has_value()}}};
  }

  /// Catalog entries at t of the given kind. Global directions exist only at
  /// T; other timesteps return an empty list with a note.
  HttpResult directions(const std::string& t_label, const std::string& kind) const {
    if (kind != "local" && kind != "global" && kind != "pca")
      return error_result(400, "invalid-argument", "kind must be local, global or pca");
    const EditRow& row = cfg_.row(t_label);
    json out{{"t", row.label}, {"index", cfg_.timestep(row.label)}, {"kind", kind}, {"directions", json::array()}};
    if (kind == "global" && cfg_.timestep(row.label) != cfg_.T - 1) {
      out["note"] = "global directions are defined only at t = T";
      return {200, out};
    }
    if (!catalog_) {
      out["note"] = "no discovery catalog; run discover first";
      return {200, out};
    }
    std::vector<CatalogEntry> hits;
    for (const auto& e : catalog_->entries)
      if (e.kind == kind && e.t == cfg_.timestep(row.label)) hits.push_back(e);
    std::stable_sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) { return a.weight > b.weight; });
    for (const auto& e : hits) out["directions"].push_back(to_json(e));
    return {200, out};
  }

  /// New session from a sample seed or a base64 PNG (inverted with the row's
  /// inversion steps).
  HttpResult create_session(const json& req) {
    const std::string t_label = req.value("t", cfg_.default_t);
    const EditRow& row = cfg_.row(t_label);
    auto s = std::make_shared<SessionState>();
    if (req.contains("image")) {
      ImageShape got;
      const Vec img = decode_png(base64_decode(req.at("image").get<std::string>()), &got);
      require(got.height == model_.shape().height && got.width == model_.shape().width,
              ErrorKind::dimension_mismatch, "image must be " + std::to_string(model_.shape().height) + "x" +
                                                 std::to_string(model_.shape().width));
      s->origin = ddim_invert(model_, img, model_.schedule(), row.inversion_steps, cfg_.timestep(row.label),
                              cfg_.inversion_refine);
      s->source = "image";
    } else {
      s->seed = req.value("seed", std::uint64_t(0));
      s->origin = start_state(model_, cfg_, row, s->seed, {});
      s->source = "seed";
    }
    s->t_label = row.label;
    s->current = s->origin;
    {
      std::lock_guard lock(sessions_mutex_);
      s->id = "s" + std::to_string(++session_counter_);
      sessions_[s->id] = s;
    }
    std::lock_guard lock(s->mutex);
    return {200, session_view(*s)};
  }

  HttpResult edit(const std::string& id, const json& req) {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    EditOp op;
    op.direction = req.value("direction_id", std::string("local:0"));
    op.gamma = req.value("gamma", cfg_.row(s->t_label).gamma);
    op.n_iter = req.value("n_iter", cfg_.n_iter);
    auto [state, trace] = apply(*s, s->current, op);
    s->current = state;
    s->ops.push_back(op);
    s->traces.push_back(std::move(trace));
    json view = session_view(*s);
    json tail = json::array();
    for (std::size_t i = 0; i < s->traces.back().size(); ++i)
      tail.push_back(trace_record_summary(s->traces.back()[i], i));
    view["trace_tail"] = tail;
    return {200, view};
  }

  HttpResult undo(const std::string& id) {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    require(!s->ops.empty(), ErrorKind::invalid_argument, "nothing to undo");
    s->ops.pop_back();
    s->traces.clear();
    LatentState st = s->origin;
    for (const auto& op : s->ops) {
      auto [next, trace] = apply(*s, st, op);
      st = next;
      s->traces.push_back(std::move(trace));
    }
    s->current = st;
    return {200, session_view(*s)};
  }

  HttpResult trace(const std::string& id) {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    json ops = json::array();
    for (std::size_t k = 0; k < s->ops.size(); ++k) {
      json recs = json::array();
      for (std::size_t i = 0; i < s->traces[k].size(); ++i) recs.push_back(trace_record_summary(s->traces[k][i], i));
      ops.push_back({{"direction_id", s->ops[k].direction},
                     {"gamma", s->ops[k].gamma},
                     {"n_iter", s->ops[k].n_iter},
                     {"records", recs}});
    }
    json view = session_view(*s);
    view["ops"] = ops;
    return {200, view};
  }

  HttpResult analyze_psd(const std::string& t_label, Index samples) const {
    const int t = cfg_.timestep(cfg_.row(t_label).label);
    const PSDResult r = direction_psd(model_, model_.schedule(), samples, t, cfg_.psd_top_k, cfg_.analysis_seed,
                                      cfg_.sample_steps);
    auto vec = [](const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    return {200, json{{"t", t_label},
                      {"index", t},
                      {"samples", samples},
                      {"top_k", cfg_.psd_top_k},
                      {"radial_freqs", vec(r.radial_freqs)},
                      {"power", vec(r.power)},
                      {"counts", vec(r.counts)},
                      {"low_fraction", r.low_fraction}}};
  }

  HttpResult analyze_paths(Index pairs) const {
    const PathExperiment e = run_path_experiment(model_, cfg_, pairs);
    json out{{"pairs", pairs}, {"segments", e.segments}, {"threshold", e.threshold}};
    for (PathKind k : {PathKind::lerp, PathKind::slerp, PathKind::shoot})
      out[to_string(k)] = {{"mean", e.of(k).mean}, {"std", e.of(k).stddev}, {"totals", e.of(k).totals},
                           {"profile", e.of(k).profile_mean}};
    return {200, out};
  }

  /// Routes with structured errors. Handlers run concurrently.
  void mount(httplib::Server& srv) {
    auto reply = [](httplib::Response& res, const HttpResult& r) {
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    };
    auto guarded = [reply](auto fn) {
      return [reply, fn](const httplib::Request& req, httplib::Response& res) {
        try {
          reply(res, fn(req));
        } catch (const Error& e) {
          reply(res, error_result(status_for(e.kind()), std::string(e.name()), e.what()));
        } catch (const json::exception& e) {
          reply(res, error_result(400, "invalid-argument", std::string("bad JSON: ") + e.what()));
        } catch (const std::exception& e) {
          reply(res, error_result(500, "internal", e.what()));
        }
      };
    };
    auto body = [](const httplib::Request& req) { return req.body.empty() ? json::object() : json::parse(req.body); };
    auto param = [](const httplib::Request& req, const std::string& k, const std::string& def) {
      return req.has_param(k) ? req.get_param_value(k) : def;
    };
    auto count_param = [param](const httplib::Request& req, const std::string& k, Index def) {
      const std::string v = param(req, k, std::to_string(def));
      Index n = 0;
      try {
        n = std::stol(v);
      } catch (const std::exception&) {
        throw Error(ErrorKind::invalid_argument, k + " must be an integer");
      }
      require(n >= 1, ErrorKind::invalid_argument, k + " must be >= 1");
      return n;
    };

    srv.Get("/model/info", guarded([this](const httplib::Request&) { return model_info(); }));
    srv.Get("/directions", guarded([this, param](const httplib::Request& r) {
              return directions(param(r, "t", "T"), param(r, "kind", "local"));
            }));
    srv.Post("/session", guarded([this, body](const httplib::Request& r) { return create_session(body(r)); }));
    srv.Post(R"(/session/([^/]+)/edit)",
             guarded([this, body](const httplib::Request& r) { return edit(r.matches[1], body(r)); }));
    srv.Post(R"(/session/([^/]+)/undo)", guarded([this](const httplib::Request& r) { return undo(r.matches[1]); }));
    srv.Get(R"(/session/([^/]+)/trace)", guarded([this](const httplib::Request& r) { return trace(r.matches[1]); }));
    srv.Get("/analyze/psd", guarded([this, param, count_param](const httplib::Request& r) {
              return analyze_psd(param(r, "t", "T"), count_param(r, "samples", cfg_.psd_samples));
            }));
    srv.Get("/analyze/paths", guarded([this, count_param](const httplib::Request& r) {
              return analyze_paths(count_param(r, "pairs", 3));
            }));
    srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return;
      res.set_content(json{{"error", "not-found"}, {"message", "no such endpoint"}}.dump(), "application/json");
    });
  }

 private:
  std::shared_ptr<SessionState> find(const std::string& id) {
    std::lock_guard lock(sessions_mutex_);
    auto it = sessions_.find(id);
    require(it != sessions_.end(), ErrorKind::unknown_session, "no session '" + id + "'");
    return it->second;
  }

  /// One shooting run; a negative gamma walks the opposite direction.
  std::pair<LatentState, EditTrace> apply(const SessionState& s, const LatentState& from, const EditOp& op) const {
    const EditRow& row = cfg_.row(s.t_label);
    EditConfig ec = edit_config_for(cfg_, row);
    ec.gamma = std::abs(op.gamma);
    ec.n_iter = op.n_iter;
    ec.validate();
    DirectionSource src =
        resolve_direction(model_, catalog_ ? &*catalog_ : nullptr, catalog_dir_, op.direction, from, ec.threshold);
    if (op.gamma < 0.0) src.u = -src.u;
    ShootResult r = shoot(model_, from, src, ec, model_.schedule());
    return {r.state, std::move(r.trace)};
  }

  json session_view(const SessionState& s) const {
    const Vec img = decode_state(model_, cfg_, cfg_.row(s.t_label), s.current, s.seed);
    return json{{"id", s.id},
                {"t", s.t_label},
                {"index", s.current.t},
                {"source", s.source},
                {"seed", s.seed},
                {"steps", s.ops.size()},
                {"residual", (s.current.x - s.origin.x).norm() / std::max(s.origin.x.norm(), 1e-300)},
                {"preview", base64_encode(encode_png(img, model_.shape()))},
                {"state_sha256", sha256_hex(std::string_view(reinterpret_cast<const char*>(s.current.x.data()),
                                                             std::size_t(s.current.x.size()) * sizeof(double)))}};
  }

  RunConfig cfg_;
  EpsilonModel model_;
  fs::path catalog_dir_;
  std::optional<Catalog> catalog_;
  std::string checkpoint_sha_;
  std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<SessionState>> sessions_;
  std::uint64_t session_counter_ = 0;
};

}  // namespace semdir
