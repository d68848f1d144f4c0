// semdir command line: train, dataset, invert, discover, edit, analyze,
// ablate and serve, all driven by one configuration file.

#include "semdir/pipeline.hpp"
#include "semdir/service.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <set>
#include <string>
#include <vector>

using namespace semdir;

namespace {

struct Common {
  std::string config = "config/default.ini";
  std::vector<std::string> overrides;
  std::string checkpoint;
  std::string output;

  RunConfig load() const {
    std::vector<std::string> all = overrides;
    if (!checkpoint.empty()) all.push_back("model.checkpoint=" + fs::absolute(checkpoint).string());
    if (!output.empty()) all.push_back("output.dir=" + fs::absolute(output).string());
    return load_config(config, all);
  }
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "configuration file")->capture_default_str();
  app->add_option("-s,--set", c.overrides, "override a key: section.key=value (repeatable)");
  app->add_option("--checkpoint", c.checkpoint, "model checkpoint (model.checkpoint)");
  app->add_option("-o,--out", c.output, "output directory (output.dir)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic latent directions of a diffusion model"};
  app.require_subcommand(1);
  Common common;

  auto* train_cmd = app.add_subcommand("train", "train the denoiser and write the checkpoint");
  add_common(train_cmd, common);
  bool reuse = false;
  train_cmd->add_flag("--reuse", reuse, "skip training when the checkpoint matches the training settings");

  auto* dataset_cmd = app.add_subcommand("dataset", "export the procedural training images as PNGs");
  add_common(dataset_cmd, common);
  std::string dataset_dir;
  Index dataset_count = 64;
  dataset_cmd->add_option("dir", dataset_dir, "destination directory")->required();
  dataset_cmd->add_option("-n,--count", dataset_count, "number of images")->capture_default_str();

  auto* invert_cmd = app.add_subcommand("invert", "DDIM-invert images and report the round-trip error");
  add_common(invert_cmd, common);
  std::string invert_images;
  std::string invert_t = "T";
  invert_cmd->add_option("--images", invert_images, "directory of PNGs (default: held-out blobs)");
  invert_cmd->add_option("-t,--t", invert_t, "table row, e.g. T or 0.5T")->capture_default_str();

  auto* discover_cmd = app.add_subcommand("discover", "global, PCA and local directions plus catalog.json");
  add_common(discover_cmd, common);

  auto* edit_cmd = app.add_subcommand("edit", "shoot along a direction and decode");
  add_common(edit_cmd, common);
  EditRequest req;
  double gamma = 0.0;
  int n_iter = 0;
  std::string image;
  edit_cmd->add_option("-t,--t", req.t_label, "table row (default edit.default_t)");
  edit_cmd->add_option("-d,--direction", req.direction, "local:<i>, global:<i>, pca:<t>:<i> or a catalog id")
      ->capture_default_str();
  auto* gamma_opt = edit_cmd->add_option("-g,--gamma", gamma, "step size (default: table row)");
  auto* iter_opt = edit_cmd->add_option("-n,--n-iter", n_iter, "shooting iterations (default edit.n_iter)");
  edit_cmd->add_option("--seed", req.seed, "sample seed")->capture_default_str();
  edit_cmd->add_option("--image", image, "edit this PNG instead of a sample");
  edit_cmd->add_option("--name", req.name, "output subdirectory")->capture_default_str();

  auto* analyze_cmd = app.add_subcommand("analyze", "PSD, homogeneity, spectrum, kappa and path analyses");
  add_common(analyze_cmd, common);
  std::vector<std::string> parts;
  analyze_cmd->add_option("parts", parts, "subset of psd homogeneity spectrum kappa paths (default all)");

  auto* ablate_cmd = app.add_subcommand("ablate", "random-direction and no-normalization ablations");
  add_common(ablate_cmd, common);

  auto* serve_cmd = app.add_subcommand("serve", "HTTP service for editing sessions");
  add_common(serve_cmd, common);
  std::string host;
  int port = 0;
  serve_cmd->add_option("--host", host, "bind address (serve.host)");
  serve_cmd->add_option("--port", port, "port (serve.port)");

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig cfg = common.load();
    if (train_cmd->parsed()) {
      if (reuse && checkpoint_current(cfg))
        std::cout << "checkpoint " << cfg.resolve(cfg.checkpoint).string() << " is current\n";
      else
        cmd_train(cfg, std::cout);
    } else if (dataset_cmd->parsed()) {
      cmd_export_dataset(cfg, dataset_dir, dataset_count);
    } else if (invert_cmd->parsed()) {
      const auto s = cmd_invert(cfg, invert_images, invert_t);
      std::cout << "inverted " << s.mse.size() << " images to t index " << s.t << ": mean MSE " << s.mean_mse
                << ", max " << s.max_mse << " (bound " << cfg.inversion_max_mse << ")\n";
      if (s.mean_mse >= cfg.inversion_max_mse) return 3;
    } else if (discover_cmd->parsed()) {
      const auto cat = cmd_discover(cfg, std::cout);
      std::cout << cat.entries.size() << " directions catalogued\n";
    } else if (edit_cmd->parsed()) {
      if (*gamma_opt) req.gamma = gamma;
      if (*iter_opt) req.n_iter = n_iter;
      req.image = image;
      const auto out = cmd_edit(cfg, req);
      std::cout << "edited along " << req.direction << ": |dx| = " << (out.result.state.x - out.start.x).norm()
                << "\n";
    } else if (analyze_cmd->parsed()) {
      std::set<std::string> want(parts.begin(), parts.end());
      if (want.empty()) want = analysis_parts();
      const json m = cmd_analyze(cfg, want, std::cout);
      std::cout << m.dump(2) << "\n";
    } else if (ablate_cmd->parsed()) {
      cmd_ablate(cfg, std::cout);
    } else if (serve_cmd->parsed()) {
      Service service(cfg);
      httplib::Server srv;
      service.mount(srv);
      const std::string h = host.empty() ? cfg.host : host;
      const int p = port ? port : cfg.port;
      std::cout << "listening on " << h << ":" << p << "\n" << std::flush;
      if (!srv.listen(h, p)) {
        std::cerr << "cannot listen on " << h << ":" << p << "\n";
        return 1;
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
