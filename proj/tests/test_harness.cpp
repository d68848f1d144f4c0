#include "semdir/pipeline.hpp"
#include "semdir/report.hpp"

#include "support.hpp"

#include <cstdlib>
#include <map>
#include <sstream>

using namespace semdir;
using namespace semdir::testing;
namespace fs = std::filesystem;

namespace {

RunConfig parse_text(const std::string& text, const std::vector<std::string>& overrides = {}) {
  std::istringstream is(text);
  return parse_config(is, "/base", overrides);
}

std::string default_text() { return read_text(default_config()); }

// Small sizes against the trained checkpoint.
RunConfig small_config(const fs::path& out, std::vector<std::string> extra = {}) {
  std::vector<std::string> o{"model.checkpoint=" + trained_checkpoint().string(),
                             "output.dir=" + out.string(),
                             "sampling.steps=10",
                             "edit.decode_steps=10",
                             "edit.n_iter=2",
                             "discover.global_samples=3",
                             "discover.global_n=3",
                             "discover.pca_samples=12",
                             "discover.pca_k=3",
                             "discover.local_samples=1",
                             "table.celeba_hq.T.inversion_steps=10",
                             "table.celeba_hq.0.75T.inversion_steps=10",
                             "table.celeba_hq.0.5T.inversion_steps=10",
                             "table.celeba_hq.0.25T.inversion_steps=10"};
  o.insert(o.end(), extra.begin(), extra.end());
  return load_config(default_config(), o);
}

using Tree = std::map<std::string, std::string>;

Tree tree_bytes(const fs::path& root) {
  Tree out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = file_bytes(e.path());
  return out;
}

void expect_same_tree(const Tree& a, const Tree& b) {
  ASSERT_EQ(a.size(), b.size());
  for (const auto& [name, bytes] : a) {
    ASSERT_TRUE(b.count(name)) << name;
    EXPECT_TRUE(bytes == b.at(name)) << name << " differs";
  }
}

}  // namespace

// ----------------------------------------------------------------- config --

TEST(Config, DefaultFileParsesAndValidates) {
  const RunConfig c = load_config(default_config());
  EXPECT_TRUE(c.violations().empty());
  EXPECT_EQ(c.T, 1000);
  EXPECT_EQ(c.arch.to_string(), "unet-8-32-64-64-t64-g8-1x32x32");
  EXPECT_EQ(c.rows().size(), 4u);
  EXPECT_EQ(c.profile, "celeba_hq");
  EXPECT_DOUBLE_EQ(c.row("0.5T").gamma, 0.25);
  EXPECT_EQ(c.timestep("T"), 999);
  EXPECT_EQ(c.timestep("0.25T"), 249);
  EXPECT_EQ(c.resolve("x.sdc"), default_config().parent_path() / "x.sdc");
}

TEST(Config, OverridesApplyIncludingTableRows) {
  const RunConfig c = parse_text(default_text(), {"edit.kappa=0.9", "table.celeba_hq.0.5T.gamma=0.3",
                                                  "edit.profile=afhq_dog"});
  EXPECT_DOUBLE_EQ(c.kappa, 0.9);
  EXPECT_EQ(c.profile, "afhq_dog");
  EXPECT_EQ(c.row("T").inversion_steps, 80);
  const RunConfig d = parse_text(default_text(), {"table.celeba_hq.0.5T.gamma=0.3"});
  EXPECT_DOUBLE_EQ(d.row("0.5T").gamma, 0.3);
}

TEST(Config, AllViolationsReportedTogether) {
  try {
    parse_text(default_text(), {"edit.kappa=1.5", "analysis.bogus=1", "sampling.steps=abc", "broken"});
    FAIL() << "expected config_invalid";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config_invalid);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("kappa"), std::string::npos) << msg;
    EXPECT_NE(msg.find("bogus"), std::string::npos) << msg;
    EXPECT_NE(msg.find("steps"), std::string::npos) << msg;
    EXPECT_NE(msg.find("broken"), std::string::npos) << msg;
  }
}

TEST(Config, UnknownRowAndMalformedInputRejected) {
  const RunConfig c = load_config(default_config());
  EXPECT_SEMDIR_ERROR(c.row("0.6T"), ErrorKind::config_invalid);
  EXPECT_SEMDIR_ERROR(parse_text("[model\nT=3\n"), ErrorKind::config_invalid);
  EXPECT_SEMDIR_ERROR(load_config("/nonexistent/semdir.ini"), ErrorKind::io_error);
  EXPECT_SEMDIR_ERROR(parse_t_fraction("half"), ErrorKind::config_invalid);
}

TEST(Config, HashTracksContent) {
  const RunConfig a = parse_text(default_text());
  const RunConfig b = parse_text(default_text());
  const RunConfig c = parse_text(default_text(), {"analysis.seed=12"});
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), c.hash());
  EXPECT_EQ(a.hash().size(), 64u);
}

TEST(Config, TimestepFractions) {
  EXPECT_DOUBLE_EQ(parse_t_fraction("T"), 1.0);
  EXPECT_DOUBLE_EQ(parse_t_fraction("0.75T"), 0.75);
  EXPECT_EQ(format_t_fraction(1.0), "T");
  EXPECT_EQ(format_t_fraction(0.25), "0.25T");
}

// ----------------------------------------------------------------- digest --

TEST(Digest, Sha256KnownVectors) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Digest, Base64RoundTrip) {
  EXPECT_EQ(base64_encode({'f', 'o', 'o', 'b'}), "Zm9vYg==");
  for (std::size_t n = 0; n < 40; ++n) {
    std::vector<std::uint8_t> bytes(n);
    for (std::size_t i = 0; i < n; ++i) bytes[i] = std::uint8_t(i * 37 + 11);
    EXPECT_EQ(base64_decode(base64_encode(bytes)), bytes) << n;
  }
  EXPECT_SEMDIR_ERROR(base64_decode("@@@@"), ErrorKind::format_error);
}

// -------------------------------------------------------------- artifacts --

TEST(ImageIo, PngRoundTripIsExactOnByteGrid) {
  const ImageShape shape{1, 5, 7};
  Vec img(shape.size());
  for (Index i = 0; i < img.size(); ++i) img[i] = from_byte(std::uint8_t((i * 53) % 256));
  ImageShape got;
  const Vec back = decode_png(encode_png(img, shape), &got);
  EXPECT_EQ(got.channels, 1);
  EXPECT_EQ(got.height, 5);
  EXPECT_EQ(got.width, 7);
  EXPECT_EQ(back, img);
  EXPECT_EQ(to_byte(-5.0), 0);
  EXPECT_EQ(to_byte(5.0), 255);
  EXPECT_SEMDIR_ERROR(decode_png({1, 2, 3}), ErrorKind::format_error);
  EXPECT_SEMDIR_ERROR(encode_png(Vec::Zero(12), ImageShape{3, 2, 2}), ErrorKind::invalid_argument);
}

TEST(Artifacts, ContainersRoundTrip) {
  const fs::path dir = scratch_dir("artifacts");
  Rng rng(4);
  TangentFrame f;
  f.V = standard_normal(rng, 12).reshaped(6, 2);
  f.U = standard_normal(rng, 8).reshaped(4, 2);
  f.lambdas = Vec{{3.0, 1.0}};
  f.n = 2;
  f.base_x = standard_normal(rng, 6);
  f.t = 17;
  f.threshold_used = 0.5;
  write_container(dir / "f.sdc", to_container(f));
  const TangentFrame f2 = frame_from_container(read_container(dir / "f.sdc"));
  EXPECT_EQ(f2.n, 2);
  EXPECT_EQ(f2.t, 17);
  EXPECT_DOUBLE_EQ(f2.threshold_used, 0.5);
  EXPECT_EQ(f2.V, f.V.cast<float>().cast<double>());
  EXPECT_EQ(f2.U, f.U.cast<float>().cast<double>());

  GlobalBasis g;
  g.U_bar = standard_normal(rng, 12).reshaped(4, 3);
  g.raw_norms = Vec{{0.9, 0.5, 0.1}};
  g.n = 3;
  g.sample_count = 100;
  g.seed = 123456789012345ULL;
  g.t = 999;
  write_container(dir / "g.sdc", to_container(g));
  const GlobalBasis g2 = global_from_container(read_container(dir / "g.sdc"));
  EXPECT_EQ(g2.seed, g.seed);
  EXPECT_EQ(g2.sample_count, 100);
  EXPECT_EQ(g2.U_bar, g.U_bar.cast<float>().cast<double>());

  PCABasis p;
  p.components = standard_normal(rng, 8).reshaped(4, 2);
  p.mean_h = standard_normal(rng, 4);
  p.explained = Vec{{0.7, 0.2}};
  p.k = 2;
  p.t = 499;
  write_container(dir / "p.sdc", to_container(p));
  const PCABasis p2 = pca_from_container(read_container(dir / "p.sdc"));
  EXPECT_EQ(p2.k, 2);
  EXPECT_EQ(p2.mean_h, p.mean_h.cast<float>().cast<double>());

  EXPECT_SEMDIR_ERROR(frame_from_container(to_container(g)), ErrorKind::format_error);
  EXPECT_SEMDIR_ERROR(read_container(dir / "missing.sdc"), ErrorKind::io_error);
}

TEST(Artifacts, CatalogRoundTrip) {
  const fs::path dir = scratch_dir("catalog");
  Catalog c;
  c.entries.push_back({"global:0", "global", "T", 999, "global_T.sdc", "U_bar", 0, 0.8, "L=100 seed=1"});
  c.entries.push_back({"pca:0.5T:2", "pca", "0.5T", 499, "pca_0p5T.sdc", "components", 2, 0.1, "samples=10"});
  write_catalog(dir / "catalog.json", c);
  const Catalog d = read_catalog(dir / "catalog.json");
  ASSERT_EQ(d.entries.size(), 2u);
  EXPECT_EQ(d.to_json(), c.to_json());
  ASSERT_NE(d.find("pca:0.5T:2"), nullptr);
  EXPECT_EQ(d.find("pca:0.5T:2")->column, 2);
  EXPECT_EQ(d.find("local:T:s0:0"), nullptr);
  write_text(dir / "bad.json", "{\"directions\": [{\"id\": 1}]}");
  EXPECT_SEMDIR_ERROR(read_catalog(dir / "bad.json"), ErrorKind::format_error);
}

TEST(Artifacts, TraceRoundTrip) {
  const fs::path dir = scratch_dir("trace");
  Rng rng(2);
  EditTrace t;
  for (int i = 0; i < 3; ++i) {
    EditRecord r;
    r.x = standard_normal(rng, 4);
    r.h = standard_normal(rng, 2);
    r.v = standard_normal(rng, 4);
    r.u = standard_normal(rng, 2);
    r.x0_before = standard_normal(rng, 4);
    r.x0_after = standard_normal(rng, 4);
    r.frame_rank = i + 1;
    r.dx_norm = 0.1 * i;
    t.push_back(r);
  }
  write_trace(dir, t, ImageShape{1, 2, 2});
  const EditTrace back = read_trace(dir / "trace.jsonl");
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].x, t[i].x);
    EXPECT_EQ(back[i].u, t[i].u);
    EXPECT_EQ(back[i].x0_after, t[i].x0_after);
    EXPECT_EQ(back[i].frame_rank, t[i].frame_rank);
    EXPECT_EQ(back[i].dx_norm, t[i].dx_norm);
  }
  EXPECT_TRUE(fs::exists(dir / "iter_002.png"));
}

// ----------------------------------------------------------------- report --

TEST(Report, TableRendering) {
  Table t{{"name", "value"}, {}};
  t.add({"alpha", "1"});
  t.add({"b", "22"});
  EXPECT_EQ(t.tsv(), "name\tvalue\nalpha\t1\nb\t22\n");
  EXPECT_EQ(t.text(), "name   value\n------------\nalpha  1\nb      22\n");
  EXPECT_SEMDIR_ERROR(t.add({"x"}), ErrorKind::invalid_argument);
  EXPECT_EQ(fixed(0.123456, 3), "0.123");
}

TEST(Report, SvgHasOnePolylinePerSeries) {
  LineChart ch;
  ch.title = "psd";
  ch.log_y = true;
  ch.series.push_back({"a", {0, 1, 2}, {1, 0.1, 0.01}, {}});
  ch.series.push_back({"b", {0, 1, 2}, {2, 0.2, 0.02}, {0.1, 0.01, 0.001}});
  const std::string svg = ch.svg();
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  std::size_t lines = 0;
  for (auto p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++lines;
  EXPECT_EQ(lines, 2u);
  EXPECT_NE(svg.find("<polygon"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

// --------------------------------------------------------------- pipeline --

TEST(Pipeline, FingerprintAndCurrency) {
  const RunConfig c = load_config(default_config(), {"model.checkpoint=" + trained_checkpoint().string()});
  const RunConfig d = load_config(default_config(), {"model.checkpoint=" + trained_checkpoint().string(),
                                                     "train.epochs=21"});
  const RunConfig e = load_config(default_config(), {"model.checkpoint=" + trained_checkpoint().string(),
                                                     "analysis.seed=99"});
  EXPECT_NE(training_fingerprint(c), training_fingerprint(d));
  EXPECT_EQ(training_fingerprint(c), training_fingerprint(e));
  EXPECT_TRUE(checkpoint_current(c));
  EXPECT_FALSE(checkpoint_current(d));
  const fs::path dir = scratch_dir("currency");
  fs::copy_file(trained_checkpoint(), dir / "model.sdc");
  EXPECT_FALSE(checkpoint_current(load_config(default_config(), {"model.checkpoint=" + (dir / "model.sdc").string()})));
}

TEST(Pipeline, LoadModelChecksConfiguration) {
  const RunConfig ok = load_config(default_config(), {"model.checkpoint=" + trained_checkpoint().string()});
  EXPECT_EQ(load_model(ok).arch().to_string(), ok.arch.to_string());
  EXPECT_SEMDIR_ERROR(load_model(load_config(default_config(), {"model.checkpoint=" + trained_checkpoint().string(),
                                                                "model.snr_shift=1"})),
                      ErrorKind::config_invalid);
  EXPECT_SEMDIR_ERROR(load_model(load_config(default_config(), {"model.checkpoint=/nonexistent/m.sdc"})),
                      ErrorKind::config_invalid);
}

TEST(Pipeline, DiscoverIsDeterministicAndCatalogResolves) {
  const fs::path a = scratch_dir("discover");
  std::ostringstream log;
  const Catalog ca = cmd_discover(small_config(a), log);
  const Tree first = tree_bytes(a);
  scratch_dir("discover");
  cmd_discover(small_config(a), log);
  expect_same_tree(first, tree_bytes(a));

  EXPECT_NE(ca.find("global:2"), nullptr);
  EXPECT_NE(ca.find("pca:0.25T:0"), nullptr);
  EXPECT_NE(ca.find("local:0.5T:s0:0"), nullptr);

  const json m = json::parse(read_text(a / "discover" / "manifest.json"));
  EXPECT_EQ(m.at("command"), "discover");
  EXPECT_EQ(m.at("config_sha256"), small_config(a).hash());
  EXPECT_EQ(m.at("files").at("catalog.json"), sha256_hex(read_text(a / "discover" / "catalog.json")));
  EXPECT_EQ(m.at("seeds").at("discover"), 1);

  const EpsilonModel& model = trained_model();
  const RunConfig cfg = small_config(a);
  const fs::path disc = a / "discover";
  Rng rng(3);
  const LatentState at_t{sample_latents(model, model.schedule(), 1, 999, rng, 10).col(0), 999};
  const DirectionSource g = resolve_direction(model, &ca, disc, "global:1", at_t, 0.5);
  const GlobalBasis gb = global_from_container(read_container(disc / "global_T.sdc"));
  EXPECT_NEAR((g.u - gb.U_bar.col(1).normalized()).norm(), 0.0, 1e-12);
  const LatentState at_half{at_t.x, cfg.timestep("0.5T")};
  EXPECT_SEMDIR_ERROR(resolve_direction(model, &ca, disc, "global:1", at_half, 0.5), ErrorKind::invalid_argument);
  EXPECT_SEMDIR_ERROR(resolve_direction(model, &ca, disc, "global:99", at_t, 0.5), ErrorKind::index_out_of_range);
  EXPECT_SEMDIR_ERROR(resolve_direction(model, &ca, disc, "nonsense", at_t, 0.5), ErrorKind::invalid_argument);
  EXPECT_SEMDIR_ERROR(resolve_direction(model, nullptr, disc, "global:1", at_t, 0.5), ErrorKind::invalid_argument);
}

TEST(Pipeline, EditIsDeterministic) {
  const fs::path a = scratch_dir("edit");
  EditRequest req;
  req.direction = "local:0";
  req.seed = 21;
  const EditOutcome oa = cmd_edit(small_config(a), req);
  const Tree first = tree_bytes(a);
  scratch_dir("edit");
  const EditOutcome ob = cmd_edit(small_config(a), req);
  EXPECT_EQ(oa.result.state.x, ob.result.state.x);
  EXPECT_EQ(oa.result.trace.size(), 2u);
  expect_same_tree(first, tree_bytes(a));
  const json m = json::parse(read_text(a / "edit" / "edit" / "manifest.json"));
  EXPECT_EQ(m.at("request").at("n_iter"), 2);
  EXPECT_EQ(m.at("request").at("t"), "T");
  EXPECT_GT(m.at("metrics").at("displacement").get<double>(), 0.0);

  req.gamma = 0.0;
  req.name = "still";
  const EditOutcome still = cmd_edit(small_config(a), req);
  EXPECT_EQ(still.result.state.x, still.start.x);
  EXPECT_EQ(still.original, still.edited);
}

TEST(Pipeline, InvertWritesReconstructions) {
  const fs::path a = scratch_dir("invert");
  const InversionSummary s = cmd_invert(small_config(a), {}, "T", 3);
  ASSERT_EQ(s.mse.size(), 3u);
  EXPECT_LE(s.mean_mse, s.max_mse);
  EXPECT_TRUE(fs::exists(a / "invert" / "recon_002.png"));
  const json m = json::parse(read_text(a / "invert" / "manifest.json"));
  EXPECT_EQ(m.at("metrics").at("steps"), 10);
  EXPECT_EQ(m.at("metrics").at("t"), 999);
}

TEST(Cli, UnknownOptionAndBadConfigFail) {
  const fs::path dir = scratch_dir("cli");
  const std::string cli = SEMDIR_CLI;
  EXPECT_NE(std::system((cli + " --no-such-flag > /dev/null 2>&1").c_str()), 0);
  const int rc = std::system((cli + " analyze -c " + default_config().string() +
                              " -s edit.kappa=2 > " + (dir / "err.txt").string() + " 2>&1")
                                 .c_str());
  EXPECT_EQ(WEXITSTATUS(rc), 2);
  EXPECT_NE(read_text(dir / "err.txt").find("error:"), std::string::npos);
  EXPECT_EQ(std::system((cli + " --help > /dev/null").c_str()), 0);
}
