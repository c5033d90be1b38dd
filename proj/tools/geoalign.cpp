// geoalign: synthetic scenes, MGSF masks, mask scoring, gradient checks and
// the retrieval ablation from the command line.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "geoalign/gradcheck.hpp"
#include "geoalign/mgsf.hpp"
#include "geoalign/raster_io.hpp"
#include "geoalign/retrieval.hpp"
#include "geoalign/scene.hpp"

namespace fs = std::filesystem;
using namespace geoalign;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_usage = 1;
constexpr int exit_check = 2;

const char* formats_help = R"(File formats:
  depth/mask raster (.geod)  ASCII header "GEOD 1 <H> <W>\n", then H*W
                             little-endian IEEE-754 float64 values, row-major.
  label raster (.geol)       ASCII header "GEOL 1 <H> <W>\n", then H*W bytes:
                             0 ground, 1 roof, 2 facade, 3 edge.
  mask image (.pgm)          binary PGM P5, maxval 255, byte = round(255*m).
  scene spec (text)          one directive per line, '#' comments:
                               ground <depth>        slope <sx> <sy>
                               noise <sigma>         seed <n>
                               raster <H> <W>        box <x> <y> <w> <h> <height>
                             box may repeat; every other directive at most once.

Exit codes: 0 success, 1 usage or format error, 2 check failed
(gradcheck above tolerance, eval not evaluable or below --min-accuracy).
All output files are written to a temp name and renamed into place.)";

SceneFamily family_by_name(const std::string& name) {
  if (name == "facade_heavy") return SceneFamily::facade_heavy();
  if (name == "easy") return SceneFamily::easy();
  return SceneFamily::box_city();
}

struct SynthArgs {
  std::string spec_file;
  std::uint64_t random_seed = 0;
  std::string family = "box_city";
  std::string out_dir;
  std::string view = "oblique";
};

int cmd_synth(const SynthArgs& a, bool random) {
  if (random == !a.spec_file.empty()) throw CLI::ValidationError("synth", "give exactly one of SPEC or --random");
  std::string spec_text;
  SceneSpec spec;
  if (random) {
    spec = random_scene(a.random_seed, family_by_name(a.family));
    spec_text = format_scene_spec(spec);
  } else {
    spec_text = read_file(a.spec_file);
    spec = parse_scene_spec(spec_text);
  }
  const Render r = a.view == "ortho" ? render_ortho(spec) : render_oblique(spec);
  const fs::path out(a.out_dir);
  fs::create_directories(out);
  write_depth(out / "depth.geod", r.depth);
  write_labels(out / "labels.geol", r.labels);
  write_file_atomic(out / "scene.spec", spec_text);
  fmt::print("{}: {}x{} {} render, {} boxes, {} facade pixels\n", out.string(), r.depth.height(), r.depth.width(),
             a.view, spec.boxes.size(), r.labels.count(Label::facade));
  return exit_ok;
}

struct MaskArgs {
  std::string depth_file;
  std::string prefix;
  GateParams gate;
  MgsfConfig cfg;
  std::size_t pool = 2;
};

int cmd_mask(const MaskArgs& a) {
  a.cfg.validate();
  const DepthMap depth = read_depth(a.depth_file);
  const std::size_t h = depth.height() / a.pool, w = depth.width() / a.pool;
  if (h == 0 || w == 0) {
    throw std::invalid_argument(fmt::format("{}x{} raster is smaller than --pool {}", depth.height(), depth.width(), a.pool));
  }
  const MgsfResult res = mgsf_forward(Tensor(Shape{1, 1, h, w}, 1.0), depth, a.gate, a.cfg);
  const auto m = res.mask.mask.data();
  write_depth(a.prefix + ".mask.geod", h, w, m);
  write_pgm(a.prefix + ".mask.pgm", h, w, m);
  const auto& g = res.geometry;
  const auto [lo, hi] = std::minmax_element(m.begin(), m.end());
  double mean = 0.0;
  for (double v : m) mean += v;
  mean /= static_cast<double>(m.size());
  std::string csv = "n_dom_x,n_dom_y,n_dom_z,tau_grad,edge_count,flat_count,mask_mean,mask_min,mask_max\n";
  csv += fmt::format("{:.12g},{:.12g},{:.12g},{:.12g},{},{},{:.12g},{:.12g},{:.12g}\n", g.n_dom[0], g.n_dom[1],
                     g.n_dom[2], g.partition.tau_grad, g.partition.edge_count(), g.partition.flat_count(), mean, *lo,
                     *hi);
  write_file_atomic(a.prefix + ".stats.csv", csv);
  std::cout << csv;
  return exit_ok;
}

struct EvalArgs {
  std::string mask_file;
  std::string label_file;
  std::string out;
  double min_accuracy = 0.0;
};

int cmd_eval(const EvalArgs& a) {
  const DepthMap mask = read_depth(a.mask_file);
  const LabelMap labels = read_labels(a.label_file);
  if (labels.height < mask.height() || labels.width < mask.width()) {
    throw std::invalid_argument(fmt::format("{}x{} labels cannot be pooled to the {}x{} mask", labels.height,
                                            labels.width, mask.height(), mask.width()));
  }
  const auto q = mask_quality(mask.tensor(), labels);
  if (!q) {
    std::cerr << "not evaluable: no facade (or no roof/ground) pixels after pooling\n";
    return exit_check;
  }
  std::string csv =
      "balanced_accuracy,horizontal_recall,facade_recall,roof_mean,ground_mean,facade_mean,roof_pixels,"
      "ground_pixels,facade_pixels\n";
  csv += fmt::format("{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{},{},{}\n", q->balanced_accuracy,
                     q->horizontal_recall, q->facade_recall, q->roof_mean, q->ground_mean, q->facade_mean,
                     q->roof_pixels, q->ground_pixels, q->facade_pixels);
  if (!a.out.empty()) write_file_atomic(a.out, csv);
  std::cout << csv;
  if (q->balanced_accuracy < a.min_accuracy) {
    std::cerr << fmt::format("balanced accuracy {:.6f} below {:.6f}\n", q->balanced_accuracy, a.min_accuracy);
    return exit_check;
  }
  return exit_ok;
}

struct GradcheckArgs {
  std::uint64_t seed = 0;
  std::size_t seeds = 1;
  double eps = 1e-5;
  double tol = 1e-4;
  std::string out;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  std::string table = "seed,check,probes,max_rel_error,status\n";
  std::vector<std::string> offenders;
  for (std::size_t s = 0; s < a.seeds; ++s) {
    GradCheckSuiteConfig cfg;
    cfg.seed = a.seed + s;
    cfg.eps = a.eps;
    for (const GradCheckResult& r : run_gradcheck_suite(cfg)) {
      const bool ok = r.max_rel_error < a.tol;
      table += fmt::format("{},{},{},{:.3e},{}\n", cfg.seed, r.name, r.probes, r.max_rel_error, ok ? "pass" : "FAIL");
      if (!ok) offenders.push_back(fmt::format("seed {} {} ({:.3e})", cfg.seed, r.name, r.max_rel_error));
    }
  }
  if (!a.out.empty()) write_file_atomic(a.out, table);
  std::cout << table;
  if (!offenders.empty()) {
    std::cerr << fmt::format("{} check(s) at or above tolerance {:g}:\n", offenders.size(), a.tol);
    for (const auto& o : offenders) std::cerr << "  " << o << "\n";
    return exit_check;
  }
  return exit_ok;
}

struct BenchArgs {
  std::size_t scenes = 50;
  std::uint64_t seed = 0;
  std::string ablation = "all";
  std::string family = "facade_heavy";
  std::string out;
};

int cmd_bench(const BenchArgs& a) {
  if (a.scenes < 2) throw CLI::ValidationError("--scenes", "need at least 2 scenes");
  struct Arm {
    const char* name;
    bool mgsa, mgsf;
  };
  const Arm arms[] = {{"base", false, false}, {"mgsa", true, false}, {"mgsf", false, true}, {"full", true, true}};
  std::string csv = "arm,scenes,seed,family,r1,r5,r10,ap,mean_positive_cosine\n";
  for (const Arm& arm : arms) {
    if (a.ablation != "all" && a.ablation != arm.name) continue;
    ExperimentConfig cfg;
    cfg.n_scenes = a.scenes;
    cfg.seed = a.seed;
    cfg.use_mgsa = arm.mgsa;
    cfg.use_mgsf = arm.mgsf;
    cfg.family = family_by_name(a.family);
    const RetrievalReport r = run_experiment(cfg);
    csv += fmt::format("{},{},{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.9f}\n", arm.name, a.scenes, a.seed, a.family,
                       recall_at_k(r.per_query_ranks, 1), recall_at_k(r.per_query_ranks, 5),
                       recall_at_k(r.per_query_ranks, 10), r.ap, r.mean_positive_cosine);
  }
  if (!a.out.empty()) write_file_atomic(a.out, csv);
  std::cout << csv;
  return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Geometry-aware cross-view alignment toolkit on synthetic depth scenes."};
  app.footer(formats_help);
  app.require_subcommand(1);
  const std::vector<std::string> families = {"box_city", "facade_heavy", "easy"};

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Render a scene spec (or a random scene) to depth and label rasters.");
  s->add_option("spec", synth.spec_file, "Scene spec text file")->check(CLI::ExistingFile);
  auto* random_opt = s->add_option("--random", synth.random_seed, "Generate a random scene from this seed instead");
  s->add_option("--family", synth.family, "Scene family for --random")
      ->check(CLI::IsMember(families))
      ->capture_default_str();
  s->add_option("-o,--out-dir", synth.out_dir, "Directory for depth.geod, labels.geol and scene.spec")->required();
  s->add_option("--view", synth.view, "Render mode")->check(CLI::IsMember({"ortho", "oblique"}))->capture_default_str();

  MaskArgs mask;
  auto* m = app.add_subcommand("mask", "Compute the MGSF geometric mask of a depth raster.");
  m->add_option("depth", mask.depth_file, "Depth raster (.geod)")->required()->check(CLI::ExistingFile);
  m->add_option("prefix", mask.prefix, "Output prefix for .mask.geod, .mask.pgm, .stats.csv")->required();
  m->add_option("--alpha", mask.gate.alpha, "Gate scale")->capture_default_str();
  m->add_option("--beta", mask.gate.beta, "Gate bias")->capture_default_str();
  m->add_option("--dilation", mask.cfg.dilation_r, "Macro-gradient dilation r")->capture_default_str();
  m->add_option("--tau-q", mask.cfg.tau_grad_quantile, "Edge threshold quantile in (0,1)")->capture_default_str();
  m->add_option("--k", mask.cfg.kmeans_k, "K-means clusters")->capture_default_str();
  m->add_option("--seed", mask.cfg.kmeans_seed, "K-means seed")->capture_default_str();
  m->add_option("--pool", mask.pool, "Mask resolution is the raster size divided by this")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Score a mask raster against a label raster (balanced accuracy).");
  e->add_option("mask", eval.mask_file, "Mask raster (.geod)")->required()->check(CLI::ExistingFile);
  e->add_option("labels", eval.label_file, "Label raster (.geol), pooled to the mask size")
      ->required()
      ->check(CLI::ExistingFile);
  e->add_option("--out", eval.out, "Also write the CSV row here");
  e->add_option("--min-accuracy", eval.min_accuracy, "Exit 2 if balanced accuracy is below this")
      ->capture_default_str();

  GradcheckArgs grad;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference check of every learnable group against every loss.");
  g->add_option("--seed", grad.seed, "First seed")->capture_default_str();
  g->add_option("--seeds", grad.seeds, "Number of consecutive seeds")->check(CLI::PositiveNumber)->capture_default_str();
  g->add_option("--eps", grad.eps, "Central-difference step")->check(CLI::PositiveNumber)->capture_default_str();
  g->add_option("--tol", grad.tol, "Maximum relative error")->capture_default_str();
  g->add_option("--out", grad.out, "Also write the table here");

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "Oblique-to-ortho retrieval ablation; one CSV row per arm.");
  b->add_option("--scenes", bench.scenes, "Scenes (queries and gallery size)")->capture_default_str();
  b->add_option("--seed", bench.seed, "Experiment seed")->capture_default_str();
  b->add_option("--ablation", bench.ablation, "Arm to run")
      ->check(CLI::IsMember({"all", "base", "mgsa", "mgsf", "full"}))
      ->capture_default_str();
  b->add_option("--family", bench.family, "Scene family")->check(CLI::IsMember(families))->capture_default_str();
  b->add_option("--out", bench.out, "Also write the CSV here");

  try {
    app.parse(argc, argv);
    if (s->parsed()) return cmd_synth(synth, random_opt->count() > 0);
    if (m->parsed()) return cmd_mask(mask);
    if (e->parsed()) return cmd_eval(eval);
    if (g->parsed()) return cmd_gradcheck(grad);
    if (b->parsed()) return cmd_bench(bench);
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? exit_ok : exit_usage;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return exit_usage;
  }
  return exit_usage;
}
