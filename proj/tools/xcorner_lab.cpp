// xcorner-lab: dataset generation, training, detection, recovery and benchmarks.
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "xcorner/boardgrow.hpp"
#include "xcorner/candfilter.hpp"
#include "xcorner/lab.hpp"
#include "xcorner/subpix.hpp"
#include "xcorner/synthgen.hpp"
#include "xcorner/xnet.hpp"

namespace {

using namespace xcorner;

// Bad option values detected after CLI11 parsing; reported with exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

double to_double(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::logic_error&) {
  }
  throw UsageError("bad " + what + " '" + text + "'");
}

int to_int(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(text, &used);
    if (used == text.size()) return v;
  } catch (const std::logic_error&) {
  }
  throw UsageError("bad " + what + " '" + text + "'");
}

ThresholdScheme parse_threshold(const std::string& text) {
  ThresholdScheme s;
  if (text == "adaptive") {
    s = ThresholdScheme::adaptive();
  } else if (text.rfind("fixed:", 0) == 0) {
    s = ThresholdScheme::fixed(to_double(text.substr(6), "threshold"));
  } else if (text.rfind("std:", 0) == 0) {
    s = ThresholdScheme::std_dev(to_double(text.substr(4), "threshold"));
  } else if (text.rfind("max:", 0) == 0) {
    s = ThresholdScheme::max_linear(to_double(text.substr(4), "threshold"));
  } else {
    throw UsageError("threshold must be adaptive, fixed:C, std:K or max:A");
  }
  try {
    s.validate();
  } catch (const ParameterError& e) {
    throw UsageError(e.what());
  }
  return s;
}

// "k=10,min=2,skip=30" or "off".
void parse_cluster(const std::string& text, DetectOptions& options) {
  if (text == "off") {
    options.cluster = false;
    return;
  }
  for (const auto& item : split(text, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw UsageError("cluster entries look like k=10");
    const std::string key = item.substr(0, eq);
    const int value = to_int(item.substr(eq + 1), "cluster " + key);
    if (key == "k") {
      options.cluster_options.k = value;
    } else if (key == "min") {
      options.cluster_options.min_cluster = value;
    } else if (key == "skip") {
      options.cluster_options.skip_below = value;
    } else {
      throw UsageError("unknown cluster key '" + key + "'");
    }
  }
  if (options.cluster_options.k < 1) throw UsageError("cluster k must be at least 1");
}

template <typename T, typename Fn>
T usage_guard(Fn fn) {
  try {
    return fn();
  } catch (const ParameterError& e) {
    throw UsageError(e.what());
  }
}

struct DetectFlags {
  std::string model;
  std::string image;
  std::string threshold = "adaptive";
  int nms_halfwidth = 3;
  double nms_overlap = 0.5;
  std::string cluster = "k=10,min=2,skip=30";
  std::string refine = "mixed";
  std::uint64_t seed = 0;
  std::string out;

  void add_to(CLI::App* app) {
    app->add_option("--model", model, "Model file")->required();
    app->add_option("--image", image, "P5 image")->required();
    app->add_option("--threshold", threshold, "adaptive | fixed:C | std:K | max:A");
    app->add_option("--nms-halfwidth", nms_halfwidth, "NMS box half-width");
    app->add_option("--nms-overlap", nms_overlap, "NMS IoU threshold");
    app->add_option("--cluster", cluster, "k=K,min=M,skip=S or off");
    app->add_option("--refine", refine, "mixed|gauss|parabolic|com|surface|edge|none");
    app->add_option("--seed", seed, "Cluster seed");
    app->add_option("--out", out, "Output CSV")->required();
  }

  DetectOptions options() const {
    DetectOptions o;
    o.scheme = parse_threshold(threshold);
    if (nms_halfwidth < 0) throw UsageError("nms half-width must be nonnegative");
    if (!(nms_overlap > 0.0 && nms_overlap < 1.0)) throw UsageError("nms overlap must lie in (0, 1)");
    o.nms_halfwidth = nms_halfwidth;
    o.nms_overlap = nms_overlap;
    parse_cluster(cluster, o);
    o.cluster_options.seed = seed;
    o.refine = usage_guard<RefineMethod>([&] { return parse_refine_method(refine); });
    return o;
  }
};

DetectResult run_detect(const DetectFlags& flags, const DetectOptions& options, ValueGrid& image) {
  const DetectorModel model = load_model(flags.model);
  image = load_gray(flags.image);
  DetectResult result = detect(model, image, options);
  if (result.status == ThresholdStatus::kNoResponse) {
    std::cerr << "warning: no response above " << kAdaptiveFloor << "; no candidates\n";
  }
  return result;
}

int cmd_gen(const std::string& kind, int count, const std::string& out, std::uint64_t seed,
            const CLI::App& app, const BoardSceneSpec& fixed, int image_size,
            const std::string& occlude) {
  if (count < 0) throw UsageError("count must be nonnegative");
  std::filesystem::create_directories(out);
  std::vector<ManifestRow> rows;

  if (kind == "corner") {
    for (int i = 0; i < count; ++i) {
      std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
      std::uniform_real_distribution<double> shift(-0.5, 0.5);
      CornerSceneSpec spec;
      spec.image_size = image_size;
      spec.rotation_deg = fixed.rotation_deg;
      spec.skew_deg = fixed.skew_deg;
      spec.noise_std = fixed.noise_std;
      spec.subpixel_shift = {shift(rng), shift(rng)};
      spec.seed = rng();
      const SceneRender scene = usage_guard<SceneRender>([&] { return render_corner(spec); });
      const std::string stem = image_stem(i);
      save_sample(out, stem, scene);
      ManifestRow r;
      r.filename = stem + ".pgm";
      r.rows = r.cols = 1;
      r.rotation_deg = spec.rotation_deg;
      r.skew_deg = spec.skew_deg;
      r.noise_std = spec.noise_std;
      rows.push_back(r);
    }
    write_manifest(std::filesystem::path(out) / kManifestName, rows);
    return 0;
  }

  const bool custom = !occlude.empty();
  bool any_fixed = custom;
  for (const char* name : {"--rows", "--cols", "--square", "--noise", "--rot", "--skew", "--invert",
                           "--k1", "--k2", "--p1", "--p2"}) {
    any_fixed = any_fixed || app.count(name) > 0;
  }
  if (!any_fixed) {
    BoardDistribution dist;
    dist.width = dist.height = image_size;
    usage_guard<int>([&] {
      build_dataset(count, dist, seed, out);
      return 0;
    });
    return 0;
  }

  BoardSceneSpec spec = fixed;
  spec.width = spec.height = image_size;
  if (custom) {
    const auto parts = split(occlude, ',');
    if (parts.size() != 4) throw UsageError("--occlude expects X,Y,W,H");
    spec.occlusion = PixelRect{to_int(parts[0], "occlude x"), to_int(parts[1], "occlude y"),
                               to_int(parts[2], "occlude w"), to_int(parts[3], "occlude h")};
  }
  for (int i = 0; i < count; ++i) {
    spec.seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    const SceneRender scene = usage_guard<SceneRender>([&] { return render_board(spec); });
    const std::string stem = image_stem(i);
    save_sample(out, stem, scene);
    ManifestRow r;
    r.filename = stem + ".pgm";
    r.rows = spec.rows;
    r.cols = spec.cols;
    r.square_px = spec.square_px;
    r.rotation_deg = spec.rotation_deg;
    r.skew_deg = spec.skew_deg;
    r.noise_std = spec.noise_std;
    r.invert = spec.invert;
    r.distortion = spec.distortion;
    r.occluded = spec.occlusion.has_value();
    rows.push_back(r);
  }
  write_manifest(std::filesystem::path(out) / kManifestName, rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale X-corner detection laboratory"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "Render synthetic corner or board images with labels");
  std::string gen_kind = "board", gen_out, gen_occlude;
  int gen_count = 1, gen_size = 0;
  std::uint64_t gen_seed = 1;
  BoardSceneSpec board;
  gen->add_option("--kind", gen_kind, "corner | board")->check(CLI::IsMember({"corner", "board"}));
  gen->add_option("--count", gen_count, "Number of images")->required();
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Master seed");
  gen->add_option("--size", gen_size, "Image side in px (corner 41, board 64)");
  gen->add_option("--rows", board.rows, "Inner corner rows");
  gen->add_option("--cols", board.cols, "Inner corner columns");
  gen->add_option("--square", board.square_px, "Square size in px");
  gen->add_option("--noise", board.noise_std, "Noise std (8-bit units)");
  gen->add_option("--rot", board.rotation_deg, "Rotation in degrees");
  gen->add_option("--skew", board.skew_deg, "Skew in degrees");
  gen->add_flag("--invert", board.invert, "Swap dark and light squares");
  gen->add_option("--occlude", gen_occlude, "Occluder rectangle X,Y,W,H");
  gen->add_option("--k1", board.distortion.k1, "Radial distortion k1");
  gen->add_option("--k2", board.distortion.k2, "Radial distortion k2");
  gen->add_option("--p1", board.distortion.p1, "Tangential distortion p1");
  gen->add_option("--p2", board.distortion.p2, "Tangential distortion p2");

  // train
  auto* tr = app.add_subcommand("train", "Train a detector on a generated dataset");
  std::string tr_config = "A", tr_data, tr_out;
  TrainConfig tcfg;
  tr->add_option("--config", tr_config, "Network configuration A..H");
  tr->add_option("--data", tr_data, "Dataset directory")->required();
  tr->add_option("--epochs", tcfg.epochs, "Epochs");
  tr->add_option("--batch", tcfg.batch_size, "Batch size");
  tr->add_option("--lr", tcfg.lr0, "Initial learning rate");
  tr->add_option("--decay", tcfg.decay_rate, "Exponential decay per epoch");
  tr->add_option("--lambda", tcfg.lambda_reg, "L2 weight");
  tr->add_option("--momentum", tcfg.momentum, "Momentum");
  tr->add_option("--clip-norm", tcfg.max_grad_norm, "Gradient L2 cap (0 disables)");
  tr->add_option("--seed", tcfg.seed, "Seed for init and shuffling");
  tr->add_option("--out", tr_out, "Model file")->required();

  // detect / recover
  auto* det = app.add_subcommand("detect", "Detect corners in an image");
  DetectFlags det_flags;
  det_flags.add_to(det);
  auto* rec = app.add_subcommand("recover", "Recover checkerboard grids from detections");
  DetectFlags rec_flags;
  rec_flags.add_to(rec);

  // sweep
  auto* sw = app.add_subcommand("sweep", "Rotation/skew x noise robustness sweep");
  std::string sw_axis = "rotation", sw_range, sw_noise = "0:100:1", sw_model, sw_out;
  SweepOptions sopt;
  bool sw_plot = false;
  sw->add_option("--axis", sw_axis, "rotation | skew")->check(CLI::IsMember({"rotation", "skew"}));
  sw->add_option("--range", sw_range, "Axis range start:stop:step (default full axis)");
  sw->add_option("--noise", sw_noise, "Noise range start:stop:step");
  sw->add_option("--trials", sopt.trials, "Trials per cell");
  sw->add_option("--model", sw_model, "Model file")->required();
  sw->add_option("--seed", sopt.seed, "Master seed");
  sw->add_option("--penalty", sopt.miss_penalty, "Error recorded for missed trials");
  sw->add_option("--threads", sopt.threads, "Worker threads");
  sw->add_option("--out", sw_out, "Output CSV")->required();
  sw->add_flag("--gnuplot-script", sw_plot, "Also write a gnuplot script");

  // bench-refine
  auto* br = app.add_subcommand("bench-refine", "Subpixel refiner benchmark");
  std::string br_factor = "noise", br_values, br_methods = "gauss,parabolic,com,surface,edge,mixed",
              br_model, br_out;
  BenchOptions bopt;
  bool br_plot = false;
  br->add_option("--factor", br_factor, "noise | blur | rotation | skew")
      ->check(CLI::IsMember({"noise", "blur", "rotation", "skew"}));
  br->add_option("--values", br_values, "Factor range start:stop:step");
  br->add_option("--trials", bopt.trials, "Trials per value");
  br->add_option("--methods", br_methods, "Comma-separated refiners");
  br->add_option("--seed", bopt.seed, "Master seed");
  br->add_option("--model", br_model, "Model file (default: model-free saddle response)");
  br->add_option("--threads", bopt.threads, "Worker threads");
  br->add_option("--out", br_out, "Output CSV")->required();
  br->add_flag("--gnuplot-script", br_plot, "Also write a gnuplot script");

  // eval
  auto* ev = app.add_subcommand("eval", "Precision/recall of detections against truth");
  std::string ev_pred, ev_truth, ev_out;
  double ev_radius = kMatchRadius;
  ev->add_option("--pred", ev_pred, "Candidate CSV")->required();
  ev->add_option("--truth", ev_truth, "Truth CSV (x,y)")->required();
  ev->add_option("--radius", ev_radius, "Match radius in px");
  ev->add_option("--out", ev_out, "Report CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      const int size = gen_size > 0 ? gen_size : (gen_kind == "corner" ? 41 : 64);
      return cmd_gen(gen_kind, gen_count, gen_out, gen_seed, *gen, board, size, gen_occlude);
    }

    if (tr->parsed()) {
      const ConfigId id = usage_guard<ConfigId>([&] { return parse_config_id(tr_config); });
      usage_guard<int>([&] {
        tcfg.validate();
        return 0;
      });
      const auto data = load_dataset(tr_data);
      if (data.empty()) throw std::runtime_error("dataset is empty");
      const TrainResult result = train(data, id, tcfg, [](int epoch, double loss) {
        std::fprintf(stderr, "epoch %d loss %.6f\n", epoch, loss);
      });
      save_model(tr_out, result.model);
      return 0;
    }

    if (det->parsed()) {
      const DetectOptions options = det_flags.options();
      ValueGrid image;
      const DetectResult result = run_detect(det_flags, options, image);
      write_candidates_csv(det_flags.out, result.candidates);
      return 0;
    }

    if (rec->parsed()) {
      const DetectOptions options = rec_flags.options();
      ValueGrid image;
      const DetectResult result = run_detect(rec_flags, options, image);
      std::vector<Point2> points;
      std::vector<double> scores;
      for (const auto& c : result.candidates) {
        points.push_back(c.location());
        scores.push_back(c.score);
      }
      const auto grids = recover_boards(points, scores, image);
      if (grids.empty()) {
        std::cerr << "warning: no board recovered\n";
        write_grid_csv(rec_flags.out, CornerGrid(0, 0), points);
        return 0;
      }
      std::size_t best = 0;
      for (std::size_t i = 1; i < grids.size(); ++i) {
        if (grids[i].present_count() > grids[best].present_count()) best = i;
      }
      if (grids.size() > 1) {
        std::cerr << "note: " << grids.size() << " boards recovered; writing the largest\n";
      }
      write_grid_csv(rec_flags.out, grids[best], points);
      return 0;
    }

    if (sw->parsed()) {
      sopt.axis = parse_sweep_axis(sw_axis);
      sopt.axis_range = sw_range.empty() ? SweepOptions::default_range(sopt.axis)
                                         : usage_guard<Range>([&] { return Range::parse(sw_range); });
      sopt.noise_range = usage_guard<Range>([&] { return Range::parse(sw_noise); });
      if (sopt.trials < 1) throw UsageError("trials must be at least 1");
      const DetectorModel model = load_model(sw_model);
      const SweepResult result = sweep(model, sopt);
      write_sweep_csv(sw_out, result);
      if (sw_plot) write_gnuplot_script(sw_out, "sweep");
      return 0;
    }

    if (br->parsed()) {
      bopt.factor = parse_bench_factor(br_factor);
      if (!br_values.empty()) {
        bopt.values = usage_guard<Range>([&] { return Range::parse(br_values); }).values();
      }
      bopt.methods.clear();
      for (const auto& m : split(br_methods, ',')) {
        bopt.methods.push_back(usage_guard<RefineMethod>([&] { return parse_refine_method(m); }));
      }
      if (bopt.methods.empty()) throw UsageError("--methods is empty");
      if (bopt.trials < 1) throw UsageError("trials must be at least 1");
      std::optional<DetectorModel> model;
      if (!br_model.empty()) {
        model = load_model(br_model);
        bopt.model = &*model;
      }
      const BenchResult result = bench_refiners(bopt);
      write_bench_csv(br_out, result);
      if (br_plot) write_gnuplot_script(br_out, "bench");
      return 0;
    }

    if (ev->parsed()) {
      if (!(ev_radius > 0.0)) throw UsageError("radius must be positive");
      const auto pred = read_points_csv(ev_pred);
      const auto truth = read_points_csv(ev_truth);
      const MatchReport report = match_detections(pred, truth, ev_radius);
      write_report_csv(ev_out, report);
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
