// command-line surface: train, match, eval, ablate

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "anchorcorr/anchorcorr.hpp"

namespace fs = std::filesystem;
using namespace anchorcorr;

namespace {

std::uint64_t env_default_seed() {
  // the only environment variable the tool reads
  if (const char* s = std::getenv("ANCHORCORR_SEED")) return std::strtoull(s, nullptr, 10);
  return 0;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// every run echoes its fully-resolved configuration as a re-runnable command
class ConfigEcho {
 public:
  explicit ConfigEcho(std::string subcommand) : line_("# config: anchorcorr " + subcommand) {}
  ConfigEcho& flag(const std::string& name, const std::string& v) {
    line_ += " --" + name + " " + v;
    return *this;
  }
  ConfigEcho& flag(const std::string& name, double v) { return flag(name, fmt_double(v)); }
  ConfigEcho& flag(const std::string& name, long long v) { return flag(name, std::to_string(v)); }
  ConfigEcho& flag(const std::string& name, int v) { return flag(name, std::to_string(v)); }
  ConfigEcho& flag(const std::string& name, std::uint64_t v) {
    return flag(name, std::to_string(v));
  }
  ConfigEcho& toggle(const std::string& name, bool on) {
    if (on) line_ += " --" + name;
    return *this;
  }
  const std::string& str() const { return line_; }

 private:
  std::string line_;
};

// temp-then-rename so partial output never lands under the final name
template <typename WriteFn>
void atomic_write(const std::string& path, WriteFn&& write_fn) {
  const std::string tmp = path + ".tmp";
  write_fn(tmp);
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot move output into place: " + path);
}

std::string texture_name(TextureKind k) {
  return k == TextureKind::Mixed ? "mixed" : "repeated";
}

std::vector<double> parse_thresholds(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  if (out.empty()) throw CLI::ValidationError("--thresholds", "no thresholds given");
  for (std::size_t i = 1; i < out.size(); ++i)
    if (out[i] <= out[i - 1])
      throw CLI::ValidationError("--thresholds", "thresholds must be ascending");
  return out;
}

// ---- train -----------------------------------------------------------------

struct TrainOpts {
  std::string out_dir;
  long long iters = 5000;
  std::uint64_t seed = env_default_seed();
  double lr = 1e-4;
  int image_size = 96;
  int anchors = 32;
  int queries = 128;
  double warp = 0.1;
  double jitter = 1.0;
  std::string texture = "mixed";
  long long save_every = 1000;
  int layers = 4;
  int heads = 4;
  int coarse_dim = 64;
  int fine_dim = 32;
  int pe_dim = 32;
  double window_frac = 0.125;
  std::string variant = "full";
  double clean_fraction = 0.8;
  double noise_fraction = 0.3;
  double noise_sigma_px = 8.0;
  double scale_min = 0.5;
  double scale_max = 2.0;
  bool no_scale_augment = false;
};

void add_train_flags(CLI::App* cmd, TrainOpts& o) {
  cmd->add_option("--out", o.out_dir, "output directory (must exist)")->required();
  cmd->add_option("--iters", o.iters, "training iterations");
  cmd->add_option("--seed", o.seed, "rng seed (default from ANCHORCORR_SEED)");
  cmd->add_option("--lr", o.lr, "initial learning rate");
  cmd->add_option("--image-size", o.image_size, "synthetic crop size");
  cmd->add_option("--anchors", o.anchors, "anchors per pair");
  cmd->add_option("--queries", o.queries, "query points per pair");
  cmd->add_option("--warp", o.warp, "homography corner perturbation");
  cmd->add_option("--jitter", o.jitter, "photometric jitter strength in [0,1]");
  cmd->add_option("--texture", o.texture, "base texture kind: mixed|repeated");
  cmd->add_option("--save-every", o.save_every, "checkpoint interval (0 = final only)");
  cmd->add_option("--layers", o.layers, "message-passing depth N_l");
  cmd->add_option("--heads", o.heads, "attention heads");
  cmd->add_option("--coarse-dim", o.coarse_dim, "coarse feature width");
  cmd->add_option("--fine-dim", o.fine_dim, "fine feature width");
  cmd->add_option("--pe-dim", o.pe_dim, "position embedding width");
  cmd->add_option("--window-frac", o.window_frac, "fine window fraction");
  cmd->add_option("--variant", o.variant, "model variant: full|no_graph|low_res|no_intra|no_point");
  cmd->add_option("--clean-fraction", o.clean_fraction, "run fraction with clean anchors");
  cmd->add_option("--noise-fraction", o.noise_fraction, "perturbed anchor fraction afterwards");
  cmd->add_option("--noise-sigma-px", o.noise_sigma_px, "anchor noise sigma in pixels");
  cmd->add_option("--scale-min", o.scale_min, "adaptive position scale lower bound");
  cmd->add_option("--scale-max", o.scale_max, "adaptive position scale upper bound");
  cmd->add_flag("--no-scale-augment", o.no_scale_augment, "disable coordinate scale augmentation");
}

std::string echo_train(const TrainOpts& o) {
  ConfigEcho e("train");
  e.flag("out", o.out_dir)
      .flag("iters", o.iters)
      .flag("seed", o.seed)
      .flag("lr", o.lr)
      .flag("image-size", o.image_size)
      .flag("anchors", o.anchors)
      .flag("queries", o.queries)
      .flag("warp", o.warp)
      .flag("jitter", o.jitter)
      .flag("texture", o.texture)
      .flag("save-every", o.save_every)
      .flag("layers", o.layers)
      .flag("heads", o.heads)
      .flag("coarse-dim", o.coarse_dim)
      .flag("fine-dim", o.fine_dim)
      .flag("pe-dim", o.pe_dim)
      .flag("window-frac", o.window_frac)
      .flag("variant", o.variant)
      .flag("clean-fraction", o.clean_fraction)
      .flag("noise-fraction", o.noise_fraction)
      .flag("noise-sigma-px", o.noise_sigma_px)
      .flag("scale-min", o.scale_min)
      .flag("scale-max", o.scale_max)
      .toggle("no-scale-augment", o.no_scale_augment);
  return e.str();
}

ModelConfig model_config_from(const TrainOpts& o) {
  ModelConfig mc;
  mc.backbone.coarse_dim = o.coarse_dim;
  mc.backbone.fine_dim = o.fine_dim;
  mc.layers = o.layers;
  mc.heads = o.heads;
  mc.pe.dim = o.pe_dim;
  mc.pe.scale_min = o.scale_min;
  mc.pe.scale_max = o.scale_max;
  const AblationVariant variant = AblationVariant::parse(o.variant);
  if (!variant.needs_own_training() && variant.kind != AblationVariant::Kind::Full)
    throw CLI::ValidationError("--variant", "only structural variants can be trained");
  return apply_variant(mc, variant);
}

TrainConfig train_config_from(const TrainOpts& o) {
  TrainConfig tc;
  tc.learning_rate = o.lr;
  tc.total_iters = o.iters;
  tc.queries_per_pair = o.queries;
  tc.anchors_per_pair = o.anchors;
  tc.image_size = o.image_size;
  tc.warp_magnitude = o.warp;
  tc.photometric_jitter = o.jitter;
  tc.clean_fraction = o.clean_fraction;
  tc.noise_fraction = o.noise_fraction;
  tc.noise_sigma_px = o.noise_sigma_px;
  tc.window_frac = o.window_frac;
  tc.adaptive_scale_augment = !o.no_scale_augment;
  tc.texture = texture_kind_from_string(o.texture);
  tc.seed = o.seed;
  return tc;
}

int run_train(const TrainOpts& o) {
  if (!fs::is_directory(o.out_dir))
    throw std::runtime_error("output directory not found: " + o.out_dir);
  std::cout << echo_train(o) << "\n";

  ModelConfig mc = model_config_from(o);
  TrainConfig tc = train_config_from(o);
  ModelParams params = ModelParams::init(mc, tc.seed);
  TrainHistory history =
      train_model(params, tc, o.out_dir + "/train.log", o.out_dir, o.save_every);

  double final_loss = 0.0;
  for (auto it = history.steps.rbegin(); it != history.steps.rend(); ++it)
    if (!it->skipped) {
      final_loss = it->loss;
      break;
    }
  std::cout << "trained " << o.iters << " iterations, final loss " << fmt_double(final_loss)
            << "\ncheckpoint: " << o.out_dir << "/checkpoint_final.bin\n";
  return 0;
}

// ---- match -----------------------------------------------------------------

struct MatchOpts {
  std::string checkpoint, image_a, image_b, out;
  std::string anchors_file;
  bool anchors_from_gt = false;
  std::string homography;
  int gt_anchors = 500;
  int max_anchors = 500;
  int query_grid = 32;
  std::string queries_file;
  double cycle_threshold = 5.0;
  int top_k = 2000;
  double window_frac = 0.125;
  std::string visualize;
  std::uint64_t seed = env_default_seed();
};

void add_match_flags(CLI::App* cmd, MatchOpts& o) {
  cmd->add_option("--checkpoint", o.checkpoint, "trained model checkpoint")->required();
  cmd->add_option("--image-a", o.image_a, "query image (PNG or PPM)")->required();
  cmd->add_option("--image-b", o.image_b, "reference image (PNG or PPM)")->required();
  cmd->add_option("--out", o.out, "match file to write")->required();
  cmd->add_option("--anchors", o.anchors_file, "anchor pair file");
  cmd->add_flag("--anchors-from-gt", o.anchors_from_gt,
                "sample anchors from a ground-truth homography sidecar");
  cmd->add_option("--homography", o.homography, "homography sidecar (with --anchors-from-gt)");
  cmd->add_option("--gt-anchors", o.gt_anchors, "anchor count when sampling from ground truth");
  cmd->add_option("--max-anchors", o.max_anchors, "cap on input anchor count");
  cmd->add_option("--query-grid", o.query_grid, "query lattice size");
  cmd->add_option("--queries-file", o.queries_file, "query points file (u v per line)");
  cmd->add_option("--cycle-threshold", o.cycle_threshold, "cycle consistency filter in pixels");
  cmd->add_option("--top-k", o.top_k, "keep the top k matches by peak correlation");
  cmd->add_option("--window-frac", o.window_frac, "fine window fraction");
  cmd->add_option("--visualize", o.visualize, "write a side-by-side match image here");
  cmd->add_option("--seed", o.seed, "rng seed (default from ANCHORCORR_SEED)");
}

std::string echo_match(const MatchOpts& o) {
  ConfigEcho e("match");
  e.flag("checkpoint", o.checkpoint)
      .flag("image-a", o.image_a)
      .flag("image-b", o.image_b)
      .flag("out", o.out);
  if (!o.anchors_file.empty()) e.flag("anchors", o.anchors_file);
  e.toggle("anchors-from-gt", o.anchors_from_gt);
  if (!o.homography.empty()) e.flag("homography", o.homography);
  e.flag("gt-anchors", o.gt_anchors)
      .flag("max-anchors", o.max_anchors)
      .flag("query-grid", o.query_grid);
  if (!o.queries_file.empty()) e.flag("queries-file", o.queries_file);
  e.flag("cycle-threshold", o.cycle_threshold)
      .flag("top-k", o.top_k)
      .flag("window-frac", o.window_frac);
  if (!o.visualize.empty()) e.flag("visualize", o.visualize);
  e.flag("seed", o.seed);
  return e.str();
}

std::vector<Vec2> load_query_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read query file: " + path);
  std::vector<Vec2> queries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    Vec2 q;
    if (!(ls >> q.u >> q.v))
      throw std::runtime_error("query file " + path + ": malformed line " +
                               std::to_string(line_no));
    queries.push_back(clamp_unit(q));
  }
  if (queries.empty()) throw std::runtime_error("query file is empty: " + path);
  return queries;
}

int run_match(const MatchOpts& o) {
  if (o.anchors_file.empty() == !o.anchors_from_gt)
    throw std::runtime_error("provide exactly one of --anchors or --anchors-from-gt");
  if (o.anchors_from_gt && o.homography.empty())
    throw std::runtime_error("--anchors-from-gt needs --homography");
  std::cout << echo_match(o) << "\n";

  ModelParams params = load_checkpoint(o.checkpoint);
  Tensor image_a = read_image(o.image_a);
  Tensor image_b = read_image(o.image_b);

  AnchorSet anchors;
  if (o.anchors_from_gt) {
    const Homography hom = load_homography(o.homography);
    GroundTruthField gt = gt_from_homography(hom, image_a.dim(1), image_a.dim(2));
    Rng rng(o.seed);
    anchors = sample_gt_anchors(gt, std::min(o.gt_anchors, gt.valid_count()), {}, rng);
  } else {
    anchors = load_anchors(o.anchors_file);
  }
  if (anchors.count() > o.max_anchors) {
    anchors.points_a.resize(o.max_anchors);
    anchors.points_b.resize(o.max_anchors);
  }

  std::vector<Vec2> queries;
  if (!o.queries_file.empty()) {
    queries = load_query_file(o.queries_file);
  } else {
    for (int i = 0; i < o.query_grid; ++i)
      for (int j = 0; j < o.query_grid; ++j)
        queries.push_back({(j + 0.5) / o.query_grid, (i + 0.5) / o.query_grid});
  }

  auto [pyr_a, pyr_b] = forward(image_a, image_b, anchors, params);
  std::vector<MatchResult> all =
      match_points(queries, pyr_a, pyr_b, o.window_frac, 1e300, o.top_k < 0 ? -1 : 1 << 30);

  std::vector<double> cycles;
  for (const auto& m : all) cycles.push_back(m.cycle_px);
  std::nth_element(cycles.begin(), cycles.begin() + cycles.size() / 2, cycles.end());
  const double median_cycle = cycles[cycles.size() / 2];

  std::vector<MatchResult> kept;
  for (const auto& m : all)
    if (m.cycle_px <= o.cycle_threshold) kept.push_back(m);
  if (static_cast<int>(kept.size()) > o.top_k) kept.resize(o.top_k);

  atomic_write(o.out, [&](const std::string& tmp) {
    save_matches(tmp, kept, image_a.dim(1), image_a.dim(2), o.window_frac, o.cycle_threshold,
                 o.top_k);
  });

  if (!o.visualize.empty()) {
    Tensor canvas = render_matches(image_a, image_b, anchors, kept);
    atomic_write(o.visualize, [&](const std::string& tmp) {
      // renaming away the .tmp suffix keeps write_image's format dispatch on
      // the final extension
      if (ends_with(o.visualize, ".ppm"))
        detail::write_ppm(tmp, canvas);
      else
        detail::write_png(tmp, canvas);
    });
  }

  std::cout << "anchors " << anchors.count() << " queries " << queries.size() << " kept "
            << kept.size() << " median_cycle_px " << fmt_double(median_cycle)
            << "\nmatches: " << o.out << "\n";
  return 0;
}

// ---- eval ------------------------------------------------------------------

struct EvalOpts {
  std::string matches_file, homography;
  int width = 0, height = 0;
  std::string checkpoint;
  int pairs = 100;
  double warp = 0.1;
  int image_size = 96;
  std::string texture = "mixed";
  std::string split = "heldout";
  int anchors = 32;
  int query_grid = 64;
  double anchor_noise_fraction = 0.0;
  double anchor_noise_sigma_px = 0.0;
  std::string thresholds = "1,2,3,5,10";
  std::string metric = "mma";
  double window_frac = 0.125;
  std::string out, plot;
  std::uint64_t seed = env_default_seed();
};

void add_eval_flags(CLI::App* cmd, EvalOpts& o) {
  cmd->add_option("--matches", o.matches_file, "match file to score (file mode)");
  cmd->add_option("--homography", o.homography, "ground-truth homography sidecar (file mode)");
  cmd->add_option("--width", o.width, "image width override (file mode)");
  cmd->add_option("--height", o.height, "image height override (file mode)");
  cmd->add_option("--checkpoint", o.checkpoint, "trained checkpoint (synthetic mode)");
  cmd->add_option("--pairs", o.pairs, "synthetic pair count");
  cmd->add_option("--warp", o.warp, "synthetic warp magnitude");
  cmd->add_option("--image-size", o.image_size, "synthetic image size");
  cmd->add_option("--texture", o.texture, "texture kind: mixed|repeated");
  cmd->add_option("--split", o.split, "synthetic split: train|heldout");
  cmd->add_option("--anchors", o.anchors, "anchors per pair");
  cmd->add_option("--query-grid", o.query_grid, "query lattice size");
  cmd->add_option("--anchor-noise-fraction", o.anchor_noise_fraction,
                  "fraction of anchors to perturb at eval time");
  cmd->add_option("--anchor-noise-sigma-px", o.anchor_noise_sigma_px,
                  "anchor perturbation sigma in pixels");
  cmd->add_option("--thresholds", o.thresholds, "comma-separated pixel thresholds");
  cmd->add_option("--metric", o.metric, "pck (pooled) or mma (mean per pair)");
  cmd->add_option("--window-frac", o.window_frac, "fine window fraction");
  cmd->add_option("--out", o.out, "curve table output file")->required();
  cmd->add_option("--plot", o.plot, "optional curve plot image");
  cmd->add_option("--seed", o.seed, "rng seed (default from ANCHORCORR_SEED)");
}

std::string echo_eval(const EvalOpts& o) {
  ConfigEcho e("eval");
  if (!o.matches_file.empty()) {
    e.flag("matches", o.matches_file).flag("homography", o.homography);
    if (o.width > 0) e.flag("width", o.width);
    if (o.height > 0) e.flag("height", o.height);
  } else {
    e.flag("checkpoint", o.checkpoint)
        .flag("pairs", o.pairs)
        .flag("warp", o.warp)
        .flag("image-size", o.image_size)
        .flag("texture", o.texture)
        .flag("split", o.split)
        .flag("anchors", o.anchors)
        .flag("query-grid", o.query_grid)
        .flag("anchor-noise-fraction", o.anchor_noise_fraction)
        .flag("anchor-noise-sigma-px", o.anchor_noise_sigma_px);
  }
  e.flag("thresholds", o.thresholds).flag("metric", o.metric).flag("window-frac", o.window_frac);
  e.flag("out", o.out);
  if (!o.plot.empty()) e.flag("plot", o.plot);
  e.flag("seed", o.seed);
  return e.str();
}

// the two synthetic splits draw from disjoint derived streams
std::uint64_t split_seed(std::uint64_t seed, const std::string& split) {
  Rng base(seed);
  const std::uint64_t train_seed = base.next_u64();
  const std::uint64_t heldout_seed = base.next_u64();
  if (split == "train") return train_seed;
  if (split == "heldout") return heldout_seed;
  throw std::runtime_error("unknown split (use train|heldout): " + split);
}

int run_eval(const EvalOpts& o) {
  std::cout << echo_eval(o) << "\n";
  const std::vector<double> thresholds = parse_thresholds(o.thresholds);
  MetricCurve curve;
  std::string header;

  if (!o.matches_file.empty()) {
    if (o.homography.empty())
      throw std::runtime_error("file mode needs --homography next to --matches");
    MatchFileData data = load_matches(o.matches_file);
    const int h = o.height > 0 ? o.height : data.image_h;
    const int w = o.width > 0 ? o.width : data.image_w;
    if (h < 2 || w < 2)
      throw std::runtime_error("image dims unavailable; pass --width and --height");
    GroundTruthField gt = gt_from_homography(load_homography(o.homography), h, w);
    // queries straddling the valid boundary are dropped rather than scored
    std::vector<MatchResult> scorable;
    for (const auto& m : data.matches) {
      const int r = static_cast<int>(std::lround(m.query.v * (h - 1)));
      const int c = static_cast<int>(std::lround(m.query.u * (w - 1)));
      if (r >= 0 && r < h && c >= 0 && c < w && gt.valid_at(r, c)) scorable.push_back(m);
    }
    curve = pck(scorable, gt, thresholds);
    header = "pck of " + o.matches_file;
  } else {
    if (o.checkpoint.empty())
      throw std::runtime_error("provide --matches or --checkpoint");
    ModelParams params = load_checkpoint(o.checkpoint);
    EvalSetSpec spec;
    spec.pairs = o.pairs;
    spec.seed = split_seed(o.seed, o.split);
    spec.warp_magnitude = o.warp;
    spec.image_size = o.image_size;
    spec.texture = texture_kind_from_string(o.texture);
    EvalSettings settings;
    settings.thresholds = thresholds;
    settings.window_frac = o.window_frac;
    settings.anchors = o.anchors;
    settings.query_grid = o.query_grid;
    settings.anchor_noise_fraction = o.anchor_noise_fraction;
    settings.anchor_noise_sigma_px = o.anchor_noise_sigma_px;

    if (o.metric == "mma") {
      curve = evaluate_model(params, spec, settings);
    } else if (o.metric == "pck") {
      // pooled: weight pairs by their match counts
      Rng rng(spec.seed);
      std::vector<double> correct(thresholds.size(), 0.0);
      long long total = 0;
      for (int p = 0; p < spec.pairs; ++p) {
        Rng pair_rng = rng.split();
        Tensor base =
            generate_base_image(spec.image_size, spec.image_size, spec.texture, pair_rng);
        TrainSample sample =
            synth_pair(base, spec.warp_magnitude, spec.photometric_jitter, pair_rng);
        MetricCurve c = evaluate_pair(params, sample, settings, pair_rng).curve;
        for (std::size_t t = 0; t < thresholds.size(); ++t)
          correct[t] += c.values[t] * static_cast<double>(c.count);
        total += c.count;
      }
      curve.thresholds = thresholds;
      curve.count = total;
      for (double c : correct) curve.values.push_back(c / static_cast<double>(total));
      curve.validate();
    } else {
      throw std::runtime_error("unknown metric (use pck|mma): " + o.metric);
    }
    header = o.metric + " split " + o.split;
  }

  atomic_write(o.out, [&](const std::string& tmp) { save_curve(tmp, curve, header); });
  if (!o.plot.empty()) {
    Tensor canvas = render_curve(curve);
    atomic_write(o.plot, [&](const std::string& tmp) {
      if (ends_with(o.plot, ".ppm"))
        detail::write_ppm(tmp, canvas);
      else
        detail::write_png(tmp, canvas);
    });
  }
  std::cout << "# " << header << "\n# threshold_px fraction count\n";
  write_curve(std::cout, curve);
  return 0;
}

// ---- ablate ----------------------------------------------------------------

struct AblateOpts {
  std::string variants = "full,no_graph,no_intra,fewer_anchors:16,fewer_anchors:4";
  std::string out_dir;
  std::uint64_t seed = env_default_seed();
  long long iters = 1200;
  int image_size = 64;
  int anchors = 32;
  int queries = 96;
  double warp = 0.08;
  std::string texture = "repeated";
  int pairs = 12;
  double eval_warp = 0.08;
  int query_grid = 32;
  std::string thresholds = "1,2,3,5,10";
  double lr = 1e-4;
};

void add_ablate_flags(CLI::App* cmd, AblateOpts& o) {
  cmd->add_option("--variants", o.variants, "comma-separated variant list");
  cmd->add_option("--out", o.out_dir, "output directory (must exist)")->required();
  cmd->add_option("--seed", o.seed, "shared seed for every variant");
  cmd->add_option("--iters", o.iters, "training iterations per variant");
  cmd->add_option("--image-size", o.image_size, "synthetic image size");
  cmd->add_option("--anchors", o.anchors, "anchors per pair (training and eval)");
  cmd->add_option("--queries", o.queries, "training queries per pair");
  cmd->add_option("--warp", o.warp, "training warp magnitude");
  cmd->add_option("--texture", o.texture, "texture kind: mixed|repeated");
  cmd->add_option("--pairs", o.pairs, "evaluation pair count");
  cmd->add_option("--eval-warp", o.eval_warp, "evaluation warp magnitude");
  cmd->add_option("--query-grid", o.query_grid, "evaluation query lattice");
  cmd->add_option("--thresholds", o.thresholds, "comma-separated pixel thresholds");
  cmd->add_option("--lr", o.lr, "learning rate");
}

std::string echo_ablate(const AblateOpts& o) {
  ConfigEcho e("ablate");
  e.flag("variants", o.variants)
      .flag("out", o.out_dir)
      .flag("seed", o.seed)
      .flag("iters", o.iters)
      .flag("image-size", o.image_size)
      .flag("anchors", o.anchors)
      .flag("queries", o.queries)
      .flag("warp", o.warp)
      .flag("texture", o.texture)
      .flag("pairs", o.pairs)
      .flag("eval-warp", o.eval_warp)
      .flag("query-grid", o.query_grid)
      .flag("thresholds", o.thresholds)
      .flag("lr", o.lr);
  return e.str();
}

int run_ablate(const AblateOpts& o, const std::vector<AblationVariant>& variants) {
  if (!fs::is_directory(o.out_dir))
    throw std::runtime_error("output directory not found: " + o.out_dir);
  std::cout << echo_ablate(o) << "\n";

  const std::vector<double> thresholds = parse_thresholds(o.thresholds);

  ModelConfig base_mc;
  base_mc.backbone.coarse_dim = 64;
  base_mc.backbone.fine_dim = 32;
  TrainConfig base_tc;
  base_tc.learning_rate = o.lr;
  base_tc.total_iters = o.iters;
  base_tc.image_size = o.image_size;
  base_tc.anchors_per_pair = o.anchors;
  base_tc.queries_per_pair = o.queries;
  base_tc.warp_magnitude = o.warp;
  base_tc.texture = texture_kind_from_string(o.texture);
  base_tc.seed = o.seed;

  EvalSetSpec spec;
  spec.pairs = o.pairs;
  spec.seed = split_seed(o.seed, "heldout");
  spec.warp_magnitude = o.eval_warp;
  spec.image_size = o.image_size;
  spec.texture = base_tc.texture;

  EvalSettings settings;
  settings.thresholds = thresholds;
  settings.anchors = o.anchors;
  settings.query_grid = o.query_grid;

  auto train_variant = [&](const AblationVariant& v) {
    ModelParams params = ModelParams::init(apply_variant(base_mc, v), o.seed);
    std::cout << "training " << v.label() << " (" << o.iters << " iters)\n" << std::flush;
    train_model(params, base_tc, "", "", 0);
    std::string name = v.label();
    std::replace(name.begin(), name.end(), ':', '_');
    save_checkpoint(params, o.out_dir + "/" + name + ".bin");
    return params;
  };

  // the full model backs every evaluation-only variant
  bool need_full = false;
  for (const auto& v : variants) need_full = need_full || !v.needs_own_training();
  std::optional<ModelParams> full_params;
  if (need_full) full_params = train_variant(AblationVariant{});

  std::vector<std::string> rows;
  for (const auto& v : variants) {
    MetricCurve curve;
    if (v.needs_own_training()) {
      ModelParams params = train_variant(v);
      curve = run_ablation(v, params, spec, settings);
    } else {
      curve = run_ablation(v, *full_params, spec, settings);
    }
    const int row_anchors = v.kind == AblationVariant::Kind::FewerAnchors ? v.anchor_count
                                                                          : settings.anchors;
    std::ostringstream row;
    row << v.label() << " anchors=" << row_anchors;
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      char cell[48];
      std::snprintf(cell, sizeof(cell), " pck@%g=%.4f", thresholds[t], curve.values[t]);
      row << cell;
    }
    rows.push_back(row.str());
    std::cout << rows.back() << "\n" << std::flush;
  }

  atomic_write(o.out_dir + "/ablation.txt", [&](const std::string& tmp) {
    std::ofstream out(tmp);
    out << "# variant anchors pck-per-threshold\n";
    for (const auto& r : rows) out << r << "\n";
  });
  std::cout << "table: " << o.out_dir << "/ablation.txt\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"anchor-conditioned dense correspondence: train, match, evaluate, ablate"};
  app.require_subcommand(1);

  TrainOpts train_opts;
  MatchOpts match_opts;
  EvalOpts eval_opts;
  AblateOpts ablate_opts;

  CLI::App* cmd_train = app.add_subcommand("train", "train a model on synthetic warps");
  add_train_flags(cmd_train, train_opts);
  CLI::App* cmd_match = app.add_subcommand("match", "match two images with a trained model");
  add_match_flags(cmd_match, match_opts);
  CLI::App* cmd_eval = app.add_subcommand("eval", "score matches or a checkpoint");
  add_eval_flags(cmd_eval, eval_opts);
  CLI::App* cmd_ablate = app.add_subcommand("ablate", "train and compare model variants");
  add_ablate_flags(cmd_ablate, ablate_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (cmd_train->parsed()) {
      // variant names are usage, not runtime state
      try {
        AblationVariant::parse(train_opts.variant);
      } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
      }
      return run_train(train_opts);
    }
    if (cmd_match->parsed()) return run_match(match_opts);
    if (cmd_eval->parsed()) return run_eval(eval_opts);
    if (cmd_ablate->parsed()) {
      std::vector<AblationVariant> variants;
      try {
        std::stringstream ss(ablate_opts.variants);
        std::string item;
        while (std::getline(ss, item, ',')) variants.push_back(AblationVariant::parse(item));
        if (variants.empty()) throw std::invalid_argument("no variants given");
      } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
      }
      return run_ablate(ablate_opts, variants);
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
