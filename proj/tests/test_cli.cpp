#include <catch2/catch_amalgamated.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "anchorcorr/anchorcorr.hpp"

namespace fs = std::filesystem;
using namespace anchorcorr;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

CliResult run_cli(const std::string& args, const std::string& workdir) {
  const std::string out_file = workdir + "/cli_output.txt";
  const std::string cmd =
      "cd " + workdir + " && " + ANCHORCORR_CLI_PATH + " " + args + " > cli_output.txt 2>&1";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out_file);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  return r;
}

std::string fresh_dir(const std::string& name) {
  const std::string path = (fs::temp_directory_path() / ("anchorcorr_test_" + name)).string();
  fs::remove_all(path);
  fs::create_directories(path);
  return path;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::string kTinyModel =
    "--coarse-dim 8 --fine-dim 4 --pe-dim 4 --layers 1 --heads 2 "
    "--image-size 64 --anchors 6 --queries 8";

void write_test_pair(const std::string& dir) {
  Rng rng(404);
  Tensor img = generate_base_image(64, 64, TextureKind::Mixed, rng);
  write_image(dir + "/a.ppm", img);
  write_image(dir + "/b.ppm", img);
  save_homography(dir + "/hom.txt", Homography{});
}

}  // namespace

TEST_CASE("usage errors exit with code 2", "[cli]") {
  const std::string dir = fresh_dir("usage");
  CHECK(run_cli("", dir).exit_code == 2);
  CHECK(run_cli("frobnicate", dir).exit_code == 2);
  CHECK(run_cli("train", dir).exit_code == 2);  // missing required --out
  CHECK(run_cli("ablate --out . --variants full,bogus", dir).exit_code == 2);
  CHECK(run_cli("train --out . --variant fewer_anchors:4", dir).exit_code == 2);
  CHECK(run_cli("--help", dir).exit_code == 0);
}

TEST_CASE("runtime failures exit with code 1 and name the path", "[cli]") {
  const std::string dir = fresh_dir("runtime");
  CliResult r = run_cli("train --out missing_subdir --iters 1 " + kTinyModel, dir);
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("missing_subdir") != std::string::npos);

  write_test_pair(dir);
  r = run_cli("match --checkpoint absent.bin --image-a a.ppm --image-b b.ppm "
              "--anchors-from-gt --homography hom.txt --out m.txt",
              dir);
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("absent.bin") != std::string::npos);
}

TEST_CASE("train echoes the paper defaults and reproduces bit-exactly", "[cli][slow]") {
  const std::string dir = fresh_dir("train_repro");
  fs::create_directories(dir + "/run1");
  fs::create_directories(dir + "/run2");

  const std::string flags = "train --iters 4 --seed 7 --save-every 0 " + kTinyModel;
  CliResult r1 = run_cli(flags + " --out run1", dir);
  REQUIRE(r1.exit_code == 0);
  CHECK(r1.output.find("--lr 0.0001") != std::string::npos);
  CHECK(r1.output.find("# config: anchorcorr train") != std::string::npos);

  CliResult r2 = run_cli(flags + " --out run2", dir);
  REQUIRE(r2.exit_code == 0);

  const std::string c1 = slurp(dir + "/run1/checkpoint_final.bin");
  const std::string c2 = slurp(dir + "/run2/checkpoint_final.bin");
  REQUIRE(!c1.empty());
  CHECK(c1 == c2);
  CHECK(slurp(dir + "/run1/train.log") == slurp(dir + "/run2/train.log"));

  // log format: iter loss lr coarse_px_err fine_px_err
  std::ifstream log(dir + "/run1/train.log");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    std::istringstream ls(line);
    long long iter;
    double loss, lr, cpx, fpx;
    REQUIRE((ls >> iter >> loss >> lr >> cpx >> fpx));
    ++lines;
  }
  CHECK(lines == 4);
}

TEST_CASE("match writes the documented file format and visualization", "[cli][slow]") {
  const std::string dir = fresh_dir("match_fmt");
  fs::create_directories(dir + "/run");
  write_test_pair(dir);

  REQUIRE(run_cli("train --out run --iters 3 --seed 5 --save-every 0 " + kTinyModel, dir)
              .exit_code == 0);

  CliResult r = run_cli(
      "match --checkpoint run/checkpoint_final.bin --image-a a.ppm --image-b b.ppm "
      "--anchors-from-gt --homography hom.txt --gt-anchors 6 --query-grid 4 "
      "--cycle-threshold 1e18 --out matches.txt --visualize viz.png --seed 3",
      dir);
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("median_cycle_px") != std::string::npos);

  MatchFileData data = load_matches(dir + "/matches.txt");
  CHECK(data.image_h == 64);
  CHECK(data.image_w == 64);
  CHECK(data.matches.size() == 16);  // nothing filtered at the huge threshold

  // the visualization is a valid PNG
  Tensor viz = read_image(dir + "/viz.png");
  CHECK(viz.dim(1) == 64);
  CHECK(viz.dim(2) == 2 * 64 + 8);

  // default cycle threshold echoes the published 5 px setting
  CliResult rd = run_cli(
      "match --checkpoint run/checkpoint_final.bin --image-a a.ppm --image-b b.ppm "
      "--anchors-from-gt --homography hom.txt --gt-anchors 6 --query-grid 2 --out m2.txt",
      dir);
  REQUIRE(rd.exit_code == 0);
  CHECK(rd.output.find("--cycle-threshold 5 ") != std::string::npos);
  CHECK(rd.output.find("--top-k 2000") != std::string::npos);
}

TEST_CASE("anchor files above the cap are truncated to 500", "[cli][slow]") {
  const std::string dir = fresh_dir("anchor_cap");
  fs::create_directories(dir + "/run");
  write_test_pair(dir);
  REQUIRE(run_cli("train --out run --iters 3 --seed 5 --save-every 0 " + kTinyModel, dir)
              .exit_code == 0);

  AnchorSet big;
  Rng rng(11);
  for (int i = 0; i < 600; ++i) {
    const Vec2 p{rng.next_double(), rng.next_double()};
    big.points_a.push_back(p);
    big.points_b.push_back(p);
  }
  save_anchors(dir + "/anchors.txt", big);

  CliResult r = run_cli(
      "match --checkpoint run/checkpoint_final.bin --image-a a.ppm --image-b b.ppm "
      "--anchors anchors.txt --query-grid 2 --out m.txt",
      dir);
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("anchors 500 ") != std::string::npos);
}

TEST_CASE("malformed anchor files fail with the line number", "[cli][slow]") {
  const std::string dir = fresh_dir("anchor_bad");
  fs::create_directories(dir + "/run");
  write_test_pair(dir);
  REQUIRE(run_cli("train --out run --iters 3 --seed 5 --save-every 0 " + kTinyModel, dir)
              .exit_code == 0);
  {
    std::ofstream bad(dir + "/anchors.txt");
    bad << "0.1 0.1 0.1 0.1\nnot numbers here\n";
  }
  CliResult r = run_cli(
      "match --checkpoint run/checkpoint_final.bin --image-a a.ppm --image-b b.ppm "
      "--anchors anchors.txt --query-grid 2 --out m.txt",
      dir);
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("line 2") != std::string::npos);
}

TEST_CASE("eval scores exact matches at one across thresholds", "[cli]") {
  const std::string dir = fresh_dir("eval_exact");
  save_homography(dir + "/hom.txt", Homography{});  // identity

  // hand-written exact matches under the identity homography
  {
    std::ofstream out(dir + "/matches.txt");
    out << "# dims 64x64 window_frac 0.125 cycle_threshold_px 5 top_k 2000\n";
    Rng rng(3);
    for (int i = 0; i < 10; ++i) {
      const double u = rng.next_double(), v = rng.next_double();
      out << u << " " << v << " " << u << " " << v << " 0 1\n";
    }
  }
  CliResult r = run_cli("eval --matches matches.txt --homography hom.txt --out curve.txt", dir);
  REQUIRE(r.exit_code == 0);

  std::ifstream curve(dir + "/curve.txt");
  std::string line;
  int data_lines = 0;
  while (std::getline(curve, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    double threshold, fraction;
    long long count;
    REQUIRE((ls >> threshold >> fraction >> count));
    REQUIRE(fraction == 1.0);
    REQUIRE(count == 10);
    ++data_lines;
  }
  CHECK(data_lines == 5);
}

TEST_CASE("eval reruns are bit-identical and splits are distinct", "[cli][slow]") {
  const std::string dir = fresh_dir("eval_repro");
  fs::create_directories(dir + "/run");
  REQUIRE(run_cli("train --out run --iters 3 --seed 5 --save-every 0 " + kTinyModel, dir)
              .exit_code == 0);

  const std::string base =
      "eval --checkpoint run/checkpoint_final.bin --pairs 2 --image-size 64 --anchors 6 "
      "--query-grid 6 --seed 9 --warp 0.05 ";
  REQUIRE(run_cli(base + "--split heldout --out heldout.txt", dir).exit_code == 0);
  REQUIRE(run_cli(base + "--split heldout --out heldout2.txt", dir).exit_code == 0);
  REQUIRE(run_cli(base + "--split train --out train.txt", dir).exit_code == 0);

  const std::string h1 = slurp(dir + "/heldout.txt");
  CHECK(h1 == slurp(dir + "/heldout2.txt"));
  CHECK(h1 != slurp(dir + "/train.txt"));
  CHECK(slurp(dir + "/train.txt").find("split train") != std::string::npos);
}

TEST_CASE("ablate emits one table row per variant", "[cli][slow]") {
  const std::string dir = fresh_dir("ablate_rows");
  fs::create_directories(dir + "/out");
  CliResult r = run_cli(
      "ablate --out out --variants full,no_graph,fewer_anchors:3 --iters 2 --image-size 64 "
      "--anchors 6 --queries 6 --pairs 1 --query-grid 5 --seed 4",
      dir);
  REQUIRE(r.exit_code == 0);

  const std::string table = slurp(dir + "/out/ablation.txt");
  CHECK(table.find("full anchors=6") != std::string::npos);
  CHECK(table.find("no_graph anchors=6") != std::string::npos);
  CHECK(table.find("fewer_anchors:3 anchors=3") != std::string::npos);
  CHECK(table.find("pck@5=") != std::string::npos);
}
