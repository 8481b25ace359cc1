#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "splat/checkpoint.hpp"
#include "splat/image.hpp"

using namespace splat;
namespace fs = std::filesystem;

namespace {

// ctest runs from the build directory, next to the binary
const char* kBinary = "./splatcls";

struct RunResult {
  int exit_code;
  std::string output;  // stdout + stderr
};

fs::path scratch_dir() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "splat_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

RunResult run_cli(const std::string& args) {
  static int counter = 0;
  const fs::path log = scratch_dir() / ("out" + std::to_string(counter++) + ".log");
  const std::string cmd =
      std::string(kBinary) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult result;
  result.exit_code = status < 0 ? status : (status >> 8) & 0xff;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  result.output = ss.str();
  return result;
}

std::string file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// small enough that the whole file runs in seconds
const char* kTinyConfig = R"(
preset = toy
model.patch_size = 8
model.image_size = 16
model.encoder_depth = 1
model.encoder_width = 16
model.encoder_heads = 2
model.classifier_depth = 1
model.classifier_width = 16
model.classifier_heads = 2
model.k = 4
model.num_classes = 5
train.batch_size = 4
train.epochs_warmup_encoder = 1
train.epochs_perc_on = 1
train.epochs_classifier_pre = 1
train.epochs_classifier_joint = 2
train.epochs_guidance = 0
train.warmup_epochs = 1
train.seed = 7
dataset.per_class = 4
dataset.seed = 11
dataset.image_size = 16
val_fraction = 0.25
)";

std::string write_tiny_config(const std::string& name) {
  const fs::path path = scratch_dir() / name;
  std::ofstream(path) << kTinyConfig;
  return path.string();
}

// one trained tiny run shared by the eval/render cases
const std::string& trained_run_dir() {
  static std::string dir = [] {
    const std::string cfg = write_tiny_config("shared.cfg");
    const std::string out = (scratch_dir() / "shared_run").string();
    RunResult r = run_cli("train " + cfg + " --out " + out);
    REQUIRE(r.exit_code == 0);
    return out;
  }();
  return dir;
}

const std::string& sample_image() {
  static std::string path = [] {
    const std::string dir = (scratch_dir() / "imgs").string();
    RunResult r = run_cli("dataset-gen --out " + dir +
                          " --per-class 1 --size 16 --seed 5");
    REQUIRE(r.exit_code == 0);
    return dir + "/img_00000.png";
  }();
  return path;
}

}  // namespace

TEST_CASE("dataset-gen writes a deterministic labeled png set") {
  const std::string d1 = (scratch_dir() / "gen1").string();
  const std::string d2 = (scratch_dir() / "gen2").string();
  RunResult r1 = run_cli("dataset-gen --out " + d1 + " --per-class 2 --size 16 --seed 9");
  RunResult r2 = run_cli("dataset-gen --out " + d2 + " --per-class 2 --size 16 --seed 9");
  CHECK(r1.exit_code == 0);
  CHECK(r2.exit_code == 0);

  int pngs = 0;
  for (const auto& e : fs::directory_iterator(d1))
    if (e.path().extension() == ".png") ++pngs;
  CHECK(pngs == 10);
  CHECK(fs::exists(fs::path(d1) / "labels.csv"));
  CHECK(file_bytes(fs::path(d1) / "img_00003.png") ==
        file_bytes(fs::path(d2) / "img_00003.png"));
  CHECK(file_bytes(fs::path(d1) / "labels.csv") ==
        file_bytes(fs::path(d2) / "labels.csv"));
}

TEST_CASE("fit writes a gaussian dump and a side-by-side png") {
  const std::string out = (scratch_dir() / "fit").string();
  RunResult r = run_cli("fit " + sample_image() +
                        " --k 8 --steps 60 --out " + out + " --seed 3");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("final mse") != std::string::npos);

  Tensor raw = load_gaussians(out + ".gauss");
  CHECK(raw.shape() == Shape{8, 9});
  Tensor side = read_png(out + "_fit.png");
  CHECK(side.shape() == Shape{16, 32, 3});  // original | render

  CHECK(run_cli("fit " + sample_image() + " --k 0 --steps 5 --out " + out)
            .exit_code == 1);
  CHECK(run_cli("fit " + (scratch_dir() / "absent.png").string() +
                " --k 4 --steps 5 --out " + out)
            .exit_code == 2);
}

TEST_CASE("train writes metrics and a loadable checkpoint") {
  const std::string& out = trained_run_dir();
  REQUIRE(fs::exists(fs::path(out) / "metrics.csv"));
  REQUIRE(fs::exists(fs::path(out) / "model.ckpt"));

  std::ifstream metrics(fs::path(out) / "metrics.csv");
  std::string line;
  std::getline(metrics, line);
  CHECK(line ==
        "epoch,phase,l_pix,l_perc,l_cls,train_acc,val_acc,mean_det_sigma,lr");
  int rows = 0;
  while (std::getline(metrics, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 5);  // one per epoch: 1 warmup + 1 perc + 1 pre + 2 joint

  Checkpoint ckpt = load_checkpoint(out + "/model.ckpt");
  CHECK(ckpt.epoch == 5);
  CHECK(ckpt.config_text.find("model.k=4") != std::string::npos);
}

TEST_CASE("a paused run resumed from its checkpoint matches the straight run") {
  const std::string cfg = write_tiny_config("resume.cfg");
  const std::string full = (scratch_dir() / "run_full").string();
  const std::string part = (scratch_dir() / "run_part").string();

  REQUIRE(run_cli("train " + cfg + " --out " + full).exit_code == 0);
  REQUIRE(run_cli("train " + cfg + " --out " + part + " --stop-after 3").exit_code == 0);
  Checkpoint mid = load_checkpoint(part + "/model.ckpt");
  CHECK(mid.epoch == 3);
  REQUIRE(run_cli("train " + cfg + " --out " + part + " --resume " + part +
                  "/model.ckpt")
              .exit_code == 0);

  // the paused+resumed run reproduces the uninterrupted artifacts exactly
  CHECK(file_bytes(full + "/metrics.csv") == file_bytes(part + "/metrics.csv"));
  CHECK(file_bytes(full + "/model.ckpt") == file_bytes(part + "/model.ckpt"));
}

TEST_CASE("classifier swap needs a checkpoint and keeps the encoder") {
  const std::string cfg = write_tiny_config("swap.cfg");
  CHECK(run_cli("train " + cfg + " --out " + (scratch_dir() / "x").string() +
                " --swap-classifier")
            .exit_code == 1);

  const std::string& base = trained_run_dir();
  const std::string out = (scratch_dir() / "run_swapped").string();
  RunResult r = run_cli("train " + cfg + " --out " + out + " --resume " + base +
                        "/model.ckpt --swap-classifier");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("fresh classifier") != std::string::npos);

  Checkpoint before = load_checkpoint(base + "/model.ckpt");
  Checkpoint after = load_checkpoint(out + "/model.ckpt");
  // encoder came through the swap untouched (no epochs were left to run)
  REQUIRE(before.encoder.params.size() == after.encoder.params.size());
  for (size_t i = 0; i < before.encoder.params.size(); ++i)
    CHECK(before.encoder.params[i].data == after.encoder.params[i].data);
  // the classifier was reinitialized
  bool any_diff = false;
  for (size_t i = 0; i < before.classifier.params.size() && !any_diff; ++i)
    any_diff = before.classifier.params[i].data != after.classifier.params[i].data;
  CHECK(any_diff);
}

TEST_CASE("config errors exit 1 and name the nearest key or the cap") {
  const fs::path bad_key = scratch_dir() / "bad_key.cfg";
  std::ofstream(bad_key) << "train.gama = 0.05\n";
  RunResult r1 = run_cli("train " + bad_key.string() + " --out " +
                         (scratch_dir() / "x1").string());
  CHECK(r1.exit_code == 1);
  CHECK(r1.output.find("train.gamma") != std::string::npos);

  const fs::path bad_gamma = scratch_dir() / "bad_gamma.cfg";
  std::ofstream(bad_gamma) << "train.gamma = 0.2\n";
  RunResult r2 = run_cli("train " + bad_gamma.string() + " --out " +
                         (scratch_dir() / "x2").string());
  CHECK(r2.exit_code == 1);
  CHECK(r2.output.find("0.1") != std::string::npos);

  CHECK(run_cli("train " + (scratch_dir() / "absent.cfg").string() + " --out " +
                (scratch_dir() / "x3").string())
            .exit_code == 2);
}

TEST_CASE("eval prints a deterministic top-1 line in both modes") {
  const std::string& run = trained_run_dir();
  RunResult g1 = run_cli("eval " + run + "/model.ckpt --split val");
  RunResult g2 = run_cli("eval " + run + "/model.ckpt --split val");
  CHECK(g1.exit_code == 0);
  CHECK(g1.output.find("top-1 accuracy:") != std::string::npos);
  CHECK(g1.output.find("on=gaussians") != std::string::npos);
  CHECK(g1.output == g2.output);

  RunResult rendered = run_cli("eval " + run + "/model.ckpt --split val --on rendered");
  CHECK(rendered.exit_code == 0);
  CHECK(rendered.output.find("on=rendered") != std::string::npos);

  RunResult train_split = run_cli("eval " + run + "/model.ckpt --split train");
  CHECK(train_split.exit_code == 0);

  CHECK(run_cli("eval " + run + "/model.ckpt --on pixels").exit_code == 1);
  CHECK(run_cli("eval " + run + "/model.ckpt --split test").exit_code == 1);
  CHECK(run_cli("eval " + (scratch_dir() / "absent.ckpt").string()).exit_code == 2);
}

TEST_CASE("render writes reconstruction, overlay, and both heatmaps") {
  const std::string& run = trained_run_dir();
  const std::string out = (scratch_dir() / "render").string();
  RunResult r = run_cli("render " + run + "/model.ckpt " + sample_image() +
                        " --out " + out + " --upscale 4");
  CHECK(r.exit_code == 0);
  // the tiny model has k=4 gaussians; the overlay reports each one
  CHECK(r.output.find("/4 ellipses visible") != std::string::npos);

  CHECK(read_png(out + "_recon.png").shape() == Shape{16, 16, 3});
  CHECK(read_png(out + "_overlay.png").shape() == Shape{16, 16, 3});
  CHECK(read_png(out + "_det.png").shape() == Shape{64, 64, 3});
  CHECK(read_png(out + "_cdam.png").shape() == Shape{64, 64, 3});
}

TEST_CASE("explain writes only the saliency artifacts plus a csv") {
  const std::string& run = trained_run_dir();
  const std::string out = (scratch_dir() / "explain").string();
  RunResult r = run_cli("explain " + run + "/model.ckpt " + sample_image() +
                        " --out " + out + " --upscale 4 --class 2");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("attributing class 2") != std::string::npos);

  CHECK(read_png(out + "_det.png").shape() == Shape{64, 64, 3});
  CHECK(read_png(out + "_cdam.png").shape() == Shape{64, 64, 3});
  CHECK(!fs::exists(out + "_recon.png"));
  CHECK(!fs::exists(out + "_overlay.png"));

  std::ifstream csv(out + "_saliency.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "index,center_x,center_y,det,score");
  int rows = 0;
  std::string line;
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 4);  // one per gaussian

  CHECK(run_cli("explain " + run + "/model.ckpt " + sample_image() +
                " --out " + out + " --class 9")
            .exit_code == 1);
}

TEST_CASE("subcommands are required and unknown flags fail cleanly") {
  CHECK(run_cli("").exit_code == 1);
  CHECK(run_cli("--help").exit_code == 0);
  CHECK(run_cli("frobnicate").exit_code == 1);
  CHECK(run_cli("eval").exit_code == 1);  // missing required positional
}
