#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "condisr/image_io.hpp"

namespace fs = std::filesystem;

namespace {

std::string tmp_root() {
  fs::path p = fs::path(CONDISR_TEST_TMP) / "cli";
  fs::create_directories(p);
  return p.string();
}

int run_cli(const std::string& args) {
  std::string cmd = std::string(CONDISR_BIN) + " " + args + " >/dev/null 2>/dev/null";
  int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string write_file(const std::string& name, const std::string& content) {
  fs::path p = fs::path(tmp_root()) / name;
  std::ofstream os(p);
  os << content;
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

const char* kMicroCfg =
    "data.samples_per_domain = 12\n"
    "model.stem_channels = 16\n"
    "model.proj_dim = 8\n"
    "decoder.widths = 8,4\n"
    "decoder.pool_stages = 2\n"
    "train.batch_size = 10\n"
    "train.epochs = 1\n"
    "train.seeds = 0\n"
    "train.methods = erm_noaug\n"
    "loss.style_mode = margin\n";

}  // namespace

TEST_CASE("cli validate: success prints resolved config, failure lists errors") {
  std::string good = write_file("good.cfg", "model.tau = 0.2\n");
  CHECK(run_cli("validate " + good) == 0);
  std::string bad = write_file("bad.cfg", "model.tau = -1\nmodel.taau = 3\n");
  CHECK(run_cli("validate " + bad) == 2);
  std::string missing = (fs::path(tmp_root()) / "nope.cfg").string();
  CHECK(run_cli("validate " + missing) == 2);
}

TEST_CASE("cli run: artifacts, rerun protection, determinism") {
  std::string cfg = write_file("micro.cfg", kMicroCfg);
  std::string out1 = tmp_root() + "/run1";
  std::string out2 = tmp_root() + "/run2";
  fs::remove_all(out1);
  fs::remove_all(out2);
  REQUIRE(run_cli("run --config " + cfg + " --out " + out1) == 0);
  for (const char* f : {"results.csv", "results.json", "results.md", "runs.csv",
                        "config.resolved", "run.log"})
    CHECK(fs::exists(fs::path(out1) / f));

  // refuses to overwrite without --force
  CHECK(run_cli("run --config " + cfg + " --out " + out1) == 2);
  CHECK(run_cli("run --config " + cfg + " --out " + out1 + " --force") == 0);

  REQUIRE(run_cli("run --config " + cfg + " --out " + out2) == 0);
  CHECK(slurp(out1 + "/results.csv") == slurp(out2 + "/results.csv"));
  CHECK(slurp(out1 + "/results.md") == slurp(out2 + "/results.md"));
}

TEST_CASE("cli run honors --methods") {
  std::string cfg = write_file("micro2.cfg", kMicroCfg);
  std::string out = tmp_root() + "/methods";
  fs::remove_all(out);
  REQUIRE(run_cli("run --config " + cfg + " --out " + out +
                  " --methods erm_noaug,erm,condisr") == 0);
  std::string md = slurp(out + "/results.md");
  CHECK(md.find("erm_noaug") != std::string::npos);
  CHECK(md.find("| erm ") != std::string::npos);
  CHECK(md.find("condisr") != std::string::npos);
}

TEST_CASE("cli make-synthetic: layout and seed-stable bytes") {
  std::string cfg = write_file("synth.cfg", "data.samples_per_domain = 10\n");
  std::string out1 = tmp_root() + "/synth1";
  std::string out2 = tmp_root() + "/synth2";
  fs::remove_all(out1);
  fs::remove_all(out2);
  REQUIRE(run_cli("make-synthetic --config " + cfg + " --out " + out1) == 0);
  REQUIRE(run_cli("make-synthetic --config " + cfg + " --out " + out2) == 0);
  CHECK(fs::exists(fs::path(out1) / "metadata.csv"));
  int dirs = 0;
  for (const auto& e : fs::directory_iterator(fs::path(out1) / "patches"))
    if (e.is_directory()) ++dirs;
  CHECK(dirs == 5);

  // metadata row count equals image count
  std::ifstream meta(fs::path(out1) / "metadata.csv");
  std::string line;
  int rows = -1;  // header
  while (std::getline(meta, line))
    if (!line.empty()) ++rows;
  int pngs = 0;
  for (const auto& dir : fs::directory_iterator(fs::path(out1) / "patches"))
    for (const auto& f : fs::directory_iterator(dir)) {
      ++pngs;
      // identical bytes across reruns with the same seed
      fs::path other = fs::path(out2) / "patches" / dir.path().filename() / f.path().filename();
      CHECK(slurp(f.path().string()) == slurp(other.string()));
    }
  CHECK(rows == pngs);
  CHECK(rows == 50);
}

TEST_CASE("cli ablate: usage errors and row structure") {
  std::string cfg = write_file("micro3.cfg",
                               std::string(kMicroCfg) + "train.source = 0\n");
  CHECK(run_cli("ablate --config " + cfg + " --which nonsense --out " + tmp_root() +
                "/abl_bad") == 2);
  std::string out = tmp_root() + "/abl_res";
  fs::remove_all(out);
  REQUIRE(run_cli("ablate --config " + cfg + " --which resolution --out " + out) == 0);
  std::string csv = slurp(out + "/results.csv");
  CHECK(csv.find("\n24,") != std::string::npos);
  CHECK(csv.find("\n48,") != std::string::npos);
  CHECK(csv.find("\n96,") != std::string::npos);
}

TEST_CASE("cli gradcam: overlay written, batch mode, unknown layer listed") {
  std::string cfg = write_file("micro4.cfg", kMicroCfg);
  std::string run_out = tmp_root() + "/cam_run";
  fs::remove_all(run_out);
  REQUIRE(run_cli("run --config " + cfg + " --out " + run_out) == 0);
  std::string ckpt;
  for (const auto& e : fs::directory_iterator(fs::path(run_out) / "checkpoints")) {
    ckpt = e.path().string();
    break;
  }
  REQUIRE(!ckpt.empty());

  std::string synth = tmp_root() + "/cam_data";
  fs::remove_all(synth);
  REQUIRE(run_cli("make-synthetic --config " + cfg + " --out " + synth) == 0);
  std::string img;
  for (const auto& dir : fs::directory_iterator(fs::path(synth) / "patches"))
    for (const auto& f : fs::directory_iterator(dir)) {
      img = f.path().string();
      break;
    }
  REQUIRE(!img.empty());

  std::string overlay = tmp_root() + "/overlay.png";
  REQUIRE(run_cli("gradcam --checkpoint " + ckpt + " --image " + img + " --layer block1 --out " +
                  overlay + " --config " + cfg) == 0);
  condisr::ImageU8 o = condisr::read_png(overlay);
  CHECK(o.width == 96);
  CHECK(o.height == 96);

  CHECK(run_cli("gradcam --checkpoint " + ckpt + " --image " + img + " --layer nope --out " +
                overlay + " --config " + cfg) == 2);

  std::string batch_dir;
  for (const auto& dir : fs::directory_iterator(fs::path(synth) / "patches")) {
    batch_dir = dir.path().string();
    break;
  }
  std::string cam_dir = tmp_root() + "/cam_batch";
  fs::remove_all(cam_dir);
  REQUIRE(run_cli("gradcam --checkpoint " + ckpt + " --image " + batch_dir +
                  " --layer block1 --out " + cam_dir + " --config " + cfg) == 0);
  int overlays = 0;
  for (const auto& f : fs::directory_iterator(cam_dir)) {
    ++overlays;
    CHECK(f.path().filename().string().find("_cam.png") != std::string::npos);
  }
  CHECK(overlays == 12);
}
