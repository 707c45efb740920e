#include <doctest.h>

#include <sys/wait.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "maf/archive.hpp"
#include "maf/image_io.hpp"
#include "maf/synth_data.hpp"

using namespace maf;
namespace fs = std::filesystem;

namespace {

const fs::path& root() {
  static const fs::path p = [] {
    const fs::path d = fs::temp_directory_path() / "maf_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MAF_CLI) + " " + args + " 2>>" + (root() / "stderr.log").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string p(const std::string& name) { return (root() / name).string(); }

int lines(const fs::path& f) {
  std::ifstream is(f);
  int n = 0;
  for (std::string l; std::getline(is, l);) ++n;
  return n;
}

// One small dataset and checkpoint shared by the cases below.
void ensure_trained() {
  static const bool done = [] {
    REQUIRE(run_cli("synth --dataset " + p("ds") + " --count 4 --seed 1") == 0);
    REQUIRE(run_cli("train --dataset " + p("ds") + " --steps 2 --batch 2 --probe 1 --checkpoint " + p("m.ckpt") +
                " --log " + p("train.csv")) == 0);
    return true;
  }();
  (void)done;
}

}  // namespace

TEST_CASE("cli: argument errors exit with status 1") {
  CHECK(run_cli("synth --dataset " + p("zero") + " --count 0") == 1);
  CHECK(run_cli("") == 1);
  CHECK(run_cli("bogus") == 1);
  CHECK(run_cli("synth --count 2") == 1);
  CHECK(run_cli("--preset huge synth --dataset " + p("huge") + " --count 1") != 0);
}

TEST_CASE("cli: synth is byte-for-byte reproducible") {
  REQUIRE(run_cli("synth --dataset " + p("s1") + " --count 3 --seed 9") == 0);
  REQUIRE(run_cli("synth --dataset " + p("s2") + " --count 3 --seed 9") == 0);
  for (const char* f : {"manifest.json", "body.bin", "samples/000000.bin", "samples/000002.bin"})
    CHECK(archive::file_bytes(root() / "s1" / f) == archive::file_bytes(root() / "s2" / f));
  REQUIRE(run_cli("synth --dataset " + p("s3") + " --count 3 --seed 10") == 0);
  CHECK(archive::file_bytes(root() / "s1" / "samples/000000.bin") !=
        archive::file_bytes(root() / "s3" / "samples/000000.bin"));
}

TEST_CASE("cli: train writes a log row per step and a checkpoint") {
  ensure_trained();
  CHECK(fs::exists(p("m.ckpt")));
  CHECK(lines(p("train.csv")) == 3);
  CHECK(run_cli("train --dataset " + p("ds") + " --steps 3 --batch 2 --probe 1 --checkpoint " + p("m2.ckpt") +
            " --resume " + p("m.ckpt") + " --log " + p("train.csv")) == 0);
  CHECK(lines(p("train.csv")) == 4);
}

TEST_CASE("cli: config file values apply and flags override them") {
  ensure_trained();
  {
    std::ofstream cfg(p("run.cfg"));
    cfg << "dataset = \"" << p("ds") << "\"\nsteps = 1\nbatch = 2\nprobe = 1\n";
  }
  CHECK(run_cli("--config " + p("run.cfg") + " train --checkpoint " + p("cfg.ckpt") + " --log " + p("cfg.csv")) == 0);
  CHECK(lines(p("cfg.csv")) == 2);
  CHECK(run_cli("--config " + p("run.cfg") + " --steps 2 train --checkpoint " + p("cfg2.ckpt") + " --log " +
            p("cfg2.csv")) == 0);
  CHECK(lines(p("cfg2.csv")) == 3);
}

TEST_CASE("cli: eval writes per-sample csv and summary") {
  ensure_trained();
  REQUIRE(run_cli("eval --dataset " + p("ds") + " --checkpoint " + p("m.ckpt") + " --csv " + p("e.csv") +
              " --summary " + p("e.json")) == 0);
  CHECK(lines(p("e.csv")) == 5);
  std::ifstream is(p("e.json"));
  const auto j = nlohmann::json::parse(is);
  CHECK(j["count"] == 4);
  CHECK(j.contains("mpjpe"));
  CHECK(j["per_iteration"]["mpjpe"].size() == 4u);
}

TEST_CASE("cli: infer writes one overlay per iteration") {
  ensure_trained();
  const Dataset ds = load_dataset(p("ds"));
  write_ppm(p("in.ppm"), ds.samples[0].image);
  REQUIRE(run_cli("infer --dataset " + p("ds") + " --checkpoint " + p("m.ckpt") + " --image " + p("in.ppm") +
              " --out-dir " + p("inf") + " --features") == 0);
  int overlays = 0;
  for (const auto& e : fs::directory_iterator(p("inf")))
    overlays += e.path().filename().string().rfind("overlay_iter", 0) == 0;
  CHECK(overlays == 3);
  CHECK(fs::exists(root() / "inf" / "features_level2.pgm"));
  std::ifstream is(root() / "inf" / "params.json");
  const auto j = nlohmann::json::parse(is);
  CHECK(j["iterations"].size() == 3u);
  CHECK(j["iterations"][2]["t"] == 3);

  CHECK(run_cli("--preset paper infer --checkpoint " + p("m.ckpt") + " --image " + p("in.ppm")) != 0);
  CHECK(run_cli("infer --T 2 --checkpoint " + p("m.ckpt") + " --image " + p("in.ppm")) != 0);
  CHECK(run_cli("infer --checkpoint " + p("m.ckpt") + " --image " + p("missing.ppm")) == 1);
}

TEST_CASE("cli: ablate needs checkpoints unless asked to train") {
  ensure_trained();
  CHECK(run_cli("ablate --dataset " + p("ds") + " --modes grid --seeds 0 --ckpt-dir " + p("abl_empty") + " --csv " +
            p("abl0.csv")) == 2);
  REQUIRE(run_cli("ablate --dataset " + p("ds") + " --modes global,grid --seeds 0 --ckpt-dir " + p("abl") +
              " --csv " + p("abl.csv") + " --train --steps 1 --batch 2 --probe 1") == 0);
  CHECK(lines(p("abl.csv")) == 1 + 3 + 3);
  CHECK(fs::exists(root() / "abl" / "global_grid_seed0.ckpt"));
  REQUIRE(run_cli("ablate --dataset " + p("ds") + " --modes grid --seeds 0 --ckpt-dir " + p("abl") + " --csv " +
              p("abl2.csv")) == 0);
  CHECK(lines(p("abl2.csv")) == 4);
}
