#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "commands.hpp"
#include "scdsc/binary_io.hpp"
#include "scdsc/hsi.hpp"

using namespace scdsc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int status = -1;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "scdsc");
  std::ostringstream out, err;
  Outcome o;
  o.status = cli::run(args, out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

fs::path workdir() {
  const fs::path dir = fs::temp_directory_path() / "scdsc_cli_test";
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string synth_scene_file(const std::string& name) {
  const std::string path = (workdir() / name).string();
  const Outcome o = invoke({"synth", "--w", "12", "--h", "10", "--b", "6", "--k", "3", "--q", "2", "--sigma", "0.01",
                            "--seed", "7", "--out", path});
  REQUIRE(o.status == 0);
  return path;
}

}  // namespace

TEST_CASE("synth") {
  SUBCASE("writes the scene and reports class sizes") {
    const std::string path = (workdir() / "acc.hsic").string();
    const Outcome o = invoke({"synth", "--w", "40", "--h", "40", "--b", "24", "--k", "4", "--q", "3", "--sigma", "0.01",
                              "--seed", "7", "--out", path});
    CHECK(o.status == 0);
    const HsiCube cube = load_cube(path);
    CHECK(cube.bands() == 24);
    CHECK(o.out.find("class 4 ") != std::string::npos);
    CHECK(o.out.find("class 5 ") == std::string::npos);
  }

  SUBCASE("same flags give byte-identical files") {
    const std::string a = synth_scene_file("a.hsic");
    const std::string b = synth_scene_file("b.hsic");
    CHECK(slurp(a) == slurp(b));
  }

  SUBCASE("q must stay below b") {
    const Outcome o = invoke({"synth", "--b", "24", "--q", "30", "--out", (workdir() / "bad.hsic").string()});
    CHECK(o.status == 2);
    CHECK(o.err.find("--q") != std::string::npos);
  }
}

TEST_CASE("usage errors exit with status 2") {
  CHECK(invoke({}).status == 2);
  CHECK(invoke({"frobnicate"}).status == 2);
  CHECK(invoke({"cluster", "--in", "x.hsic", "--out", "run"}).status == 2);
  CHECK(invoke({"cluster", "--in", "x.hsic", "--out", "run", "--k", "2", "--window", "4"}).status == 2);
  CHECK(invoke({"cluster", "--in", "x.hsic", "--out", "run", "--k", "2", "--metric", "manhattan"}).status == 2);
  CHECK(invoke({"--help"}).status == 0);
}

TEST_CASE("runtime failures exit with status 1") {
  const Outcome o = invoke({"eval", "--in", (workdir() / "missing.hsic").string(), "--labels", "missing.u16"});
  CHECK(o.status == 1);
  CHECK_FALSE(o.err.empty());
}

TEST_CASE("eval") {
  const std::string scene = synth_scene_file("eval.hsic");
  const HsiCube cube = load_cube(scene);
  const auto truth = cube.masked_labels();

  SUBCASE("ground truth against itself") {
    const fs::path labels = workdir() / "truth.u16";
    io::write_column<std::uint16_t>(labels, truth);
    const Outcome o = invoke({"eval", "--in", scene, "--labels", labels.string()});
    CHECK(o.status == 0);
    CHECK(o.out.find("OA 1.000000") != std::string::npos);
    CHECK(o.out.find("NMI 1.000000") != std::string::npos);
    CHECK(o.out.find("Kappa 1.000000") != std::string::npos);
  }

  SUBCASE("permuted ids give identical output") {
    std::vector<std::uint16_t> shifted(truth.size()), permuted(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) {
      shifted[i] = static_cast<std::uint16_t>(truth[i] % 3 + 1);
      permuted[i] = static_cast<std::uint16_t>((truth[i] + 1) % 3 + 1);
    }
    const fs::path a = workdir() / "a.u16";
    const fs::path b = workdir() / "b.u16";
    io::write_column<std::uint16_t>(a, shifted);
    io::write_column<std::uint16_t>(b, permuted);
    CHECK(invoke({"eval", "--in", scene, "--labels", a.string()}).out ==
          invoke({"eval", "--in", scene, "--labels", b.string()}).out);
  }

  SUBCASE("twelve-sample fixture") {
    std::vector<float> raster(12, 0.0f);
    const HsiCube small(12, 1, 1, raster, {1, 1, 1, 1, 1, 2, 1, 1, 2, 2, 2, 2});
    const fs::path path = workdir() / "fixture.hsic";
    save_cube(small, path);
    const fs::path labels = workdir() / "fixture.u16";
    io::write_column<std::uint16_t>(labels, std::vector<std::uint16_t>{1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2});
    const Outcome o = invoke({"eval", "--in", path.string(), "--labels", labels.string()});
    CHECK(o.status == 0);
    CHECK(o.out.find("OA 0.750000") != std::string::npos);
  }

  SUBCASE("length mismatch") {
    const fs::path labels = workdir() / "short.u16";
    io::write_column<std::uint16_t>(labels, std::vector<std::uint16_t>{1, 2});
    CHECK(invoke({"eval", "--in", scene, "--labels", labels.string()}).status == 1);
  }
}

TEST_CASE("cluster") {
  const std::string scene = synth_scene_file("cluster.hsic");
  const fs::path run = workdir() / "run";
  fs::remove_all(run);
  const Outcome o = invoke({"cluster", "--in", scene, "--out", run.string(), "--k", "3", "--r", "2", "--patch", "3",
                            "--mc-patch", "5", "--hidden", "16", "--pretrain-epochs", "2", "--epochs", "2",
                            "--beta1", "0", "--beta2", "0", "--kmeans-restarts", "1", "--quiet"});
  CHECK(o.status == 0);
  CHECK(fs::exists(run / "labels.u16"));
  CHECK(fs::exists(run / "metrics.csv"));
  const std::string config = slurp(run / "config.txt");
  CHECK(config.find("beta1=0") != std::string::npos);
  CHECK(config.find("in=" + scene) != std::string::npos);
  CHECK(o.out.find("OA ") != std::string::npos);

  SUBCASE("unlabeled input is a usage error") {
    const fs::path bare = workdir() / "bare.hsic";
    save_cube(HsiCube(3, 3, 2, std::vector<float>(18, 1.0f)), bare);
    CHECK(invoke({"cluster", "--in", bare.string(), "--out", run.string(), "--k", "2"}).status == 2);
  }
}

TEST_CASE("convert") {
  const fs::path raw = workdir() / "cube.f32";
  // 2 x 1 pixels, 2 bands, band-sequential.
  io::write_column<float>(raw, std::vector<float>{1, 2, 3, 4});
  const fs::path out = workdir() / "converted.hsic";
  const Outcome o = invoke({"convert", "--raw", raw.string(), "--layout", "bsq", "--w", "2", "--h", "1", "--b", "2",
                            "--out", out.string()});
  REQUIRE(o.status == 0);
  const HsiCube cube = load_cube(out);
  CHECK(cube.at(0, 0, 1) == 3.0f);
  CHECK(cube.at(1, 0, 0) == 2.0f);
  CHECK(invoke({"convert", "--raw", raw.string(), "--layout", "xyz", "--w", "2", "--h", "1", "--b", "2", "--out",
                out.string()})
            .status == 2);
}
