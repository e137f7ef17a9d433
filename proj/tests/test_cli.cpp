#include "ctsn/cli.hpp"
#include "ctsn/mesh.hpp"
#include "ctsn/network.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace ctsn;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("cli pipeline: gen-data, train, predict, eval") {
  const fs::path dir = fs::temp_directory_path() / "ctsn_test_cli";
  fs::remove_all(dir);
  const std::string ds = (dir / "ds").string(), ck = (dir / "model.json").string();

  REQUIRE(cli::run({"gen-data", "--kind", "quad-blanket", "--poses", "32", "--resolution", "5", "--seed", "3",
                    "--out", ds}) == 0);
  CHECK(fs::exists(dir / "ds" / "meta.json"));
  CHECK(fs::exists(dir / "ds" / "clips" / "clip_001"));

  REQUIRE(cli::run({"train", "--dataset", ds, "--checkpoint", ck, "--epochs", "2", "--m", "4", "--k", "6",
                    "--quiet"}) == 0);
  CHECK(fs::exists(ck));
  CHECK(slurp(ck + ".csv").rfind("epoch,stage,loss\n", 0) == 0);
  CHECK(load_model(ck).config.k == 6);

  REQUIRE(cli::run({"predict", "--checkpoint", ck, "--dataset", ds, "--out", (dir / "pred").string()}) == 0);
  const fs::path one = dir / "pred" / "clip_000" / "frame_003.pred.obj";
  CHECK(load_obj(one).vertex_count() == 25);

  CHECK(cli::run({"eval", "--pred", one.string(), "--gt", (dir / "ds" / "clips" / "clip_000" / "frame_003.gt.obj").string(),
                  "--out", (dir / "m.csv").string()}) == 0);
  CHECK(cli::run({"eval", "--dataset", ds, "--checkpoint", ck, "--split", "test", "--resolve-penetrations",
                  "--out", (dir / "test.csv").string()}) == 0);
  std::istringstream rows(slurp(dir / "test.csv"));
  std::string line;
  std::size_t count = 0;
  while (std::getline(rows, line)) ++count;
  CHECK(count == 1 + 16);
  fs::remove_all(dir);
}

TEST_CASE("cli reports input errors with its exit codes") {
  const fs::path dir = fs::temp_directory_path() / "ctsn_test_cli_err";
  fs::remove_all(dir);
  CHECK(cli::run({"train", "--dataset", (dir / "missing").string(), "--checkpoint", (dir / "c.json").string()}) ==
        cli::kExitInput);
  CHECK(cli::run({"gen-data", "--kind", "poncho", "--out", (dir / "x").string()}) == cli::kExitInput);
  CHECK(cli::run({"eval", "--pred", "a.obj"}) == cli::kExitInput);
  CHECK(cli::run({"no-such-command"}) != 0);
  CHECK(cli::run({"--help"}) == 0);
  fs::remove_all(dir);
}

TEST_CASE("gen-data is byte-reproducible") {
  const fs::path dir = fs::temp_directory_path() / "ctsn_test_cli_det";
  fs::remove_all(dir);
  for (const char* name : {"a", "b"})
    REQUIRE(cli::run({"gen-data", "--kind", "arm-cape", "--poses", "16", "--resolution", "4", "--seed", "8",
                      "--out", (dir / name).string()}) == 0);
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), dir / "a");
    CHECK(slurp(e.path()) == slurp(dir / "b" / rel));
  }
  fs::remove_all(dir);
}
