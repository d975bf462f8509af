#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gcul/experiment.hpp"

using namespace gcul;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code;
  std::string output;  // stdout + stderr
};

RunResult run_cli(const std::string& args) {
  const std::string out_file = (fs::temp_directory_path() / "gcul_cli_out.txt").string();
  const std::string cmd = std::string(GCUL_CLI_PATH) + " " + args + " > " + out_file + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(out_file);
  std::stringstream buf;
  buf << in.rdbuf();
  return {WEXITSTATUS(status), buf.str()};
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Tiny synthetic experiment config, fast enough for a smoke run.
fs::path write_smoke_config(const fs::path& dir, std::uint64_t seed) {
  fs::create_directories(dir);
  const fs::path path = dir / "smoke.cfg";
  std::ofstream out(path);
  out << "[dataset]\n"
         "synthetic = true\n"
         "synthetic_nodes = 220\n"
         "synthetic_classes = 3\n"
         "synthetic_features = 32\n"
         "synthetic_seed = 5\n"
         "test_fraction = 0.2\n"
         "unlearn_fraction = 0.15\n"
         "[model]\n"
         "arch = gcn\n"
         "hidden_dim = 16\n"
         "embedding_dim = 16\n"
         "[train]\n"
         "max_epochs = 40\n"
         "patience = 40\n"
         "[unlearn]\n"
         "batch_size = 16\n"
         "max_rounds = 5\n"
         "[attack]\n"
         "n_shadow = 2\n"
         "shadow_max_epochs = 15\n"
         "[experiment]\n"
      << "seed = " << seed << "\n";
  return path;
}

}  // namespace

TEST_CASE("ingest is reproducible and reports the manifest") {
  const fs::path dir = fs::temp_directory_path() / "gcul_cli_ingest";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream content(dir / "toy.content");
    content << "a 1 0 x\nb 0 1 y\nc 1 1 x\n";
    std::ofstream cites(dir / "toy.cites");
    cites << "a b\nb c\n";
  }
  RunResult first =
      run_cli("ingest " + (dir / "toy.content").string() + " " + (dir / "toy.cites").string() +
              " " + (dir / "out1").string());
  CHECK(first.exit_code == 0);
  CHECK(first.output.find("num_nodes=3") != std::string::npos);

  RunResult second =
      run_cli("ingest " + (dir / "toy.content").string() + " " + (dir / "toy.cites").string() +
              " " + (dir / "out2").string());
  CHECK(second.exit_code == 0);
  CHECK(read_file(dir / "out1" / "manifest.txt") == read_file(dir / "out2" / "manifest.txt"));
  CHECK(read_file(dir / "out1" / "manifest.txt").find("edge_checksum=") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("corrupt content exits with the data code and a line number") {
  const fs::path dir = fs::temp_directory_path() / "gcul_cli_corrupt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream content(dir / "bad.content");
    content << "a 1 0 x\nb oops y\n";
    std::ofstream cites(dir / "bad.cites");
  }
  RunResult r = run_cli("ingest " + (dir / "bad.content").string() + " " +
                        (dir / "bad.cites").string() + " " + (dir / "out").string());
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("line 2") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("usage errors exit with code 1") {
  CHECK(run_cli("definitely-not-a-subcommand").exit_code == 1);
  CHECK(run_cli("eval").exit_code == 1);  // missing required --checkpoint
}

TEST_CASE("experiment smoke run writes the full artifact set deterministically") {
  const fs::path dir = fs::temp_directory_path() / "gcul_cli_exp";
  fs::remove_all(dir);
  const fs::path cfg = write_smoke_config(dir, 11);

  RunResult a = run_cli("experiment --config " + cfg.string() + " --out " +
                        (dir / "run_a").string());
  REQUIRE(a.exit_code == 0);
  for (const char* name : {"summary.csv", "train_log.csv", "original.ckpt", "unlearned.ckpt",
                           "retrained.ckpt", "unlearn_report.json", "roc_original.csv",
                           "roc_unlearned.csv", "roc_retrained.csv"})
    CHECK(fs::exists(dir / "run_a" / name));

  RunResult b = run_cli("experiment --config " + cfg.string() + " --out " +
                        (dir / "run_b").string());
  REQUIRE(b.exit_code == 0);

  // metric files are byte-identical across reruns (wall-time column masked)
  auto mask_runtime = [](const std::string& csv) {
    std::istringstream in(csv);
    std::string line, out;
    while (std::getline(in, line)) {
      const auto cut = line.rfind(',');
      out += line.substr(0, cut) + "\n";
    }
    return out;
  };
  CHECK(mask_runtime(read_file(dir / "run_a" / "summary.csv")) ==
        mask_runtime(read_file(dir / "run_b" / "summary.csv")));
  CHECK(read_file(dir / "run_a" / "train_log.csv") == read_file(dir / "run_b" / "train_log.csv"));
  CHECK(read_file(dir / "run_a" / "roc_unlearned.csv") ==
        read_file(dir / "run_b" / "roc_unlearned.csv"));
  CHECK(read_file(dir / "run_a" / "original.ckpt") == read_file(dir / "run_b" / "original.ckpt"));

  // eval on the trained checkpoint prints the accuracy block
  RunResult ev = run_cli("eval --config " + cfg.string() + " --checkpoint " +
                         (dir / "run_a" / "original.ckpt").string());
  CHECK(ev.exit_code == 0);
  CHECK(ev.output.find("test_acc=") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("ratio sweep emits one summary block per ratio") {
  const fs::path dir = fs::temp_directory_path() / "gcul_cli_sweep";
  fs::remove_all(dir);
  const fs::path cfg = write_smoke_config(dir, 13);
  RunResult r = run_cli("experiment --config " + cfg.string() + " --out " +
                        (dir / "sweep").string() + " --ratio 0.1 --ratio 0.3");
  REQUIRE(r.exit_code == 0);
  const std::string summary = read_file(dir / "sweep" / "summary.csv");
  CHECK(summary.find("0.100000,original") != std::string::npos);
  CHECK(summary.find("0.300000,original") != std::string::npos);
  CHECK(summary.find("0.100000,unlearned") != std::string::npos);
  CHECK(summary.find("0.300000,retrained") != std::string::npos);
  fs::remove_all(dir);
}
