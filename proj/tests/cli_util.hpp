#pragma once

// Helpers for driving the gaitsf binary from tests.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

namespace cli {

namespace fs = std::filesystem;

inline std::string binary() { return GAITSF_CLI_PATH; }

/// Runs `gaitsf <args>`; stdout and stderr go to `log` (or are discarded).
inline int run(const std::string& args, const fs::path& log = {}) {
  const std::string sink = log.empty() ? std::string("/dev/null") : log.string();
  const std::string cmd = "'" + binary() + "' " + args + " >'" + sink + "' 2>&1";
  const int status = std::system(cmd.c_str());
  if (status == -1 || !WIFEXITED(status)) return -1;
  return WEXITSTATUS(status);
}

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

inline fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("gaitsf_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

/// A config small enough for every stage to finish in a second or two.
inline fs::path write_tiny_config(const fs::path& dir) {
  const fs::path p = dir / "tiny.cfg";
  std::ofstream(p) << "# tiny profile\n"
                      "data.train_subjects = 4\n"
                      "data.pretrain_subjects = 3\n"
                      "data.test_subjects = 3\n"
                      "data.views = 0,90,180\n"
                      "data.frames = 6\n"
                      "encoder.dim = 4\n"
                      "pretrain.epochs = 2\n"
                      "baseline.epochs = 2\n"
                      "baseline.iterations = 2\n"
                      "baseline.batch_clusters = 2\n"
                      "baseline.batch_seqs = 4\n"
                      "baseline.frames = 4\n"
                      "baseline.knn = 5\n"
                      "baseline.s_up = 0.3\n"
                      "sf.epochs = 2\n"
                      "sf.iterations = 2\n"
                      "sf.batch_clusters = 2\n"
                      "sf.batch_seqs = 4\n"
                      "sf.frames = 4\n"
                      "sf.knn = 5\n"
                      "train.checkpoint_every = 1\n";
  return p;
}

}  // namespace cli
