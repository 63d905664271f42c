#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include "doctest.h"
#include "ptn/datasets.hpp"

using namespace ptn;
namespace fs = std::filesystem;

namespace {

const fs::path& work() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("ptn-cli-" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args, std::string* output = nullptr) {
  const auto log = work() / "out.txt";
  const std::string cmd = "cd '" + work().string() + "' && PTN_DATA_DIR='" + (work() / "data").string() + "' '" +
                          PTN_CLI_PATH + "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) {
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    *output = ss.str();
  }
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// A few hundred blob "digits" in the MNIST file layout.
void write_fake_mnist(const fs::path& dir) {
  fs::create_directories(dir);
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> pos(9, 18), label(0, 9);
  auto write = [&](const std::string& prefix, std::size_t n) {
    std::vector<std::uint8_t> px(n * 784, 0), labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      const int cx = pos(rng), cy = pos(rng);
      for (int y = cy - 2; y <= cy + 2; ++y)
        for (int x = cx - 3; x <= cx + 3; ++x) px[i * 784 + y * 28 + x] = 200;
      labels[i] = static_cast<std::uint8_t>(label(rng));
    }
    write_file(dir / (prefix + "-images-idx3-ubyte"), encode_idx({n, 28, 28}, px));
    write_file(dir / (prefix + "-labels-idx1-ubyte"), encode_idx({n}, labels));
  };
  write("train", 120);
  write("t10k", 40);
}

}  // namespace

TEST_CASE("help and argument errors") {
  CHECK(run("--help") == 0);
  CHECK(run("") == 1);
  CHECK(run("frobnicate") == 1);
  CHECK(run("eval") == 1);  // --ckpt is required
  std::string out;
  CHECK(run("train --run-dir r0 bogus_key=1", &out) == 1);
  CHECK(out.find("bogus_key") != std::string::npos);
  CHECK(run("train --run-dir r1 epochs=abc") == 1);
  CHECK(run("gen-data --spec nonsense --run-dir r2") == 1);
}

TEST_CASE("gradcheck subcommand") {
  std::string out;
  CHECK(run("gradcheck --seed 3", &out) == 0);
  for (const char* op : {"conv2d", "batch_norm", "bilinear_sample", "polar_transform", "centroid"})
    CHECK(out.find(op) != std::string::npos);
  CHECK(out.find("FAIL") == std::string::npos);
}

TEST_CASE("library equivariance report") {
  std::string out;
  CHECK(run("equivariance --run-dir eq0", &out) == 0);
  CHECK(fs::exists(work() / "eq0" / "report.csv"));
}

TEST_CASE("generate, train, evaluate and check a model") {
  write_fake_mnist(work() / "data" / "mnist");
  CHECK(run("gen-data --spec rotmnist --seed 2 --train 60 --val 20 --test 30 --run-dir data/rotmnist") == 0);
  for (const char* f : {"train-images-idx3-ubyte", "val-labels-idx1-ubyte", "test-provenance.csv"})
    CHECK(fs::exists(work() / "data" / "rotmnist" / f));

  // Missing or malformed data.
  CHECK(run("train --run-dir bad0 dataset=absent epochs=1") == 1);
  CHECK(run("train --run-dir bad1 data_dir=nowhere epochs=1") == 2);

  CHECK(run("train --seed 1 --run-dir t0 epochs=2 batch_size=16") == 0);
  for (const char* f : {"config.txt", "run.log", "metrics.csv", "best.ckpt", "result.txt", "confusion.csv"})
    CHECK(fs::exists(work() / "t0" / f));
  // Refuses to overwrite an existing run.
  CHECK(run("train --seed 1 --run-dir t0 epochs=1") == 1);

  std::string out;
  CHECK(run("eval --ckpt t0/best.ckpt --run-dir e0", &out) == 0);
  CHECK(out.find("test error") != std::string::npos);
  CHECK(run("eval --ckpt t0/best.ckpt --tta 4 --split val --run-dir e1") == 0);

  CHECK(run("equivariance --ckpt t0/best.ckpt --samples 8 --run-dir eq1", &out) <= 2);
  CHECK(out.find("fixed-origin") != std::string::npos);

  // Truncated checkpoint is a format error.
  const auto ckpt = work() / "t0" / "best.ckpt";
  fs::copy_file(ckpt, work() / "cut.ckpt");
  fs::resize_file(work() / "cut.ckpt", fs::file_size(ckpt) / 2);
  fs::copy_file(work() / "t0" / "config.txt", work() / "config.txt");
  CHECK(run("eval --ckpt cut.ckpt --run-dir e2", &out) == 1);
  CHECK(out.find("byte offset") != std::string::npos);

  // Same seed, same metrics.
  CHECK(run("train --seed 1 --run-dir t1 epochs=2 batch_size=16") == 0);
  auto read = [](const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  auto strip_time = [](std::string csv) {
    std::string out;
    std::istringstream in(csv);
    for (std::string line; std::getline(in, line);) out += line.substr(0, line.rfind(',')) + "\n";
    return out;
  };
  CHECK(strip_time(read(work() / "t0" / "metrics.csv")) == strip_time(read(work() / "t1" / "metrics.csv")));
  CHECK(read(work() / "t0" / "result.txt") == read(work() / "t1" / "result.txt"));
  fs::remove_all(work());
}
