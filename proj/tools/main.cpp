#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "ptn/checkpoint.hpp"
#include "ptn/datasets.hpp"
#include "ptn/equivariance.hpp"
#include "ptn/errors.hpp"
#include "ptn/gradcheck_suite.hpp"
#include "ptn/parallel.hpp"
#include "ptn/trainer.hpp"

namespace fs = std::filesystem;
using namespace ptn;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out = "runs";
  std::string run_dir;
  int threads = 1;
  std::vector<std::string> overrides;
};

fs::path data_root() {
  const char* env = std::getenv("PTN_DATA_DIR");
  return env && *env ? fs::path(env) : fs::path("data");
}

fs::path mnist_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("PTN_MNIST_DIR"); env && *env) return env;
  return data_root() / "mnist";
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return os.str();
}

// Refuses to reuse a non-empty directory so a run is never silently overwritten.
fs::path make_run_dir(const Common& c, const std::string& command) {
  fs::path dir = c.run_dir.empty() ? fs::path(c.out) / (command + "-" + timestamp() + "-seed" + std::to_string(c.seed))
                                   : fs::path(c.run_dir);
  if (fs::exists(dir) && !fs::is_empty(dir))
    throw ConfigError("run directory " + dir.string() + " already exists and is not empty");
  fs::create_directories(dir);
  return dir;
}

class Log {
 public:
  explicit Log(const fs::path& file) : out_(file) {}
  void operator()(const std::string& line) {
    std::cout << line << std::endl;
    if (out_) out_ << line << std::endl;
  }

 private:
  std::ofstream out_;
};

TrainConfig resolve(const Common& c) {
  TrainConfig cfg;
  if (!c.config.empty()) cfg = load_config(c.config);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + kv + "' is not key=value");
    apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed_given) cfg.seed = c.seed;
  cfg.threads = c.threads;
  return cfg;
}

fs::path dataset_dir(const TrainConfig& cfg) {
  return cfg.data_dir.empty() ? data_root() / cfg.dataset : fs::path(cfg.data_dir);
}

Dataset load_split(const fs::path& dir, const std::string& split, std::size_t limit) {
  if (!fs::exists(dir / (split + "-images-idx3-ubyte"))) return {};
  auto d = load_dataset(dir, split);
  if (limit && limit < d.size()) d = d.slice(0, limit);
  return d;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

void write_confusion(const fs::path& path, const EvalResult& r) {
  std::ofstream out(path);
  out << "true\\pred";
  for (std::size_t k = 0; k < r.confusion.size(); ++k) out << ',' << k;
  out << '\n';
  for (std::size_t t = 0; t < r.confusion.size(); ++t) {
    out << t;
    for (auto v : r.confusion[t]) out << ',' << v;
    out << '\n';
  }
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "key=value config file");
  app->add_option("--seed", c.seed, "random seed (overrides the config)")->each([&](const std::string&) {
    c.seed_given = true;
  });
  app->add_option("--out", c.out, "base directory for run directories");
  app->add_option("--run-dir", c.run_dir, "exact run directory (must be new or empty)");
  app->add_option("--threads", c.threads, "worker threads for intra-op loops")->check(CLI::PositiveNumber);
  app->add_option("overrides", c.overrides, "config overrides as key=value");
}

int cmd_gen_data(const Common& c, const std::string& spec_name, const std::string& mnist, std::size_t train_n,
                 std::size_t val_n, std::size_t test_n) {
  auto spec = DatasetSpec::preset(spec_name);
  spec.seed = c.seed;
  if (train_n) spec.train = train_n;
  if (val_n) spec.val = val_n;
  if (test_n) spec.test = test_n;
  set_num_threads(c.threads);
  const auto dir = make_run_dir(c, "gen-data-" + spec_name);
  Log log(dir / "run.log");
  log("spec " + spec.name + "  canvas " + std::to_string(spec.canvas) + "  train/val/test " +
      std::to_string(spec.train) + "/" + std::to_string(spec.val) + "/" + std::to_string(spec.test) + "  seed " +
      std::to_string(spec.seed));
  const auto pool = load_mnist(mnist_dir(mnist));
  const auto data = generate(spec, pool);
  save_dataset(data.train, dir, "train");
  if (data.val.size()) save_dataset(data.val, dir, "val");
  save_dataset(data.test, dir, "test");
  log("wrote " + dir.string());
  return 0;
}

int cmd_train(const Common& c) {
  auto cfg = resolve(c);
  const auto dir = make_run_dir(c, "train-" + cfg.variant);
  Log log(dir / "run.log");
  write_text(dir / "config.txt", config_to_string(cfg));
  log("resolved config:\n" + config_to_string(cfg));
  const auto ddir = dataset_dir(cfg);
  auto train_set = load_split(ddir, "train", cfg.train_limit);
  auto val_set = load_split(ddir, "val", cfg.val_limit);
  auto test_set = load_split(ddir, "test", cfg.test_limit);
  if (train_set.size() == 0) throw IoError("no training split under " + ddir.string());
  carve_validation(train_set, val_set);
  auto result = train(cfg, train_set, val_set, dir, std::ref(log));
  log("best epoch " + std::to_string(result.best_epoch) + "  val_err " + std::to_string(result.best_val_err) + "%");
  if (test_set.size()) {
    auto ev = evaluate(result.model, test_set, cfg.tta, cfg.eval_batch);
    write_confusion(dir / "confusion.csv", ev);
    std::ostringstream os;
    os << "test_err = " << ev.error << "\ntest_count = " << ev.count << "\ntta = " << cfg.tta << '\n';
    write_text(dir / "result.txt", os.str());
    log("test error " + std::to_string(ev.error) + "% on " + std::to_string(ev.count) + " images");
  }
  return 0;
}

TrainConfig config_for_checkpoint(const Common& c, const fs::path& ckpt) {
  Common copy = c;
  if (copy.config.empty() && fs::exists(ckpt.parent_path() / "config.txt"))
    copy.config = (ckpt.parent_path() / "config.txt").string();
  return resolve(copy);
}

int cmd_eval(const Common& c, const std::string& ckpt, const std::string& split, int tta) {
  auto cfg = config_for_checkpoint(c, ckpt);
  if (tta > 0) cfg.tta = tta;
  const auto data = load_split(dataset_dir(cfg), split, split == "test" ? cfg.test_limit : 0);
  if (data.size() == 0) throw IoError("no '" + split + "' split under " + dataset_dir(cfg).string());
  set_num_threads(cfg.threads);
  auto model = load_model<float>(ckpt, cfg.network(data.height));
  const auto dir = make_run_dir(c, "eval");
  Log log(dir / "run.log");
  auto ev = evaluate(model, data, cfg.tta, cfg.eval_batch);
  write_confusion(dir / "confusion.csv", ev);
  std::ostringstream os;
  os << "checkpoint = " << ckpt << "\nsplit = " << split << "\ntta = " << cfg.tta << "\nerror = " << ev.error
     << "\ncount = " << ev.count << '\n';
  write_text(dir / "result.txt", os.str());
  log(split + " error " + std::to_string(ev.error) + "% (tta " + std::to_string(cfg.tta) + ", " +
      std::to_string(ev.count) + " images)");
  return 0;
}

int cmd_gradcheck(const Common& c) {
  set_num_threads(c.threads);
  const auto entries = gradcheck_suite(c.seed);
  bool ok = true;
  std::cout << std::left << std::setw(24) << "op" << std::setw(16) << "max_rel_error" << "status\n";
  for (const auto& e : entries) {
    const bool pass = e.result.max_rel_error < 1e-3;
    ok = ok && pass;
    std::cout << std::setw(24) << e.op << std::setw(16) << std::scientific << std::setprecision(3)
              << e.result.max_rel_error << std::defaultfloat << (pass ? "ok" : "FAIL") << '\n';
  }
  return ok ? 0 : 2;
}

int cmd_equivariance(const Common& c, const std::string& ckpt, std::size_t samples) {
  set_num_threads(c.threads);
  const auto dir = make_run_dir(c, "equivariance");
  EquivarianceReport report = library_report(c.seed);
  if (!ckpt.empty()) {
    auto cfg = config_for_checkpoint(c, ckpt);
    auto data = load_split(dataset_dir(cfg), "test", samples);
    if (data.size() == 0) throw IoError("no test split under " + dataset_dir(cfg).string());
    auto model = load_model<float>(ckpt, cfg.network(data.height));
    ModelCheckOptions opt;
    opt.samples = samples;
    report.add(check_model_equivariance(model, data, opt));
  }
  report.write_csv(dir / "report.csv");
  write_text(dir / "report.txt", report.summary());
  std::cout << report.summary();
  return report.all_pass() ? 0 : 2;
}

int cmd_ablate(const Common& c) {
  auto cfg = resolve(c);
  const auto dir = make_run_dir(c, "ablate-" + cfg.variant);
  Log log(dir / "run.log");
  write_text(dir / "config.txt", config_to_string(cfg));
  const auto ddir = dataset_dir(cfg);
  auto train_set = load_split(ddir, "train", cfg.train_limit);
  auto val_set = load_split(ddir, "val", cfg.val_limit);
  auto test_set = load_split(ddir, "test", cfg.test_limit);
  if (train_set.size() == 0 || test_set.size() == 0) throw IoError("need train and test splits under " + ddir.string());
  carve_validation(train_set, val_set);
  auto rows = ablate(cfg, train_set, val_set, test_set, dir, std::ref(log));
  std::ostringstream os;
  os << "config,mean_err,std_err,delta_vs_full\n";
  for (const auto& r : rows)
    os << r.name << ',' << r.mean() << ',' << r.stddev() << ',' << r.mean() - rows.front().mean() << '\n';
  write_text(dir / "ablation_summary.csv", os.str());
  log(os.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  keep_heap_memory();
  CLI::App app{"Polar transformer networks: data generation, training, evaluation and checks"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  Common common;
  std::string spec = "rotmnist", mnist, ckpt, split = "test";
  std::size_t train_n = 0, val_n = 0, test_n = 0, samples = 200;
  int tta = 0;

  auto* gen = app.add_subcommand("gen-data", "generate a dataset (IDX files and provenance CSV)");
  add_common(gen, common);
  gen->add_option("--spec", spec, "rotmnist, mnist-r, mnist-rts or sim2mnist");
  gen->add_option("--mnist", mnist, "directory with the MNIST IDX files (default $PTN_MNIST_DIR or $PTN_DATA_DIR/mnist)");
  gen->add_option("--train", train_n, "training items (0 keeps the preset)");
  gen->add_option("--val", val_n, "validation items (0 keeps the preset)");
  gen->add_option("--test", test_n, "test items (0 keeps the preset)");

  auto* tr = app.add_subcommand("train", "train a network; keys: " + [] {
    std::string s;
    for (const auto& k : config_keys()) s += (s.empty() ? "" : ", ") + k;
    return s;
  }());
  add_common(tr, common);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(ev, common);
  ev->add_option("--ckpt", ckpt, "checkpoint path")->required();
  ev->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--tta", tta, "test-time rotations (0 keeps the config value)");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every op; exit 0 iff all < 1e-3");
  add_common(gc, common);

  auto* eq = app.add_subcommand("equivariance", "library and (with --ckpt) trained-model equivariance report");
  add_common(eq, common);
  eq->add_option("--ckpt", ckpt, "trained PTN checkpoint");
  eq->add_option("--samples", samples, "test images used for model checks");

  auto* ab = app.add_subcommand("ablate", "full configuration against single-factor removals");
  add_common(ab, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen_data(common, spec, mnist, train_n, val_n, test_n);
    if (*tr) return cmd_train(common);
    if (*ev) return cmd_eval(common, ckpt, split, tta);
    if (*gc) return cmd_gradcheck(common);
    if (*eq) return cmd_equivariance(common, ckpt, samples);
    if (*ab) return cmd_ablate(common);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
