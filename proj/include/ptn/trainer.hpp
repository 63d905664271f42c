#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "ptn/datasets.hpp"
#include "ptn/network.hpp"
#include "ptn/optim.hpp"

namespace ptn {

/// Everything a run depends on. Serialized as `key = value` lines.
struct TrainConfig {
  std::string dataset = "rotmnist";
  std::string data_dir;  // generated dataset directory; empty means "<data root>/<dataset>"
  std::string variant = "ptn-s";
  int epochs = 50;
  int batch_size = 32;
  AdamConfig adam;
  std::uint64_t seed = 0;
  bool rotation_aug = true;
  double origin_shift = 0.05;
  bool wrap_padding = true;
  int tta = 1;
  int threads = 1;
  std::size_t train_limit = 0;  // 0: use every item
  std::size_t val_limit = 0;
  std::size_t test_limit = 0;
  int eval_batch = 100;
  int ablation_seeds = 3;

  NetworkConfig network(std::size_t input_size) const;
};

/// Sets one key. Throws ConfigError for unknown keys or unparsable values.
void apply_setting(TrainConfig& config, const std::string& key, const std::string& value);
/// Applies `key = value` lines; '#' starts a comment.
void apply_config_text(TrainConfig& config, const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);
/// Every key with its resolved value, one `key = value` per line.
std::string config_to_string(const TrainConfig& config);
std::vector<std::string> config_keys();

struct MetricsRow {
  int epoch = 0;
  double train_loss = 0;
  double train_err = 0;  // percent
  double val_err = 0;    // percent
  double seconds = 0;
};

struct EvalResult {
  double error = 0;  // percent
  std::size_t count = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

struct TrainResult {
  std::vector<MetricsRow> rows;
  int best_epoch = 0;
  double best_val_err = 100.0;
  Model<float> model;  // best-validation weights
};

using Logger = std::function<void(const std::string&)>;

/// Adam on softmax cross-entropy with validation-based model selection. Writes
/// metrics.csv and best.ckpt into `run_dir` when it is non-empty. Throws
/// DivergenceError when the loss stops being finite.
TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset& val_set,
                  const std::filesystem::path& run_dir, const Logger& log = {});

/// Classification error and confusion matrix; `tta` > 1 sums scores over rotations.
EvalResult evaluate(Model<float>& model, const Dataset& data, int tta = 1, int batch = 100);

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const MetricsRow& row);

/// Splits off the last 10% of `train` for validation when no validation split exists.
void carve_validation(Dataset& train, Dataset& val);

/// Mean distance between predicted polar origins and intensity centroids of the first `count` items.
double mean_origin_error(Model<float>& model, const Dataset& data, std::size_t count);

struct AblationRow {
  std::string name;
  std::vector<double> errors;  // one test error per seed
  double mean() const;
  double stddev() const;
};

/// Full configuration plus the three single-factor removals, each over
/// `config.ablation_seeds` seeds starting at `config.seed`.
std::vector<AblationRow> ablate(const TrainConfig& config, const Dataset& train_set, const Dataset& val_set,
                                const Dataset& test_set, const std::filesystem::path& run_dir, const Logger& log = {});

}  // namespace ptn
