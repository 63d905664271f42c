#include "ptn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "ptn/checkpoint.hpp"
#include "ptn/errors.hpp"
#include "ptn/parallel.hpp"

namespace ptn {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename U>
U parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  U v{};
  in >> v;
  if (in.fail() || !in.eof()) throw ConfigError("'" + key + "': cannot parse '" + value + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError("'" + key + "': expected true or false, got '" + value + "'");
}

template <typename U>
U positive(const std::string& key, U v) {
  if (!(v > 0)) throw ConfigError("'" + key + "' must be positive");
  return v;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

NetworkConfig TrainConfig::network(std::size_t input_size) const {
  auto net = NetworkConfig::make(parse_variant(variant), input_size, wrap_padding);
  net.augmentation.rotation = rotation_aug;
  net.augmentation.origin_shift = origin_shift;
  net.augmentation.test_time_rotations = tta;
  return net;
}

std::vector<std::string> config_keys() {
  return {"dataset",     "data_dir",     "variant",       "epochs",     "batch_size",  "lr",
          "beta1",       "beta2",        "adam_epsilon",  "seed",       "rotation_aug", "origin_shift",
          "wrap_padding", "tta",         "threads",       "train_limit", "val_limit",  "test_limit",
          "eval_batch",  "ablation_seeds"};
}

void apply_setting(TrainConfig& c, const std::string& raw_key, const std::string& raw_value) {
  const std::string key = trim(raw_key), value = trim(raw_value);
  if (key == "dataset") {
    DatasetSpec::preset(value);
    c.dataset = value;
  } else if (key == "data_dir") {
    c.data_dir = value;
  } else if (key == "variant") {
    parse_variant(value);
    c.variant = value;
  } else if (key == "epochs") {
    c.epochs = positive(key, parse_number<int>(key, value));
  } else if (key == "batch_size") {
    c.batch_size = positive(key, parse_number<int>(key, value));
  } else if (key == "lr") {
    c.adam.lr = positive(key, parse_number<double>(key, value));
  } else if (key == "beta1") {
    c.adam.beta1 = parse_number<double>(key, value);
  } else if (key == "beta2") {
    c.adam.beta2 = parse_number<double>(key, value);
  } else if (key == "adam_epsilon") {
    c.adam.epsilon = positive(key, parse_number<double>(key, value));
  } else if (key == "seed") {
    c.seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "rotation_aug") {
    c.rotation_aug = parse_bool(key, value);
  } else if (key == "origin_shift") {
    c.origin_shift = parse_number<double>(key, value);
    if (c.origin_shift < 0) throw ConfigError("'origin_shift' must be non-negative");
  } else if (key == "wrap_padding") {
    c.wrap_padding = parse_bool(key, value);
  } else if (key == "tta") {
    c.tta = positive(key, parse_number<int>(key, value));
  } else if (key == "threads") {
    c.threads = positive(key, parse_number<int>(key, value));
  } else if (key == "train_limit") {
    c.train_limit = parse_number<std::size_t>(key, value);
  } else if (key == "val_limit") {
    c.val_limit = parse_number<std::size_t>(key, value);
  } else if (key == "test_limit") {
    c.test_limit = parse_number<std::size_t>(key, value);
  } else if (key == "eval_batch") {
    c.eval_batch = positive(key, parse_number<int>(key, value));
  } else if (key == "ablation_seeds") {
    c.ablation_seeds = positive(key, parse_number<int>(key, value));
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
  if (c.adam.beta1 < 0 || c.adam.beta1 >= 1 || c.adam.beta2 < 0 || c.adam.beta2 >= 1)
    throw ConfigError("Adam betas must lie in [0, 1)");
}

void apply_config_text(TrainConfig& config, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    try {
      apply_setting(config, line.substr(0, eq), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  TrainConfig c;
  apply_config_text(c, ss.str());
  return c;
}

std::string config_to_string(const TrainConfig& c) {
  std::ostringstream os;
  os << "dataset = " << c.dataset << '\n'
     << "data_dir = " << c.data_dir << '\n'
     << "variant = " << c.variant << '\n'
     << "epochs = " << c.epochs << '\n'
     << "batch_size = " << c.batch_size << '\n'
     << "lr = " << fmt(c.adam.lr) << '\n'
     << "beta1 = " << fmt(c.adam.beta1) << '\n'
     << "beta2 = " << fmt(c.adam.beta2) << '\n'
     << "adam_epsilon = " << fmt(c.adam.epsilon) << '\n'
     << "seed = " << c.seed << '\n'
     << "rotation_aug = " << (c.rotation_aug ? "true" : "false") << '\n'
     << "origin_shift = " << fmt(c.origin_shift) << '\n'
     << "wrap_padding = " << (c.wrap_padding ? "true" : "false") << '\n'
     << "tta = " << c.tta << '\n'
     << "threads = " << c.threads << '\n'
     << "train_limit = " << c.train_limit << '\n'
     << "val_limit = " << c.val_limit << '\n'
     << "test_limit = " << c.test_limit << '\n'
     << "eval_batch = " << c.eval_batch << '\n'
     << "ablation_seeds = " << c.ablation_seeds << '\n';
  return os.str();
}

void write_metrics_header(std::ostream& out) { out << "epoch,train_loss,train_err,val_err,seconds\n"; }

void write_metrics_row(std::ostream& out, const MetricsRow& r) {
  out << r.epoch << ',' << std::setprecision(9) << r.train_loss << ',' << r.train_err << ',' << r.val_err << ','
      << std::setprecision(6) << r.seconds << '\n';
}

void carve_validation(Dataset& train_set, Dataset& val_set) {
  if (val_set.size() > 0) return;
  const std::size_t n_val = train_set.size() / 10;
  const std::size_t n_train = train_set.size() - n_val;
  val_set = train_set.slice(n_train, n_val);
  train_set = train_set.slice(0, n_train);
}

EvalResult evaluate(Model<float>& model, const Dataset& data, int tta, int batch) {
  if (data.size() == 0) throw ArgumentError("evaluate: empty dataset");
  if (data.height != model.config.input_size || data.width != model.config.input_size)
    throw ConfigError("evaluate: images are " + std::to_string(data.height) + "x" + std::to_string(data.width) +
                      ", model expects " + std::to_string(model.config.input_size));
  const std::size_t k = model.config.classes;
  EvalResult r;
  r.count = data.size();
  r.confusion.assign(k, std::vector<std::size_t>(k, 0));
  std::size_t wrong = 0;
  const auto all = iota_indices(data.size());
  for (std::size_t b = 0; b < data.size(); b += static_cast<std::size_t>(batch)) {
    const std::size_t e = std::min(data.size(), b + static_cast<std::size_t>(batch));
    auto images = data.images(std::span(all).subspan(b, e - b));
    auto pred = predict_tta(model, images, tta);
    for (std::size_t i = b; i < e; ++i) {
      const int p = pred[i - b];
      r.confusion[static_cast<std::size_t>(data.labels[i])][static_cast<std::size_t>(p)]++;
      wrong += p != data.labels[i];
    }
  }
  r.error = 100.0 * static_cast<double>(wrong) / static_cast<double>(data.size());
  return r;
}

TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset& val_set,
                  const std::filesystem::path& run_dir, const Logger& log) {
  if (train_set.size() == 0) throw ArgumentError("train: empty training set");
  if (val_set.size() == 0) throw ArgumentError("train: empty validation set");
  if (train_set.height != train_set.width) throw ConfigError("train: images must be square");
  set_num_threads(config.threads);
  const auto net = config.network(train_set.height);
  TrainResult result;
  auto model = build<float>(net, config.seed);
  result.model = model.cast<float>();
  auto params = model.parameters();
  AdamState<float> adam;
  std::mt19937_64 rng(config.seed * 0x9e3779b97f4a7c15ULL + 1);

  std::ofstream metrics;
  if (!run_dir.empty()) {
    std::filesystem::create_directories(run_dir);
    metrics.open(run_dir / "metrics.csv");
    if (!metrics) throw IoError("cannot write " + (run_dir / "metrics.csv").string());
    write_metrics_header(metrics);
  }
  if (log)
    log(variant_name(net.variant) + ": " + std::to_string(model.parameter_count()) + " parameters, " +
        std::to_string(train_set.size()) + " training images");

  auto order = iota_indices(train_set.size());
  const auto batch = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    std::size_t wrong = 0;
    for (std::size_t b = 0; b < order.size(); b += batch) {
      const std::size_t e = std::min(order.size(), b + batch);
      auto span = std::span(order).subspan(b, e - b);
      auto images = train_set.images(span);
      if (config.rotation_aug) images = augment_rotation(images, rng);
      std::vector<int> labels;
      for (auto i : span) labels.push_back(train_set.labels[i]);

      Tape<float> tape;
      auto logits = forward_logits(tape, model, Var<float>(std::move(images)), Mode::train, &rng);
      auto loss = softmax_cross_entropy(tape, logits, std::span<const int>(labels));
      const double lv = loss.value()[0];
      if (!std::isfinite(lv))
        throw DivergenceError("loss became " + std::to_string(lv) + " at epoch " + std::to_string(epoch) +
                              ", batch starting at " + std::to_string(b) + " (lr " + fmt(config.adam.lr) + ")");
      for (auto& p : params) p.zero_grad();
      backward(loss, tape);
      adam_step(params, adam, config.adam);
      loss_sum += lv * static_cast<double>(e - b);
      auto pred = argmax_rows(logits.value());
      for (std::size_t i = 0; i < pred.size(); ++i) wrong += pred[i] != labels[i];
    }
    MetricsRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(order.size());
    row.train_err = 100.0 * static_cast<double>(wrong) / static_cast<double>(order.size());
    row.val_err = evaluate(model, val_set, 1, config.eval_batch).error;
    row.seconds = seconds_since(t0);
    result.rows.push_back(row);
    if (row.val_err < result.best_val_err || result.best_epoch == 0) {
      result.best_val_err = row.val_err;
      result.best_epoch = epoch;
      result.model = model.cast<float>();
      if (!run_dir.empty()) save_model(run_dir / "best.ckpt", model);
    }
    if (metrics) {
      write_metrics_row(metrics, row);
      metrics.flush();
    }
    if (log) {
      std::ostringstream os;
      os << "epoch " << epoch << "/" << config.epochs << "  loss " << std::setprecision(4) << row.train_loss
         << "  train_err " << row.train_err << "%  val_err " << row.val_err << "%  " << std::setprecision(3)
         << row.seconds << "s";
      log(os.str());
    }
  }
  return result;
}

double mean_origin_error(Model<float>& model, const Dataset& data, std::size_t count) {
  if (!is_ptn(model.config.variant)) throw ConfigError("origin error needs a PTN model");
  count = std::min(count, data.size());
  double total = 0;
  const auto all = iota_indices(count);
  for (std::size_t b = 0; b < count; b += 100) {
    const std::size_t e = std::min(count, b + 100);
    auto images = data.images(std::span(all).subspan(b, e - b));
    Tape<float> tape;
    tape.set_recording(false);
    auto trace = forward_ptn(tape, model, Var<float>(images), Mode::eval);
    const std::size_t h = data.height, w = data.width;
    for (std::size_t i = 0; i < e - b; ++i) {
      double m = 0, cx = 0, cy = 0;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double v = images[(i * h + y) * w + x];
          m += v, cx += v * static_cast<double>(x), cy += v * static_cast<double>(y);
        }
      if (m <= 0) continue;
      total += std::hypot(trace.origin.value()[i * 2] - cx / m, trace.origin.value()[i * 2 + 1] - cy / m);
    }
  }
  return total / static_cast<double>(count);
}

double AblationRow::mean() const {
  return std::accumulate(errors.begin(), errors.end(), 0.0) / static_cast<double>(errors.size());
}

double AblationRow::stddev() const {
  if (errors.size() < 2) return 0.0;
  const double m = mean();
  double s = 0;
  for (double e : errors) s += (e - m) * (e - m);
  return std::sqrt(s / static_cast<double>(errors.size() - 1));
}

std::vector<AblationRow> ablate(const TrainConfig& config, const Dataset& train_set, const Dataset& val_set,
                                const Dataset& test_set, const std::filesystem::path& run_dir, const Logger& log) {
  struct Variation {
    std::string name;
    std::function<void(TrainConfig&)> apply;
  };
  const std::vector<Variation> variations = {
      {"full", [](TrainConfig&) {}},
      {"no-origin-aug", [](TrainConfig& c) { c.origin_shift = 0.0; }},
      {"no-rotation-aug", [](TrainConfig& c) { c.rotation_aug = false; }},
      {"no-wrap", [](TrainConfig& c) { c.wrap_padding = false; }},
  };
  std::vector<AblationRow> rows;
  std::ofstream csv;
  if (!run_dir.empty()) {
    std::filesystem::create_directories(run_dir);
    csv.open(run_dir / "ablation.csv");
    csv << "config,seed,test_err\n";
  }
  for (const auto& v : variations) {
    AblationRow row{v.name, {}};
    for (int s = 0; s < config.ablation_seeds; ++s) {
      TrainConfig c = config;
      c.seed = config.seed + static_cast<std::uint64_t>(s);
      v.apply(c);
      const auto dir = run_dir.empty() ? run_dir : run_dir / (v.name + "-seed" + std::to_string(c.seed));
      if (log) log("ablation " + v.name + " seed " + std::to_string(c.seed));
      auto result = train(c, train_set, val_set, dir, log);
      const double err = evaluate(result.model, test_set, 1, c.eval_batch).error;
      row.errors.push_back(err);
      if (csv) csv << v.name << ',' << c.seed << ',' << err << std::endl;
      if (log) log("ablation " + v.name + " seed " + std::to_string(c.seed) + ": test error " + fmt(err) + "%");
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace ptn
