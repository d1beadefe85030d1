#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "alsim/crowd.hpp"
#include "alsim/curvefit.hpp"
#include "alsim/dataset.hpp"
#include "alsim/selection.hpp"
#include "alsim/synth.hpp"

namespace alsim {

struct ConfigProblem {
  std::string key;
  std::string reason;
};

struct ClassifierConfig {
  int hidden_units = 0;
  int epochs = 50;
  int batch = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  TrainParams to_train_params() const {
    TrainParams params;
    params.hidden_units = hidden_units;
    params.epochs = epochs;
    params.batch_size = batch;
    params.adam = {learning_rate, beta1, beta2, epsilon};
    return params;
  }
};

/// Fully resolved experiment description. Every field holds its final value
/// after defaulting, so echoing this struct into the manifest documents
/// exactly what ran.
struct ExperimentConfig {
  std::string experiment;  // exp1_selection | exp2_crowd | curve_fit
  std::optional<std::string> pool_csv;
  std::optional<SynthConfig> pool_synth;

  std::vector<std::string> strategies = {"random", "tuple_cycle",
                                         "tuple_cycle_max_entropy"};
  int iterations = 10;
  int batch_size = 35;
  std::vector<std::string> metrics = {"accuracy", "macro_f1", "cross_entropy"};
  bool fit = false;
  std::string fit_metric = "accuracy";

  std::vector<std::string> conditions = {"cycling", "active"};
  std::vector<std::string> train_modes = {"one_hot", "soft"};
  std::vector<std::string> test_modes = {"one_hot", "soft"};
  std::vector<int> checkpoints = {3, 6, 9, 12, 15, 18, 21, 24, 30, 45, 75};
  std::string entropy_source = "drawn";
  int final_epochs_window = 50;

  int folds = 0;  // resolved per experiment below
  double train_fraction = 2.0 / 3.0;

  ClassifierConfig classifier;
  std::optional<std::string> base_pool_path;
  std::optional<double> base_pool_fraction;

  std::optional<std::string> input_metrics;  // curve_fit input
  std::string metric = "accuracy";           // curve_fit target column

  std::vector<std::uint64_t> seeds;
  std::string output_dir;
};

namespace detail {

/// Walks one JSON object with an allowlist; unconsumed keys become problems.
class ConfigReader {
 public:
  ConfigReader(const nlohmann::json& node, std::string prefix,
               std::vector<ConfigProblem>& problems)
      : node_(node), prefix_(std::move(prefix)), problems_(problems) {}

  bool has(const char* key) {
    return node_.is_object() && node_.contains(key);
  }

  const nlohmann::json* consume(const char* key) {
    consumed_.insert(key);
    if (!node_.is_object() || !node_.contains(key)) return nullptr;
    return &node_.at(key);
  }

  void problem(const std::string& key, const std::string& reason) {
    problems_.push_back({prefix_.empty() ? key : prefix_ + "." + key, reason});
  }

  template <typename T>
  void read(const char* key, T& out) {
    const nlohmann::json* value = consume(key);
    if (!value) return;
    read_value(key, *value, out);
  }

  template <typename T>
  void read_optional(const char* key, std::optional<T>& out) {
    const nlohmann::json* value = consume(key);
    if (!value) return;
    T parsed{};
    if (read_value(key, *value, parsed)) out = parsed;
  }

  void finish() {
    if (!node_.is_object()) return;
    for (const auto& [key, value] : node_.items()) {
      if (!consumed_.count(key)) problem(key, "unknown key");
    }
  }

  const nlohmann::json& node() const { return node_; }
  const std::string& prefix() const { return prefix_; }
  std::vector<ConfigProblem>& problems() { return problems_; }

 private:
  bool read_value(const char* key, const nlohmann::json& value, std::string& out) {
    if (!value.is_string()) {
      problem(key, "expected a string");
      return false;
    }
    out = value.get<std::string>();
    return true;
  }
  bool read_value(const char* key, const nlohmann::json& value, bool& out) {
    if (!value.is_boolean()) {
      problem(key, "expected a boolean");
      return false;
    }
    out = value.get<bool>();
    return true;
  }
  bool read_value(const char* key, const nlohmann::json& value, int& out) {
    if (!value.is_number_integer()) {
      problem(key, "expected an integer");
      return false;
    }
    out = value.get<int>();
    return true;
  }
  bool read_value(const char* key, const nlohmann::json& value, std::uint64_t& out) {
    if (!value.is_number_integer() || (value.is_number_integer() && value.get<long long>() < 0)) {
      problem(key, "expected a nonnegative integer");
      return false;
    }
    out = value.get<std::uint64_t>();
    return true;
  }
  bool read_value(const char* key, const nlohmann::json& value, double& out) {
    if (!value.is_number()) {
      problem(key, "expected a number");
      return false;
    }
    out = value.get<double>();
    return true;
  }
  template <typename T>
  bool read_value(const char* key, const nlohmann::json& value, std::vector<T>& out) {
    if (!value.is_array()) {
      problem(key, "expected an array");
      return false;
    }
    std::vector<T> parsed;
    for (const auto& element : value) {
      T item{};
      if (!read_value(key, element, item)) return false;
      parsed.push_back(std::move(item));
    }
    out = std::move(parsed);
    return true;
  }

  const nlohmann::json& node_;
  std::string prefix_;
  std::vector<ConfigProblem>& problems_;
  std::set<std::string> consumed_;
};

inline SynthConfig parse_synth_config(const nlohmann::json& node,
                                      const std::string& prefix,
                                      std::vector<ConfigProblem>& problems) {
  SynthConfig config;
  ConfigReader reader(node, prefix, problems);
  reader.read("class_count", config.class_count);
  reader.read("feature_dim", config.feature_dim);
  reader.read("frames_per_class", config.frames_per_class);
  reader.read("subjects", config.subjects);
  reader.read("cluster_separation", config.cluster_separation);
  reader.read("within_class_std", config.within_class_std);
  reader.read("auto_label_noise", config.auto_label_noise);
  reader.read("crowd_annotators", config.crowd_annotators);
  reader.read("crowd_confusion", config.crowd_confusion);
  reader.read("seed", config.seed);
  reader.finish();
  try {
    validate_synth_config(config);
  } catch (const std::exception& error) {
    problems.push_back({prefix, error.what()});
  }
  return config;
}

}  // namespace detail

inline nlohmann::json synth_config_to_json(const SynthConfig& config) {
  return nlohmann::json{{"class_count", config.class_count},
                        {"feature_dim", config.feature_dim},
                        {"frames_per_class", config.frames_per_class},
                        {"subjects", config.subjects},
                        {"cluster_separation", config.cluster_separation},
                        {"within_class_std", config.within_class_std},
                        {"auto_label_noise", config.auto_label_noise},
                        {"crowd_annotators", config.crowd_annotators},
                        {"crowd_confusion", config.crowd_confusion},
                        {"seed", config.seed}};
}

/// Parses and defaults a config document, collecting problems instead of
/// throwing. Unknown keys are problems: silent typos corrupt experiment
/// grids.
inline ExperimentConfig parse_config(const nlohmann::json& root,
                                     std::vector<ConfigProblem>& problems) {
  ExperimentConfig config;
  if (!root.is_object()) {
    problems.push_back({"config", "top-level JSON value must be an object"});
    return config;
  }
  detail::ConfigReader reader(root, "", problems);
  reader.read("experiment", config.experiment);
  if (config.experiment != "exp1_selection" && config.experiment != "exp2_crowd" &&
      config.experiment != "curve_fit") {
    reader.problem("experiment",
                   "must be one of exp1_selection, exp2_crowd, curve_fit");
  }

  if (const nlohmann::json* pool = reader.consume("pool")) {
    detail::ConfigReader pool_reader(*pool, "pool", problems);
    std::optional<std::string> csv_path;
    pool_reader.read_optional("csv", csv_path);
    const nlohmann::json* synth = pool_reader.consume("synth");
    pool_reader.finish();
    if (csv_path && synth) {
      reader.problem("pool", "exactly one of csv or synth, not both");
    } else if (csv_path) {
      config.pool_csv = csv_path;
    } else if (synth) {
      config.pool_synth = detail::parse_synth_config(*synth, "pool.synth", problems);
    } else {
      reader.problem("pool", "needs either csv or synth");
    }
  } else if (config.experiment != "curve_fit") {
    reader.problem("pool", "required for this experiment");
  }

  reader.read("strategies", config.strategies);
  for (const auto& name : config.strategies) {
    if (!parse_strategy(name)) reader.problem("strategies", "unknown strategy '" + name + "'");
  }
  reader.read("iterations", config.iterations);
  if (config.iterations < 1) reader.problem("iterations", "must be >= 1");
  reader.read("batch_size", config.batch_size);
  if (config.batch_size < 1) reader.problem("batch_size", "must be >= 1");
  reader.read("metrics", config.metrics);
  for (const auto& name : config.metrics) {
    if (name != "accuracy" && name != "macro_f1" && name != "cross_entropy") {
      reader.problem("metrics", "unknown metric '" + name + "'");
    }
  }
  reader.read("fit", config.fit);
  reader.read("fit_metric", config.fit_metric);

  reader.read("conditions", config.conditions);
  for (const auto& name : config.conditions) {
    if (name != "cycling" && name != "active") {
      reader.problem("conditions", "unknown condition '" + name + "'");
    }
  }
  auto check_modes = [&](const char* key, const std::vector<std::string>& modes) {
    for (const auto& name : modes) {
      if (name != "one_hot" && name != "soft") {
        reader.problem(key, "unknown mode '" + name + "'");
      }
    }
  };
  reader.read("train_modes", config.train_modes);
  check_modes("train_modes", config.train_modes);
  reader.read("test_modes", config.test_modes);
  check_modes("test_modes", config.test_modes);
  reader.read("checkpoints", config.checkpoints);
  try {
    validate_schedule(config.checkpoints);
  } catch (const std::exception& error) {
    reader.problem("checkpoints", error.what());
  }
  reader.read("entropy_source", config.entropy_source);
  if (config.entropy_source != "drawn" && config.entropy_source != "reference") {
    reader.problem("entropy_source", "must be 'drawn' or 'reference'");
  }
  reader.read("final_epochs_window", config.final_epochs_window);
  if (config.final_epochs_window < 1) reader.problem("final_epochs_window", "must be >= 1");

  config.folds = config.experiment == "exp2_crowd" ? 3 : 1;
  reader.read("folds", config.folds);
  if (config.folds < 1) reader.problem("folds", "must be >= 1");
  reader.read("train_fraction", config.train_fraction);
  if (!(config.train_fraction > 0.0 && config.train_fraction < 1.0)) {
    reader.problem("train_fraction", "must be in (0, 1)");
  }

  if (config.experiment == "exp2_crowd") config.classifier.epochs = 200;
  if (const nlohmann::json* classifier = reader.consume("classifier")) {
    detail::ConfigReader sub(*classifier, "classifier", problems);
    sub.read("hidden_units", config.classifier.hidden_units);
    sub.read("epochs", config.classifier.epochs);
    sub.read("batch", config.classifier.batch);
    sub.read("learning_rate", config.classifier.learning_rate);
    sub.read("beta1", config.classifier.beta1);
    sub.read("beta2", config.classifier.beta2);
    sub.read("epsilon", config.classifier.epsilon);
    sub.finish();
    if (config.classifier.hidden_units < 0) sub.problem("hidden_units", "must be >= 0");
    if (config.classifier.epochs < 0) sub.problem("epochs", "must be >= 0");
    if (config.classifier.batch < 1) sub.problem("batch", "must be >= 1");
  }

  if (const nlohmann::json* base = reader.consume("base_pool")) {
    if (base->is_string()) {
      config.base_pool_path = base->get<std::string>();
    } else if (base->is_number()) {
      config.base_pool_fraction = base->get<double>();
      if (*config.base_pool_fraction < 0.0 || *config.base_pool_fraction >= 1.0) {
        reader.problem("base_pool", "fraction must be in [0, 1)");
      }
    } else {
      reader.problem("base_pool", "expected a csv path or a fraction");
    }
  }

  reader.read_optional("input_metrics", config.input_metrics);
  reader.read("metric", config.metric);
  reader.read("seeds", config.seeds);
  if (config.seeds.empty()) reader.problem("seeds", "must be a nonempty array");
  reader.read("output_dir", config.output_dir);
  if (config.output_dir.empty()) reader.problem("output_dir", "required");
  reader.finish();

  if (config.experiment == "curve_fit" && !config.input_metrics) {
    problems.push_back({"input_metrics", "required for curve_fit"});
  }
  return config;
}

/// Static validation: parse problems plus the cheap semantic checks that need
/// a look at the referenced files.
inline std::vector<ConfigProblem> validate_config(const nlohmann::json& root) {
  std::vector<ConfigProblem> problems;
  const ExperimentConfig config = parse_config(root, problems);
  if (!problems.empty()) return problems;

  if (config.pool_csv) {
    std::ifstream in(*config.pool_csv);
    if (!in) {
      problems.push_back({"pool.csv", "cannot open '" + *config.pool_csv + "'"});
    } else if (config.experiment == "exp2_crowd") {
      std::string header;
      std::getline(in, header);
      if (header.find("count_0") == std::string::npos) {
        problems.push_back(
            {"pool.csv", "exp2_crowd needs crowd counts; '" + *config.pool_csv +
                             "' has no count_"
                             " columns"});
      }
    }
  }
  if (config.pool_synth && config.experiment == "exp2_crowd" &&
      config.pool_synth->crowd_annotators < 1) {
    problems.push_back(
        {"pool.synth.crowd_annotators", "exp2_crowd needs crowd counts; set >= 1"});
  }
  if (config.base_pool_path) {
    std::ifstream in(*config.base_pool_path);
    if (!in) {
      problems.push_back({"base_pool", "cannot open '" + *config.base_pool_path + "'"});
    }
  }
  if (config.input_metrics) {
    std::ifstream in(*config.input_metrics);
    if (!in) {
      problems.push_back(
          {"input_metrics", "cannot open '" + *config.input_metrics + "'"});
    }
  }
  return problems;
}

/// The resolved config as JSON, every default included.
inline nlohmann::json resolved_config_json(const ExperimentConfig& config) {
  nlohmann::json out;
  out["experiment"] = config.experiment;
  if (config.pool_csv) out["pool"] = {{"csv", *config.pool_csv}};
  if (config.pool_synth) out["pool"] = {{"synth", synth_config_to_json(*config.pool_synth)}};
  out["seeds"] = config.seeds;
  out["output_dir"] = config.output_dir;
  out["folds"] = config.folds;
  out["train_fraction"] = config.train_fraction;
  out["classifier"] = {{"hidden_units", config.classifier.hidden_units},
                       {"epochs", config.classifier.epochs},
                       {"batch", config.classifier.batch},
                       {"learning_rate", config.classifier.learning_rate},
                       {"beta1", config.classifier.beta1},
                       {"beta2", config.classifier.beta2},
                       {"epsilon", config.classifier.epsilon}};
  if (config.experiment == "exp1_selection") {
    out["strategies"] = config.strategies;
    out["iterations"] = config.iterations;
    out["batch_size"] = config.batch_size;
    out["metrics"] = config.metrics;
    out["fit"] = config.fit;
    if (config.fit) out["fit_metric"] = config.fit_metric;
    if (config.base_pool_path) out["base_pool"] = *config.base_pool_path;
    if (config.base_pool_fraction) out["base_pool"] = *config.base_pool_fraction;
  } else if (config.experiment == "exp2_crowd") {
    out["conditions"] = config.conditions;
    out["train_modes"] = config.train_modes;
    out["test_modes"] = config.test_modes;
    out["checkpoints"] = config.checkpoints;
    out["entropy_source"] = config.entropy_source;
    out["final_epochs_window"] = config.final_epochs_window;
  } else {
    out["input_metrics"] = config.input_metrics ? *config.input_metrics : "";
    out["metric"] = config.metric;
  }
  return out;
}

namespace detail {

inline int worker_count() {
  if (const char* env = std::getenv("ALSIM_WORKERS")) {
    const int requested = std::atoi(env);
    if (requested >= 1) return requested;
  }
  const unsigned hardware = std::thread::hardware_concurrency();
  return hardware == 0 ? 1 : static_cast<int>(hardware);
}

/// Runs the tasks on a small pool and rethrows the first failure. Tasks fill
/// pre-allocated result slots, so completion order never affects output.
inline void run_tasks(std::vector<std::function<void()>>& tasks) {
  const int workers = std::min<int>(worker_count(), static_cast<int>(tasks.size()));
  if (workers <= 1) {
    for (auto& task : tasks) task();
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(tasks.size());
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (;;) {
        const std::size_t index = next.fetch_add(1);
        if (index >= tasks.size()) return;
        try {
          tasks[index]();
        } catch (...) {
          errors[index] = std::current_exception();
        }
      }
    });
  }
  for (auto& thread : threads) thread.join();
  for (const auto& error : errors) {
    if (error) std::rethrow_exception(error);
  }
}

struct FitRow {
  std::string metric;
  std::string strategy;
  int fold = 0;
  std::optional<std::uint64_t> seed;
  PowerLawFit fit;
  std::size_t n_points = 0;
};

inline void write_fit_rows(const std::vector<FitRow>& rows, const std::string& path) {
  csv::Writer writer(path);
  writer.write_row({"metric", "a", "b", "c", "residual_rms", "n_points", "strategy",
                    "fold", "seed"});
  for (const auto& row : rows) {
    writer.write_row({row.metric, csv::format_double(row.fit.params.a),
                      csv::format_double(row.fit.params.b),
                      csv::format_double(row.fit.params.c),
                      csv::format_double(row.fit.residual_rms),
                      std::to_string(row.n_points), row.strategy,
                      std::to_string(row.fold),
                      row.seed ? std::to_string(*row.seed) : ""});
  }
}

/// Groups metric records by (strategy, fold, seed) and fits each group's
/// (labels_used, mean) series. Saturated duplicate x values keep their first
/// occurrence.
inline std::vector<FitRow> fit_metric_groups(const std::vector<MetricRecord>& records,
                                             const std::string& metric) {
  std::map<std::tuple<std::string, int, std::optional<std::uint64_t>>,
           std::map<long long, double>>
      groups;
  for (const auto& record : records) {
    if (record.metric != metric) continue;
    auto& series = groups[{record.strategy, record.fold, record.seed_tag}];
    series.emplace(record.labels_used, record.mean);  // first occurrence wins
  }
  std::vector<FitRow> rows;
  for (const auto& [key, series] : groups) {
    std::vector<std::pair<double, double>> points;
    points.reserve(series.size());
    for (const auto& [x, y] : series) {
      points.emplace_back(static_cast<double>(x), y);
    }
    if (points.size() < 4) continue;
    FitRow row;
    row.metric = metric;
    row.strategy = std::get<0>(key);
    row.fold = std::get<1>(key);
    row.seed = std::get<2>(key);
    row.fit = fit_power_law(points);
    row.n_points = points.size();
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Pool build_pool(const ExperimentConfig& config) {
  if (config.pool_csv) return load_pool(*config.pool_csv);
  if (config.pool_synth) return generate_pool(*config.pool_synth);
  throw std::runtime_error("no pool source configured");
}

/// The fold's training subjects become the selection pool; its test subjects
/// become the evaluation set. An optional base pool pre-labels frames before
/// the first iteration.
struct Exp1Cell {
  std::uint64_t seed = 0;
  int fold_index = 0;
  std::string strategy;
};

inline std::vector<MetricRecord> run_exp1_cell(
    const Pool& pool, const ExperimentConfig& config, const Exp1Cell& cell,
    const std::optional<Pool>& base_pool, std::vector<SelectionEntry>& selections) {
  const auto folds = split_folds(pool, config.folds, config.train_fraction,
                                 derive_seed(cell.seed, "exp1/folds"));
  const FoldSpec& fold = folds.at(cell.fold_index);

  Pool al_pool;
  al_pool.class_count = pool.class_count;
  al_pool.feature_dim = pool.feature_dim;
  al_pool.class_names = pool.class_names;
  for (const Frame& frame : pool.frames) {
    if (fold.train_subjects.count(frame.subject_id)) al_pool.frames.push_back(frame);
  }
  std::vector<const Frame*> eval_frames;  // outlives run via `pool`
  for (const Frame& frame : pool.frames) {
    if (fold.test_subjects.count(frame.subject_id)) eval_frames.push_back(&frame);
  }

  if (base_pool) {
    for (const Frame& frame : base_pool->frames) {
      Frame copy = frame;
      copy.frame_id = "base/" + copy.frame_id;
      al_pool.labeled_ids.insert(copy.frame_id);
      al_pool.frames.push_back(std::move(copy));
    }
    validate_pool(al_pool);
  } else if (config.base_pool_fraction && *config.base_pool_fraction > 0.0) {
    Rng rng(derive_seed(cell.seed,
                        "exp1/base/fold=" + std::to_string(cell.fold_index)));
    std::vector<std::string> ids;
    for (const Frame& frame : al_pool.frames) ids.push_back(frame.frame_id);
    rng.shuffle(ids);
    const std::size_t take = static_cast<std::size_t>(
        *config.base_pool_fraction * static_cast<double>(ids.size()));
    for (std::size_t i = 0; i < take; ++i) al_pool.labeled_ids.insert(ids[i]);
  }

  StrategySpec spec;
  spec.kind = *parse_strategy(cell.strategy);
  spec.seed = derive_seed(cell.seed, "exp1/run/fold=" + std::to_string(cell.fold_index) +
                                         "/strategy=" + cell.strategy);
  const ActiveLearningResult result =
      run_active_learning(std::move(al_pool), spec, config.iterations,
                          config.batch_size, eval_frames,
                          config.classifier.to_train_params());

  selections = result.selections;
  std::vector<MetricRecord> records;
  for (const ActiveLearningRow& row : result.metrics) {
    for (const std::string& metric : config.metrics) {
      MetricRecord record;
      record.iteration = row.iteration;
      record.labels_used = row.labels_used;
      record.strategy = cell.strategy;
      record.fold = cell.fold_index;
      record.metric = metric;
      record.mean = metric == "accuracy"   ? row.accuracy
                    : metric == "macro_f1" ? row.macro_f1
                                           : row.mean_cross_entropy;
      record.std_dev = 0.0;
      record.seed_tag = cell.seed;
      records.push_back(std::move(record));
    }
  }
  return records;
}

}  // namespace detail

struct RunOutcome {
  int exit_code = 0;
  std::vector<std::string> messages;
};

/// Executes the configured experiment over every (seed x fold x strategy or
/// condition x mode) cell, in parallel up to ALSIM_WORKERS, and writes the
/// artifact bundle: metrics.csv, selections.csv or drawn_counts.csv,
/// fits.csv when requested, and manifest.json echoing the resolved config.
inline RunOutcome run_experiment(const nlohmann::json& root) {
  RunOutcome outcome;
  std::vector<ConfigProblem> problems = validate_config(root);
  if (!problems.empty()) {
    for (const auto& problem : problems) {
      outcome.messages.push_back("config error: " + problem.key + ": " + problem.reason);
    }
    outcome.exit_code = 1;
    return outcome;
  }
  std::vector<ConfigProblem> ignored;
  const ExperimentConfig config = parse_config(root, ignored);

  namespace fs = std::filesystem;
  fs::create_directories(config.output_dir);
  const auto out_path = [&](const char* name) {
    return (fs::path(config.output_dir) / name).string();
  };

  if (config.experiment == "curve_fit") {
    const auto records = load_metrics(*config.input_metrics);
    const auto fit_rows = detail::fit_metric_groups(records, config.metric);
    detail::write_fit_rows(fit_rows, out_path("fits.csv"));
    std::ofstream manifest(out_path("manifest.json"), std::ios::binary);
    manifest << resolved_config_json(config).dump(2) << '\n';
    outcome.messages.push_back("wrote " + std::to_string(fit_rows.size()) +
                               " fits to " + out_path("fits.csv"));
    return outcome;
  }

  const Pool pool = detail::build_pool(config);
  std::optional<Pool> base_pool;
  if (config.base_pool_path) {
    base_pool = load_pool(*config.base_pool_path);
    if (base_pool->feature_dim != pool.feature_dim ||
        base_pool->class_count != pool.class_count) {
      outcome.messages.push_back(
          "config error: base_pool: shape mismatch with the main pool");
      outcome.exit_code = 1;
      return outcome;
    }
  }

  std::vector<MetricRecord> all_metrics;
  if (config.experiment == "exp1_selection") {
    struct CellResult {
      std::vector<MetricRecord> metrics;
      std::vector<SelectionEntry> selections;
      detail::Exp1Cell cell;
    };
    std::vector<detail::Exp1Cell> cells;
    for (std::uint64_t seed : config.seeds) {
      for (int fold = 0; fold < config.folds; ++fold) {
        for (const auto& strategy : config.strategies) {
          cells.push_back({seed, fold, strategy});
        }
      }
    }
    std::vector<CellResult> results(cells.size());
    std::vector<std::function<void()>> tasks;
    tasks.reserve(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      tasks.push_back([&, i] {
        try {
          results[i].cell = cells[i];
          results[i].metrics = detail::run_exp1_cell(pool, config, cells[i], base_pool,
                                                     results[i].selections);
        } catch (const std::exception& error) {
          throw std::runtime_error(
              "cell seed=" + std::to_string(cells[i].seed) + " fold=" +
              std::to_string(cells[i].fold_index) + " strategy=" + cells[i].strategy +
              ": " + error.what());
        }
      });
    }
    detail::run_tasks(tasks);

    csv::Writer selections(out_path("selections.csv"));
    selections.write_row({"iteration", "rank", "frame_id", "tuple_auto_label",
                          "tuple_subject", "entropy", "seed", "strategy", "fold"});
    for (const auto& result : results) {
      for (const auto& record : result.metrics) all_metrics.push_back(record);
      for (const auto& entry : result.selections) {
        selections.write_row(
            {std::to_string(entry.iteration), std::to_string(entry.rank),
             entry.frame_id,
             entry.tuple_auto_label ? std::to_string(*entry.tuple_auto_label) : "",
             entry.tuple_subject,
             entry.entropy ? csv::format_double(*entry.entropy) : "",
             std::to_string(result.cell.seed), result.cell.strategy,
             std::to_string(result.cell.fold_index)});
      }
    }
    if (config.fit) {
      const auto fit_rows = detail::fit_metric_groups(all_metrics, config.fit_metric);
      detail::write_fit_rows(fit_rows, out_path("fits.csv"));
    }
  } else {
    struct Exp2Cell {
      std::uint64_t seed;
      std::string condition;
      std::string train_mode;
      std::string test_mode;
    };
    std::vector<Exp2Cell> cells;
    for (std::uint64_t seed : config.seeds) {
      for (const auto& condition : config.conditions) {
        for (const auto& train_mode : config.train_modes) {
          for (const auto& test_mode : config.test_modes) {
            cells.push_back({seed, condition, train_mode, test_mode});
          }
        }
      }
    }
    std::vector<CrowdExperimentResult> results(cells.size());
    std::vector<std::function<void()>> tasks;
    tasks.reserve(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      tasks.push_back([&, i] {
        const Exp2Cell& cell = cells[i];
        try {
          const auto folds = split_folds(pool, config.folds, config.train_fraction,
                                         derive_seed(cell.seed, "exp2/folds"));
          CrowdExperimentConfig crowd_config;
          crowd_config.schedule = config.checkpoints;
          crowd_config.condition = cell.condition == "cycling"
                                       ? CrowdCondition::cycling
                                       : CrowdCondition::active;
          crowd_config.train_mode =
              cell.train_mode == "soft" ? TargetMode::soft : TargetMode::one_hot;
          crowd_config.test_mode =
              cell.test_mode == "soft" ? TargetMode::soft : TargetMode::one_hot;
          crowd_config.train = config.classifier.to_train_params();
          crowd_config.final_epochs_window = config.final_epochs_window;
          crowd_config.entropy_source = config.entropy_source == "reference"
                                            ? EntropySource::reference
                                            : EntropySource::drawn;
          results[i] =
              run_crowd_experiment(pool, folds, crowd_config,
                                   derive_seed(cell.seed, "exp2/run"));
          for (auto& record : results[i].metrics) record.seed_tag = cell.seed;
        } catch (const std::exception& error) {
          throw std::runtime_error("cell seed=" + std::to_string(cell.seed) +
                                   " condition=" + cell.condition + " train_mode=" +
                                   cell.train_mode + " test_mode=" + cell.test_mode +
                                   ": " + error.what());
        }
      });
    }
    detail::run_tasks(tasks);

    csv::Writer drawn(out_path("drawn_counts.csv"));
    std::vector<std::string> header = {"checkpoint", "fold", "condition", "frame_id"};
    for (int c = 0; c < pool.class_count; ++c) header.push_back("count_" + std::to_string(c));
    header.push_back("seed");
    drawn.write_row(header);
    for (std::size_t i = 0; i < cells.size(); ++i) {
      for (const auto& record : results[i].metrics) all_metrics.push_back(record);
      // Sampling is mode-independent, so one mode pair per condition carries
      // the drawn-count log for all four.
      if (cells[i].train_mode != config.train_modes.front() ||
          cells[i].test_mode != config.test_modes.front()) {
        continue;
      }
      for (const auto& row : results[i].drawn_log) {
        std::vector<std::string> fields = {std::to_string(row.checkpoint),
                                           std::to_string(row.fold), row.condition,
                                           row.frame_id};
        for (long long count : row.drawn) fields.push_back(std::to_string(count));
        fields.push_back(std::to_string(cells[i].seed));
        drawn.write_row(fields);
      }
    }
  }

  save_metrics(all_metrics, out_path("metrics.csv"));
  std::ofstream manifest(out_path("manifest.json"), std::ios::binary);
  manifest << resolved_config_json(config).dump(2) << '\n';
  outcome.messages.push_back("wrote " + std::to_string(all_metrics.size()) +
                             " metric rows to " + out_path("metrics.csv"));
  return outcome;
}

inline nlohmann::json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  nlohmann::json root;
  try {
    in >> root;
  } catch (const std::exception& error) {
    throw std::runtime_error("config '" + path + "': " + error.what());
  }
  return root;
}

}  // namespace alsim
