#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "alsim/csv.hpp"
#include "alsim/frame.hpp"
#include "alsim/rng.hpp"

namespace alsim {

/// Column mapping hints for load_pool. The header row declares the columns;
/// the schema only carries what cannot be read off the header.
struct PoolSchema {
  std::optional<int> class_count;  // overrides inference from the header
};

namespace detail {

inline std::string row_error(std::size_t line, const std::string& column,
                             const std::string& what) {
  return "row " + std::to_string(line) + " column '" + column + "': " + what;
}

inline std::optional<int> parse_label_cell(const std::string& cell,
                                           std::size_t line,
                                           const std::string& column,
                                           int class_count) {
  if (cell.empty()) return std::nullopt;
  long long value = 0;
  if (!csv::try_parse_ll(cell, value)) {
    throw std::runtime_error(row_error(line, column, "non-integer label '" + cell + "'"));
  }
  if (value < 0 || value >= class_count) {
    throw std::runtime_error(row_error(
        line, column,
        "label " + cell + " outside [0, " + std::to_string(class_count) + ")"));
  }
  return static_cast<int>(value);
}

}  // namespace detail

/// Loads a pool from CSV. Header layout:
///   frame_id,subject_id,auto_label,true_label,f_0..f_{D-1}
///   [,count_0..count_{C-1}][,attr:<name>...][,labeled]
/// Missing labels are empty cells. Column order is free; names are binding.
inline Pool load_pool(const std::string& path, const PoolSchema& schema = {}) {
  const auto rows = csv::read_rows(path);
  const auto& header = rows.front();

  int frame_id_col = -1, subject_col = -1, auto_col = -1, true_col = -1,
      labeled_col = -1;
  std::vector<int> feature_cols;   // index i -> column of f_i
  std::vector<int> count_cols;     // index i -> column of count_i
  std::vector<std::pair<std::string, int>> attr_cols;

  auto numbered_suffix = [](const std::string& name, const std::string& prefix,
                            long long& index) {
    if (name.rfind(prefix, 0) != 0) return false;
    return csv::try_parse_ll(name.substr(prefix.size()), index);
  };

  for (int col = 0; col < static_cast<int>(header.size()); ++col) {
    const std::string& name = header[col];
    long long index = 0;
    if (name == "frame_id") {
      frame_id_col = col;
    } else if (name == "subject_id") {
      subject_col = col;
    } else if (name == "auto_label") {
      auto_col = col;
    } else if (name == "true_label") {
      true_col = col;
    } else if (name == "labeled") {
      labeled_col = col;
    } else if (numbered_suffix(name, "f_", index)) {
      if (index >= static_cast<long long>(feature_cols.size()))
        feature_cols.resize(index + 1, -1);
      feature_cols[index] = col;
    } else if (numbered_suffix(name, "count_", index)) {
      if (index >= static_cast<long long>(count_cols.size()))
        count_cols.resize(index + 1, -1);
      count_cols[index] = col;
    } else if (name.rfind("attr:", 0) == 0) {
      attr_cols.emplace_back(name.substr(5), col);
    } else {
      throw std::runtime_error("unrecognized column '" + name + "' in '" + path + "'");
    }
  }
  if (frame_id_col < 0) throw std::runtime_error("missing 'frame_id' column in '" + path + "'");
  if (subject_col < 0) throw std::runtime_error("missing 'subject_id' column in '" + path + "'");
  for (std::size_t i = 0; i < feature_cols.size(); ++i) {
    if (feature_cols[i] < 0)
      throw std::runtime_error("feature columns not contiguous: missing f_" + std::to_string(i));
  }
  for (std::size_t i = 0; i < count_cols.size(); ++i) {
    if (count_cols[i] < 0)
      throw std::runtime_error("count columns not contiguous: missing count_" + std::to_string(i));
  }

  Pool pool;
  pool.feature_dim = static_cast<int>(feature_cols.size());

  // Class count resolution: explicit schema wins, then the count columns,
  // then max(label)+1 observed in the data, then the default of 7.
  int class_count = 0;
  if (schema.class_count) {
    class_count = *schema.class_count;
    if (!count_cols.empty() && class_count != static_cast<int>(count_cols.size())) {
      throw std::runtime_error("schema class_count " + std::to_string(class_count) +
                               " conflicts with " + std::to_string(count_cols.size()) +
                               " count columns");
    }
  } else if (!count_cols.empty()) {
    class_count = static_cast<int>(count_cols.size());
  } else {
    long long max_label = -1;
    for (std::size_t r = 1; r < rows.size(); ++r) {
      for (int col : {auto_col, true_col}) {
        if (col < 0 || col >= static_cast<int>(rows[r].size())) continue;
        long long value = 0;
        if (!rows[r][col].empty() && csv::try_parse_ll(rows[r][col], value)) {
          max_label = std::max(max_label, value);
        }
      }
    }
    class_count = max_label >= 0 ? static_cast<int>(max_label + 1) : 7;
  }
  pool.class_count = class_count;

  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& cells = rows[r];
    const std::size_t line = r + 1;
    if (cells.size() != header.size()) {
      throw std::runtime_error("row " + std::to_string(line) + ": has " +
                               std::to_string(cells.size()) + " fields, header has " +
                               std::to_string(header.size()));
    }
    Frame frame;
    frame.frame_id = cells[frame_id_col];
    frame.subject_id = cells[subject_col];
    if (frame.frame_id.empty()) {
      throw std::runtime_error(detail::row_error(line, "frame_id", "empty frame_id"));
    }
    if (auto_col >= 0)
      frame.auto_label = detail::parse_label_cell(cells[auto_col], line, "auto_label", class_count);
    if (true_col >= 0)
      frame.true_label = detail::parse_label_cell(cells[true_col], line, "true_label", class_count);
    frame.features.resize(feature_cols.size());
    for (std::size_t i = 0; i < feature_cols.size(); ++i) {
      const std::string& cell = cells[feature_cols[i]];
      if (!csv::try_parse_double(cell, frame.features[i])) {
        throw std::runtime_error(detail::row_error(
            line, "f_" + std::to_string(i), "non-numeric feature value '" + cell + "'"));
      }
    }
    if (!count_cols.empty()) {
      std::size_t empty_cells = 0;
      std::vector<long long> counts(count_cols.size(), 0);
      for (std::size_t i = 0; i < count_cols.size(); ++i) {
        const std::string& cell = cells[count_cols[i]];
        if (cell.empty()) {
          ++empty_cells;
          continue;
        }
        if (!csv::try_parse_ll(cell, counts[i]) || counts[i] < 0) {
          throw std::runtime_error(detail::row_error(
              line, "count_" + std::to_string(i), "invalid count '" + cell + "'"));
        }
      }
      if (empty_cells == 0) {
        frame.crowd_counts = std::move(counts);
      } else if (empty_cells != count_cols.size()) {
        throw std::runtime_error("row " + std::to_string(line) +
                                 ": crowd counts must be all present or all empty");
      }
    }
    for (const auto& [name, col] : attr_cols) {
      if (!cells[col].empty()) frame.attributes[name] = cells[col];
    }
    if (labeled_col >= 0 && cells[labeled_col] == "1") {
      pool.labeled_ids.insert(frame.frame_id);
    }
    pool.frames.push_back(std::move(frame));
  }

  validate_pool(pool);
  return pool;
}

/// Writes a pool in the canonical column order. Count columns appear only if
/// some frame carries crowd counts; the labeled column only if some frame is
/// labeled. class_names are a cosmetic runtime field and are not serialized.
inline void save_pool(const Pool& pool, const std::string& path) {
  validate_pool(pool);
  bool any_counts = false;
  std::set<std::string> attr_names;
  for (const Frame& frame : pool.frames) {
    any_counts = any_counts || frame.crowd_counts.has_value();
    for (const auto& [name, value] : frame.attributes) attr_names.insert(name);
  }
  const bool any_labeled = !pool.labeled_ids.empty();

  std::vector<std::string> header = {"frame_id", "subject_id", "auto_label", "true_label"};
  for (int i = 0; i < pool.feature_dim; ++i) header.push_back("f_" + std::to_string(i));
  if (any_counts) {
    for (int i = 0; i < pool.class_count; ++i) header.push_back("count_" + std::to_string(i));
  }
  for (const auto& name : attr_names) header.push_back("attr:" + name);
  if (any_labeled) header.push_back("labeled");

  csv::Writer writer(path);
  writer.write_row(header);
  for (const Frame& frame : pool.frames) {
    std::vector<std::string> row = {frame.frame_id, frame.subject_id};
    row.push_back(frame.auto_label ? std::to_string(*frame.auto_label) : "");
    row.push_back(frame.true_label ? std::to_string(*frame.true_label) : "");
    for (double value : frame.features) row.push_back(csv::format_double(value));
    if (any_counts) {
      for (int i = 0; i < pool.class_count; ++i) {
        row.push_back(frame.crowd_counts ? std::to_string((*frame.crowd_counts)[i]) : "");
      }
    }
    for (const auto& name : attr_names) {
      auto it = frame.attributes.find(name);
      row.push_back(it == frame.attributes.end() ? "" : it->second);
    }
    if (any_labeled) row.push_back(pool.is_labeled(frame.frame_id) ? "1" : "0");
    writer.write_row(row);
  }
}

/// Splits subjects (never frames) into train/test per fold. Each fold uses
/// its own seed-derived shuffle, so folds differ but reruns are identical.
inline std::vector<FoldSpec> split_folds(const Pool& pool, int n_folds,
                                         double train_fraction,
                                         std::uint64_t seed) {
  if (n_folds < 1) throw std::invalid_argument("split_folds: n_folds must be >= 1");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("split_folds: train_fraction must be in (0, 1)");
  }
  std::set<std::string> subject_set;
  for (const Frame& frame : pool.frames) subject_set.insert(frame.subject_id);
  if (subject_set.size() < 2) {
    throw std::runtime_error("split_folds: need at least 2 distinct subjects, have " +
                             std::to_string(subject_set.size()));
  }
  const std::vector<std::string> subjects(subject_set.begin(), subject_set.end());
  const int n_subjects = static_cast<int>(subjects.size());
  const int n_train = std::clamp(
      static_cast<int>(std::llround(train_fraction * n_subjects)), 1, n_subjects - 1);

  std::vector<FoldSpec> folds;
  folds.reserve(n_folds);
  for (int f = 0; f < n_folds; ++f) {
    Rng rng(derive_seed(seed, "folds/" + std::to_string(f)));
    std::vector<std::string> shuffled = subjects;
    rng.shuffle(shuffled);
    FoldSpec fold;
    fold.fold_index = f;
    fold.train_subjects.insert(shuffled.begin(), shuffled.begin() + n_train);
    fold.test_subjects.insert(shuffled.begin() + n_train, shuffled.end());
    validate_fold(fold);
    folds.push_back(std::move(fold));
  }
  return folds;
}

struct CellShortfall {
  std::string cell;  // human-readable cell key
  int missing = 0;

  bool operator==(const CellShortfall&) const = default;
};

struct BalancedSubsetResult {
  Pool pool;
  std::vector<CellShortfall> shortfalls;
};

/// Selects up to per_cell frames for every (attribute values..., class) cell.
/// Cells with fewer members contribute everything they have and the gap is
/// reported. Within oversized cells the choice is uniform at random under the
/// given seed (tie handling is artifact-defined).
inline BalancedSubsetResult balanced_subset(const Pool& pool,
                                            const std::vector<std::string>& attributes,
                                            int per_cell, std::uint64_t seed) {
  if (per_cell < 0) throw std::invalid_argument("balanced_subset: per_cell must be >= 0");
  std::map<std::string, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < pool.frames.size(); ++i) {
    const Frame& frame = pool.frames[i];
    std::string key;
    for (const auto& attr : attributes) {
      auto it = frame.attributes.find(attr);
      if (it == frame.attributes.end()) {
        throw std::runtime_error("frame '" + frame.frame_id +
                                 "': missing attribute '" + attr + "'");
      }
      key += attr + "=" + it->second + "/";
    }
    if (!frame.true_label) {
      throw std::runtime_error("frame '" + frame.frame_id + "': missing true_label");
    }
    key += "class=" + std::to_string(*frame.true_label);
    cells[key].push_back(i);
  }

  BalancedSubsetResult result;
  std::vector<std::size_t> chosen;
  for (const auto& [key, members] : cells) {
    if (static_cast<int>(members.size()) <= per_cell) {
      chosen.insert(chosen.end(), members.begin(), members.end());
      if (static_cast<int>(members.size()) < per_cell) {
        result.shortfalls.push_back(
            {key, per_cell - static_cast<int>(members.size())});
      }
    } else {
      Rng rng(derive_seed(seed, "balanced/" + key));
      std::vector<std::size_t> shuffled = members;
      rng.shuffle(shuffled);
      chosen.insert(chosen.end(), shuffled.begin(), shuffled.begin() + per_cell);
    }
  }
  std::sort(chosen.begin(), chosen.end());  // keep source pool order

  result.pool.class_count = pool.class_count;
  result.pool.feature_dim = pool.feature_dim;
  result.pool.class_names = pool.class_names;
  for (std::size_t index : chosen) {
    const Frame& frame = pool.frames[index];
    result.pool.frames.push_back(frame);
    if (pool.is_labeled(frame.frame_id)) result.pool.labeled_ids.insert(frame.frame_id);
  }
  return result;
}

/// One metrics row. train_mode/test_mode/seed_tag are optional extension
/// columns used by the crowd experiment and the harness grid.
struct MetricRecord {
  int iteration = 0;
  long long labels_used = 0;
  std::string strategy;
  int fold = 0;
  std::string metric;
  double mean = 0.0;
  double std_dev = 0.0;
  std::string train_mode;
  std::string test_mode;
  std::optional<std::uint64_t> seed_tag;

  bool operator==(const MetricRecord&) const = default;
};

inline bool metric_record_less(const MetricRecord& a, const MetricRecord& b) {
  auto key = [](const MetricRecord& r) {
    return std::tie(r.iteration, r.strategy, r.fold, r.train_mode, r.test_mode,
                    r.metric, r.seed_tag);
  };
  return key(a) < key(b);
}

/// Writes metrics rows sorted by (iteration, strategy, fold). The base header
/// is iteration,labels_used,strategy,fold,metric,mean,std; the extension
/// columns are appended only when some record uses them.
inline void save_metrics(std::vector<MetricRecord> rows, const std::string& path) {
  std::sort(rows.begin(), rows.end(), metric_record_less);
  bool any_modes = false, any_seed = false;
  for (const auto& row : rows) {
    any_modes = any_modes || !row.train_mode.empty() || !row.test_mode.empty();
    any_seed = any_seed || row.seed_tag.has_value();
  }
  std::vector<std::string> header = {"iteration", "labels_used", "strategy",
                                     "fold",      "metric",      "mean",
                                     "std"};
  if (any_modes) {
    header.push_back("train_mode");
    header.push_back("test_mode");
  }
  if (any_seed) header.push_back("seed");

  csv::Writer writer(path);
  writer.write_row(header);
  for (const auto& row : rows) {
    std::vector<std::string> fields = {
        std::to_string(row.iteration), std::to_string(row.labels_used),
        row.strategy,                  std::to_string(row.fold),
        row.metric,                    csv::format_double(row.mean),
        csv::format_double(row.std_dev)};
    if (any_modes) {
      fields.push_back(row.train_mode);
      fields.push_back(row.test_mode);
    }
    if (any_seed) fields.push_back(row.seed_tag ? std::to_string(*row.seed_tag) : "");
    writer.write_row(fields);
  }
}

inline std::vector<MetricRecord> load_metrics(const std::string& path) {
  const auto rows = csv::read_rows(path);
  const auto& header = rows.front();
  std::map<std::string, int> col;
  for (int i = 0; i < static_cast<int>(header.size()); ++i) col[header[i]] = i;
  for (const char* required : {"iteration", "labels_used", "strategy", "fold",
                               "metric", "mean", "std"}) {
    if (!col.count(required)) {
      throw std::runtime_error("metrics file '" + path + "' missing column '" +
                               std::string(required) + "'");
    }
  }
  std::vector<MetricRecord> records;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& cells = rows[r];
    if (cells.size() != header.size()) {
      throw std::runtime_error("metrics row " + std::to_string(r + 1) +
                               ": field count mismatch");
    }
    MetricRecord record;
    long long value = 0;
    if (!csv::try_parse_ll(cells[col["iteration"]], value)) {
      throw std::runtime_error("metrics row " + std::to_string(r + 1) + ": bad iteration");
    }
    record.iteration = static_cast<int>(value);
    if (!csv::try_parse_ll(cells[col["labels_used"]], record.labels_used)) {
      throw std::runtime_error("metrics row " + std::to_string(r + 1) + ": bad labels_used");
    }
    record.strategy = cells[col["strategy"]];
    if (!csv::try_parse_ll(cells[col["fold"]], value)) {
      throw std::runtime_error("metrics row " + std::to_string(r + 1) + ": bad fold");
    }
    record.fold = static_cast<int>(value);
    record.metric = cells[col["metric"]];
    if (!csv::try_parse_double(cells[col["mean"]], record.mean) ||
        !csv::try_parse_double(cells[col["std"]], record.std_dev)) {
      throw std::runtime_error("metrics row " + std::to_string(r + 1) + ": bad mean/std");
    }
    if (col.count("train_mode")) record.train_mode = cells[col["train_mode"]];
    if (col.count("test_mode")) record.test_mode = cells[col["test_mode"]];
    if (col.count("seed") && !cells[col["seed"]].empty()) {
      if (!csv::try_parse_ll(cells[col["seed"]], value)) {
        throw std::runtime_error("metrics row " + std::to_string(r + 1) + ": bad seed");
      }
      record.seed_tag = static_cast<std::uint64_t>(value);
    }
    records.push_back(std::move(record));
  }
  return records;
}

}  // namespace alsim
