#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "alsim/classifier.hpp"
#include "alsim/frame.hpp"
#include "alsim/rng.hpp"

namespace alsim {

/// Shannon entropy (natural log) of a probability vector, with 0*ln 0 = 0.
inline double entropy(std::span<const double> probabilities) {
  double sum = 0.0;
  for (double p : probabilities) {
    if (p < 0.0) throw std::invalid_argument("entropy: negative probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw std::invalid_argument("entropy: probabilities sum to " + std::to_string(sum) +
                                ", not 1 within 1e-6");
  }
  double h = 0.0;
  for (double p : probabilities) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

enum class StrategyKind { random, tuple_cycle, tuple_cycle_max_entropy };

inline std::string strategy_name(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::random: return "random";
    case StrategyKind::tuple_cycle: return "tuple_cycle";
    case StrategyKind::tuple_cycle_max_entropy: return "tuple_cycle_max_entropy";
  }
  throw std::logic_error("unknown strategy kind");
}

inline std::optional<StrategyKind> parse_strategy(const std::string& name) {
  if (name == "random") return StrategyKind::random;
  if (name == "tuple_cycle") return StrategyKind::tuple_cycle;
  if (name == "tuple_cycle_max_entropy") return StrategyKind::tuple_cycle_max_entropy;
  return std::nullopt;
}

struct StrategySpec {
  StrategyKind kind = StrategyKind::random;
  std::uint64_t seed = 0;
};

/// The (auto_label, subject) key the tuple strategies cycle over.
struct TupleKey {
  int auto_label = 0;
  std::string subject_id;

  auto operator<=>(const TupleKey&) const = default;
};

/// Unlabeled frame ids grouped by tuple key, each group in pool order.
/// Frames without an auto_label are not indexed; only the random strategy
/// may select them.
using TupleIndex = std::map<TupleKey, std::vector<std::string>>;

inline TupleIndex build_tuple_index(const Pool& pool) {
  TupleIndex index;
  for (const Frame& frame : pool.frames) {
    if (!frame.auto_label || pool.is_labeled(frame.frame_id)) continue;
    index[{*frame.auto_label, frame.subject_id}].push_back(frame.frame_id);
  }
  return index;
}

/// One emitted frame in the selection log.
struct SelectionEntry {
  int iteration = 0;
  int rank = 0;  // 1-based position within the experiment's emission order
  std::string frame_id;
  std::optional<int> tuple_auto_label;
  std::string tuple_subject;
  std::optional<double> entropy;
};

/// Produces batches of unlabeled frame ids for one experiment run. The
/// tuple-cycle key order is a seed-derived shuffle of the pool's full key
/// universe, fixed for the life of the selector; the ring cursor persists
/// across batches so tuples keep being covered evenly between iterations.
class BatchSelector {
 public:
  explicit BatchSelector(const StrategySpec& spec)
      : spec_(spec), pick_rng_(derive_seed(spec.seed, "selection/pick")) {}

  const StrategySpec& spec() const { return spec_; }

  std::vector<std::string> next_batch(const Pool& pool,
                                      const SoftmaxClassifier* model,
                                      int batch_size, int iteration = 1,
                                      std::vector<SelectionEntry>* log = nullptr) {
    if (batch_size < 1) throw std::invalid_argument("next_batch: batch_size must be >= 1");
    if (spec_.kind == StrategyKind::tuple_cycle_max_entropy && model == nullptr) {
      throw std::invalid_argument("next_batch: max-entropy strategy needs a model");
    }
    if (spec_.kind == StrategyKind::random) {
      return random_batch(pool, model, batch_size, iteration, log);
    }
    return tuple_batch(pool, model, batch_size, iteration, log);
  }

 private:
  struct Candidate {
    const Frame* frame;
    double entropy_value;
  };

  std::vector<std::string> random_batch(const Pool& pool,
                                        const SoftmaxClassifier* model,
                                        int batch_size, int iteration,
                                        std::vector<SelectionEntry>* log) {
    std::vector<const Frame*> unlabeled;
    for (const Frame& frame : pool.frames) {
      if (!pool.is_labeled(frame.frame_id)) unlabeled.push_back(&frame);
    }
    pick_rng_.shuffle(unlabeled);
    const std::size_t take = std::min<std::size_t>(batch_size, unlabeled.size());
    std::vector<std::string> batch;
    batch.reserve(take);
    for (std::size_t i = 0; i < take; ++i) {
      batch.push_back(unlabeled[i]->frame_id);
      if (log) {
        SelectionEntry entry;
        entry.iteration = iteration;
        entry.rank = ++emitted_;
        entry.frame_id = unlabeled[i]->frame_id;
        if (model) entry.entropy = entropy(model->predict_proba(unlabeled[i]->features));
        log->push_back(std::move(entry));
      } else {
        ++emitted_;
      }
    }
    return batch;
  }

  std::vector<std::string> tuple_batch(const Pool& pool,
                                       const SoftmaxClassifier* model,
                                       int batch_size, int iteration,
                                       std::vector<SelectionEntry>* log) {
    // Key universe over all frames carrying an auto_label, labeled or not,
    // so the shuffled ring is identical from one iteration to the next.
    std::map<TupleKey, std::vector<Candidate>> remaining;
    std::vector<TupleKey> ring;
    for (const Frame& frame : pool.frames) {
      if (!frame.auto_label) continue;
      const TupleKey key{*frame.auto_label, frame.subject_id};
      auto [it, inserted] = remaining.try_emplace(key);
      if (inserted) ring.push_back(key);
      if (!pool.is_labeled(frame.frame_id)) {
        Candidate candidate{&frame, 0.0};
        if (model != nullptr) {
          candidate.entropy_value = entropy(model->predict_proba(frame.features));
        }
        it->second.push_back(candidate);
      }
    }
    std::sort(ring.begin(), ring.end());
    Rng cycle_rng(derive_seed(spec_.seed, "selection/cycle"));
    cycle_rng.shuffle(ring);

    std::vector<std::string> batch;
    if (ring.empty()) return batch;
    std::size_t skipped = 0;
    while (static_cast<int>(batch.size()) < batch_size && skipped < ring.size()) {
      const TupleKey& key = ring[cursor_ % ring.size()];
      cursor_ = (cursor_ + 1) % ring.size();
      auto& candidates = remaining[key];
      if (candidates.empty()) {
        ++skipped;
        continue;
      }
      skipped = 0;
      std::size_t pick = 0;
      if (spec_.kind == StrategyKind::tuple_cycle) {
        pick = pick_rng_.uniform_below(candidates.size());
      } else {
        // Highest entropy wins; ties go to the lowest frame_id.
        for (std::size_t i = 1; i < candidates.size(); ++i) {
          const bool better =
              candidates[i].entropy_value > candidates[pick].entropy_value ||
              (candidates[i].entropy_value == candidates[pick].entropy_value &&
               candidates[i].frame->frame_id < candidates[pick].frame->frame_id);
          if (better) pick = i;
        }
      }
      const Candidate chosen = candidates[pick];
      candidates.erase(candidates.begin() + pick);
      batch.push_back(chosen.frame->frame_id);
      ++emitted_;
      if (log) {
        SelectionEntry entry;
        entry.iteration = iteration;
        entry.rank = emitted_;
        entry.frame_id = chosen.frame->frame_id;
        entry.tuple_auto_label = key.auto_label;
        entry.tuple_subject = key.subject_id;
        if (model != nullptr) entry.entropy = chosen.entropy_value;
        log->push_back(std::move(entry));
      }
    }
    return batch;
  }

  StrategySpec spec_;
  Rng pick_rng_;
  std::size_t cursor_ = 0;
  int emitted_ = 0;
};

/// Single-shot batch with a fresh selector (ring cursor at its start).
inline std::vector<std::string> next_batch(const Pool& pool,
                                           const SoftmaxClassifier* model,
                                           const StrategySpec& spec,
                                           int batch_size) {
  BatchSelector selector(spec);
  return selector.next_batch(pool, model, batch_size);
}

/// Classifier training settings shared by the experiment drivers.
struct TrainParams {
  int hidden_units = 0;
  int epochs = 50;
  int batch_size = 32;
  AdamHyperparams adam;
};

struct ActiveLearningRow {
  int iteration = 0;
  long long labels_used = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double mean_cross_entropy = 0.0;
};

struct ActiveLearningResult {
  std::vector<ActiveLearningRow> metrics;
  std::vector<SelectionEntry> selections;
};

/// The query loop: select a batch, reveal its true labels, retrain from
/// scratch on everything labeled so far, evaluate. labels_used counts frames
/// revealed by selection (pre-labeled base frames are excluded).
inline ActiveLearningResult run_active_learning(
    Pool pool, const StrategySpec& spec, int iterations, int batch_size,
    const std::vector<const Frame*>& eval_frames, const TrainParams& params) {
  if (iterations < 1) throw std::invalid_argument("run_active_learning: iterations must be >= 1");
  if (eval_frames.empty()) throw std::runtime_error("run_active_learning: empty eval set");
  std::size_t unlabeled = 0;
  for (const Frame& frame : pool.frames) {
    if (!pool.is_labeled(frame.frame_id)) ++unlabeled;
  }
  if (unlabeled == 0) throw std::runtime_error("run_active_learning: no unlabeled frames");

  const TargetSet eval_targets = one_hot_targets(eval_frames, pool.class_count);
  BatchSelector selector(spec);
  SoftmaxClassifier model(pool.class_count, pool.feature_dim, params.hidden_units,
                          params.adam);
  model.init_weights(derive_seed(spec.seed, "al/init/0"));

  ActiveLearningResult result;
  long long revealed = 0;
  for (int iter = 1; iter <= iterations; ++iter) {
    const auto batch =
        selector.next_batch(pool, &model, batch_size, iter, &result.selections);
    for (const auto& id : batch) pool.labeled_ids.insert(id);
    revealed += static_cast<long long>(batch.size());

    std::vector<const Frame*> labeled;
    for (const Frame& frame : pool.frames) {
      if (pool.is_labeled(frame.frame_id)) labeled.push_back(&frame);
    }
    const TargetSet targets = one_hot_targets(labeled, pool.class_count);

    const std::string tag = std::to_string(iter);
    model = SoftmaxClassifier(pool.class_count, pool.feature_dim,
                              params.hidden_units, params.adam);
    model.init_weights(derive_seed(spec.seed, "al/init/" + tag));
    model.train(labeled, targets, params.epochs, params.batch_size,
                derive_seed(spec.seed, "al/train/" + tag));

    const EvalMetrics eval = evaluate(model, eval_frames, eval_targets);
    result.metrics.push_back({iter, revealed, *eval.accuracy, *eval.macro_f1,
                              eval.mean_cross_entropy});
  }
  return result;
}

}  // namespace alsim
