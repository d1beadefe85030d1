#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "alsim/classifier.hpp"
#include "alsim/dataset.hpp"
#include "alsim/frame.hpp"
#include "alsim/rng.hpp"
#include "alsim/selection.hpp"

namespace alsim {

/// Per-frame crowd state: the full reference annotation counts (hidden from
/// the allocator) and the labels drawn from them so far this experiment.
struct CrowdDistribution {
  std::string frame_id;
  std::vector<long long> counts;
  std::vector<long long> drawn;

  explicit CrowdDistribution(std::string id, std::vector<long long> reference)
      : frame_id(std::move(id)),
        counts(std::move(reference)),
        drawn(counts.size(), 0) {}

  long long drawn_total() const {
    return std::accumulate(drawn.begin(), drawn.end(), 0LL);
  }
};

/// Draws k labels with replacement from the categorical distribution
/// counts / sum(counts), updating `drawn`.
inline std::vector<int> sample_labels(CrowdDistribution& dist, int k, Rng& rng) {
  if (k < 0) throw std::invalid_argument("sample_labels: k must be >= 0");
  long long total = 0;
  for (long long count : dist.counts) {
    if (count < 0) throw std::runtime_error("sample_labels: negative count");
    total += count;
  }
  if (total <= 0) {
    throw std::runtime_error("sample_labels: frame '" + dist.frame_id +
                             "' has all-zero counts");
  }
  std::vector<int> draws;
  draws.reserve(k);
  for (int i = 0; i < k; ++i) {
    const long long pick = static_cast<long long>(
        rng.uniform_below(static_cast<std::uint64_t>(total)));
    long long cumulative = 0;
    int cls = 0;
    for (std::size_t c = 0; c < dist.counts.size(); ++c) {
      cumulative += dist.counts[c];
      if (pick < cumulative) {
        cls = static_cast<int>(c);
        break;
      }
    }
    ++dist.drawn[cls];
    draws.push_back(cls);
  }
  return draws;
}

inline std::vector<int> sample_labels(CrowdDistribution& dist, int k,
                                      std::uint64_t seed) {
  Rng rng(seed);
  return sample_labels(dist, k, rng);
}

/// Entropy of a count vector's normalized distribution.
inline double crowd_entropy(std::span<const long long> counts) {
  long long total = 0;
  for (long long count : counts) total += count;
  if (total < 1) throw std::runtime_error("crowd_entropy: counts sum to zero");
  std::vector<double> probs(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    probs[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
  }
  return entropy(probs);
}

struct BudgetPlan {
  std::map<std::string, int> per_frame_samples;
  long long total = 0;
};

/// Splits a 3N label budget over N frames by entropy tier: the top 10% of
/// frames get 7 samples, the next 15% get 5, the next 40% get 3, the rest 1.
/// Tier sizes use floors; a remainder pass grants one extra sample per frame
/// in descending-entropy order until the total is exactly 3N.
inline BudgetPlan allocate_budget(const std::map<std::string, double>& entropies) {
  const long long n = static_cast<long long>(entropies.size());
  if (n == 0) throw std::invalid_argument("allocate_budget: no frames");

  std::vector<std::pair<std::string, double>> order(entropies.begin(), entropies.end());
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  const long long tier7 = (10 * n) / 100;
  const long long tier5 = (15 * n) / 100;
  const long long tier3 = (40 * n) / 100;

  BudgetPlan plan;
  for (long long i = 0; i < n; ++i) {
    int samples = 1;
    if (i < tier7) {
      samples = 7;
    } else if (i < tier7 + tier5) {
      samples = 5;
    } else if (i < tier7 + tier5 + tier3) {
      samples = 3;
    }
    plan.per_frame_samples[order[i].first] = samples;
    plan.total += samples;
  }

  const long long budget = 3 * n;
  while (plan.total < budget) {
    for (long long i = 0; i < n && plan.total < budget; ++i) {
      ++plan.per_frame_samples[order[i].first];
      ++plan.total;
    }
  }
  while (plan.total > budget) {  // unreachable with floor tiers, guarded anyway
    for (long long i = n - 1; i >= 0 && plan.total > budget; --i) {
      int& samples = plan.per_frame_samples[order[i].first];
      if (samples > 1) {
        --samples;
        --plan.total;
      }
    }
  }
  return plan;
}

enum class CountSource { drawn, reference };

/// Builds training targets from crowd label counts: majority vote with
/// seeded uniform tie-breaks for one-hot, normalized counts for soft.
inline TargetSet build_targets(const std::vector<CrowdDistribution>& dists,
                               TargetMode mode, Rng& rng,
                               CountSource source = CountSource::drawn) {
  TargetSet set;
  set.mode = mode;
  set.targets.reserve(dists.size());
  for (const CrowdDistribution& dist : dists) {
    const std::vector<long long>& counts =
        source == CountSource::drawn ? dist.drawn : dist.counts;
    const long long total = std::accumulate(counts.begin(), counts.end(), 0LL);
    if (total < 1) {
      throw std::runtime_error("build_targets: frame '" + dist.frame_id +
                               "' has no labels drawn");
    }
    std::vector<double> row(counts.size(), 0.0);
    if (mode == TargetMode::soft) {
      for (std::size_t c = 0; c < counts.size(); ++c) {
        row[c] = static_cast<double>(counts[c]) / static_cast<double>(total);
      }
    } else {
      const long long best = *std::max_element(counts.begin(), counts.end());
      std::vector<int> tied;
      for (std::size_t c = 0; c < counts.size(); ++c) {
        if (counts[c] == best) tied.push_back(static_cast<int>(c));
      }
      const int winner = tied[rng.uniform_below(tied.size())];
      row[winner] = 1.0;
    }
    set.targets.push_back(std::move(row));
  }
  return set;
}

inline TargetSet build_targets(const std::vector<CrowdDistribution>& dists,
                               TargetMode mode, std::uint64_t seed,
                               CountSource source = CountSource::drawn) {
  Rng rng(seed);
  return build_targets(dists, mode, rng, source);
}

enum class CrowdCondition { cycling, active };

inline std::string condition_name(CrowdCondition condition) {
  return condition == CrowdCondition::cycling ? "cycling" : "active";
}

enum class EntropySource { drawn, reference };

struct CrowdExperimentConfig {
  std::vector<int> schedule = {3, 6, 9, 12, 15, 18, 21, 24, 30, 45, 75};
  CrowdCondition condition = CrowdCondition::cycling;
  TargetMode train_mode = TargetMode::one_hot;
  TargetMode test_mode = TargetMode::one_hot;
  TrainParams train{.hidden_units = 0, .epochs = 200, .batch_size = 32};
  int final_epochs_window = 50;
  EntropySource entropy_source = EntropySource::drawn;
};

struct DrawnCountRow {
  int checkpoint = 0;
  int fold = 0;
  std::string condition;
  std::string frame_id;
  std::vector<long long> drawn;
};

struct CrowdExperimentResult {
  std::vector<MetricRecord> metrics;
  std::vector<DrawnCountRow> drawn_log;
};

inline void validate_schedule(const std::vector<int>& schedule) {
  if (schedule.empty()) throw std::invalid_argument("schedule must be nonempty");
  int previous = 0;
  for (int checkpoint : schedule) {
    if (checkpoint <= previous) {
      throw std::invalid_argument("schedule must be strictly increasing");
    }
    if (checkpoint % 3 != 0) {
      throw std::invalid_argument(
          "schedule checkpoints must be multiples of 3 (each sampling round "
          "spends 3 labels per frame of budget)");
    }
    previous = checkpoint;
  }
}

/// Experiment 2 driver. Per fold, labels are drawn for the training frames
/// in rounds of 3N: the cycling condition gives every frame 3 samples per
/// round; the active condition gives every frame 1 sample and spends the
/// rest by entropy tier via allocate_budget. At each schedule checkpoint a
/// fresh classifier is trained on targets built from the drawn counts and
/// the test-set cross-entropy is recorded as mean and std over the final
/// training epochs. Test targets come from the full reference counts.
///
/// RNG streams are derived so that sampling depends only on (seed, fold,
/// condition): the four train/test mode cells of one condition see an
/// identical label-drawing trajectory.
inline CrowdExperimentResult run_crowd_experiment(
    const Pool& pool, const std::vector<FoldSpec>& folds,
    const CrowdExperimentConfig& config, std::uint64_t seed) {
  validate_schedule(config.schedule);
  for (const Frame& frame : pool.frames) {
    if (!frame.crowd_counts) {
      throw std::runtime_error("run_crowd_experiment: frame '" + frame.frame_id +
                               "' has no crowd counts");
    }
  }
  const std::string cond = condition_name(config.condition);
  const std::string train_mode = target_mode_name(config.train_mode);
  const std::string test_mode = target_mode_name(config.test_mode);
  const int window = std::min(config.final_epochs_window, config.train.epochs);

  CrowdExperimentResult result;
  for (const FoldSpec& fold : folds) {
    validate_fold(fold);
    const auto train_frames = frames_for_subjects(pool, fold.train_subjects);
    const auto test_frames = frames_for_subjects(pool, fold.test_subjects);
    if (train_frames.empty() || test_frames.empty()) {
      throw std::runtime_error("fold " + std::to_string(fold.fold_index) +
                               ": empty train or test side");
    }
    const std::string fold_tag = "fold=" + std::to_string(fold.fold_index);

    std::vector<CrowdDistribution> dists;
    dists.reserve(train_frames.size());
    for (const Frame* frame : train_frames) {
      dists.emplace_back(frame->frame_id, *frame->crowd_counts);
    }

    std::vector<CrowdDistribution> test_reference;
    test_reference.reserve(test_frames.size());
    for (const Frame* frame : test_frames) {
      test_reference.emplace_back(frame->frame_id, *frame->crowd_counts);
    }
    Rng test_target_rng(
        derive_seed(seed, "crowd/test-targets/" + fold_tag + "/" + test_mode));
    const TargetSet test_targets = build_targets(
        test_reference, config.test_mode, test_target_rng, CountSource::reference);

    Rng sample_rng(derive_seed(seed, "crowd/sample/" + fold_tag + "/" + cond));
    const int total_rounds = config.schedule.back() / 3;
    std::size_t next_checkpoint = 0;

    for (int round = 1; round <= total_rounds; ++round) {
      if (config.condition == CrowdCondition::cycling) {
        for (CrowdDistribution& dist : dists) sample_labels(dist, 3, sample_rng);
      } else {
        for (CrowdDistribution& dist : dists) sample_labels(dist, 1, sample_rng);
        std::map<std::string, double> entropies;
        for (const CrowdDistribution& dist : dists) {
          entropies[dist.frame_id] = crowd_entropy(
              config.entropy_source == EntropySource::drawn ? dist.drawn
                                                            : dist.counts);
        }
        const BudgetPlan plan = allocate_budget(entropies);
        for (CrowdDistribution& dist : dists) {
          const int extra = plan.per_frame_samples.at(dist.frame_id) - 1;
          sample_labels(dist, extra, sample_rng);
        }
      }

      const int labels_per_frame = 3 * round;
      if (next_checkpoint >= config.schedule.size() ||
          config.schedule[next_checkpoint] != labels_per_frame) {
        continue;
      }
      const int checkpoint_index = static_cast<int>(next_checkpoint) + 1;
      ++next_checkpoint;
      const std::string cp_tag =
          fold_tag + "/" + cond + "/cp=" + std::to_string(labels_per_frame);

      Rng target_rng(
          derive_seed(seed, "crowd/train-targets/" + cp_tag + "/" + train_mode));
      const TargetSet train_targets =
          build_targets(dists, config.train_mode, target_rng, CountSource::drawn);

      SoftmaxClassifier model(pool.class_count, pool.feature_dim,
                              config.train.hidden_units, config.train.adam);
      model.init_weights(
          derive_seed(seed, "crowd/init/" + cp_tag + "/" + train_mode));
      std::vector<double> tail_losses;
      tail_losses.reserve(window);
      model.train(train_frames, train_targets, config.train.epochs,
                  config.train.batch_size,
                  derive_seed(seed, "crowd/train/" + cp_tag + "/" + train_mode),
                  [&](int epoch, const SoftmaxClassifier& snapshot) {
                    if (epoch > config.train.epochs - window) {
                      tail_losses.push_back(
                          evaluate(snapshot, test_frames, test_targets)
                              .mean_cross_entropy);
                    }
                  });

      double mean = 0.0;
      for (double loss : tail_losses) mean += loss;
      mean /= static_cast<double>(tail_losses.size());
      double variance = 0.0;
      for (double loss : tail_losses) variance += (loss - mean) * (loss - mean);
      const double std_dev =
          tail_losses.size() > 1
              ? std::sqrt(variance / static_cast<double>(tail_losses.size() - 1))
              : 0.0;

      MetricRecord record;
      record.iteration = checkpoint_index;
      record.labels_used = labels_per_frame;
      record.strategy = cond;
      record.fold = fold.fold_index;
      record.metric = "cross_entropy";
      record.mean = mean;
      record.std_dev = std_dev;
      record.train_mode = train_mode;
      record.test_mode = test_mode;
      result.metrics.push_back(std::move(record));

      for (const CrowdDistribution& dist : dists) {
        result.drawn_log.push_back(
            {labels_per_frame, fold.fold_index, cond, dist.frame_id, dist.drawn});
      }
    }
  }
  return result;
}

}  // namespace alsim
