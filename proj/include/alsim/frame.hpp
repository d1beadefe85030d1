#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace alsim {

/// One pool item. Features are an opaque real vector; auto_label is the noisy
/// metadata class hint attached at collection time, distinct from true_label.
struct Frame {
  std::string frame_id;
  std::string subject_id;
  std::vector<double> features;
  std::optional<int> auto_label;
  std::optional<int> true_label;
  std::optional<std::vector<long long>> crowd_counts;  // length C when present
  std::map<std::string, std::string> attributes;

  bool operator==(const Frame&) const = default;
};

/// An indexed collection of frames with a labeled/unlabeled partition.
/// Immutable after construction except for labeled_ids, which an experiment
/// run mutates on its own copy.
struct Pool {
  std::vector<Frame> frames;
  int class_count = 7;
  int feature_dim = 0;
  std::set<std::string> labeled_ids;
  std::vector<std::string> class_names;

  bool operator==(const Pool&) const = default;

  bool is_labeled(const std::string& frame_id) const {
    return labeled_ids.count(frame_id) > 0;
  }
};

/// Subject-level train/test partition. Subjects, not frames, are split so no
/// subject can leak between the two sides.
struct FoldSpec {
  int fold_index = 0;
  std::set<std::string> train_subjects;
  std::set<std::string> test_subjects;

  bool operator==(const FoldSpec&) const = default;
};

inline void validate_fold(const FoldSpec& fold) {
  for (const auto& subject : fold.train_subjects) {
    if (fold.test_subjects.count(subject)) {
      throw std::runtime_error("fold " + std::to_string(fold.fold_index) +
                               ": subject '" + subject +
                               "' appears in both train and test sets");
    }
  }
}

inline std::vector<const Frame*> frame_ptrs(const Pool& pool) {
  std::vector<const Frame*> out;
  out.reserve(pool.frames.size());
  for (const Frame& frame : pool.frames) out.push_back(&frame);
  return out;
}

inline std::vector<const Frame*> frames_for_subjects(
    const Pool& pool, const std::set<std::string>& subjects) {
  std::vector<const Frame*> out;
  for (const Frame& frame : pool.frames) {
    if (subjects.count(frame.subject_id)) out.push_back(&frame);
  }
  return out;
}

/// Checks the structural invariants shared by every valid pool: consistent
/// feature dimension, labels below class_count, crowd counts of length C
/// summing to at least 1, labeled_ids referring to existing frames.
inline void validate_pool(const Pool& pool) {
  if (pool.class_count < 1) throw std::runtime_error("pool: class_count must be >= 1");
  if (pool.feature_dim < 0) throw std::runtime_error("pool: feature_dim must be >= 0");
  std::set<std::string> ids;
  for (const Frame& frame : pool.frames) {
    if (static_cast<int>(frame.features.size()) != pool.feature_dim) {
      throw std::runtime_error("frame '" + frame.frame_id +
                               "': feature dimension " +
                               std::to_string(frame.features.size()) +
                               " does not match pool feature_dim " +
                               std::to_string(pool.feature_dim));
    }
    for (const auto& label : {frame.auto_label, frame.true_label}) {
      if (label && (*label < 0 || *label >= pool.class_count)) {
        throw std::runtime_error("frame '" + frame.frame_id + "': label " +
                                 std::to_string(*label) +
                                 " outside [0, " +
                                 std::to_string(pool.class_count) + ")");
      }
    }
    if (frame.crowd_counts) {
      if (static_cast<int>(frame.crowd_counts->size()) != pool.class_count) {
        throw std::runtime_error("frame '" + frame.frame_id +
                                 "': crowd_counts length does not match class_count");
      }
      long long total = 0;
      for (long long count : *frame.crowd_counts) {
        if (count < 0) {
          throw std::runtime_error("frame '" + frame.frame_id +
                                   "': negative crowd count");
        }
        total += count;
      }
      if (total < 1) {
        throw std::runtime_error("frame '" + frame.frame_id +
                                 "': crowd_counts must sum to >= 1");
      }
    }
    if (!ids.insert(frame.frame_id).second) {
      throw std::runtime_error("duplicate frame_id '" + frame.frame_id + "'");
    }
  }
  if (!pool.class_names.empty() &&
      static_cast<int>(pool.class_names.size()) != pool.class_count) {
    throw std::runtime_error("pool: class_names length does not match class_count");
  }
  for (const auto& id : pool.labeled_ids) {
    if (!ids.count(id)) {
      throw std::runtime_error("labeled_ids contains unknown frame_id '" + id + "'");
    }
  }
}

}  // namespace alsim
