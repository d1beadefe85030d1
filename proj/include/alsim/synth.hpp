#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "alsim/frame.hpp"
#include "alsim/rng.hpp"

namespace alsim {

/// Recipe for a synthetic classification pool: Gaussian class clusters with
/// controllable metadata-label noise and simulated crowd annotations.
struct SynthConfig {
  int class_count = 7;
  int feature_dim = 10;
  int frames_per_class = 100;
  int subjects = 10;
  double cluster_separation = 3.0;  // pairwise distance between class means
  double within_class_std = 1.0;
  double auto_label_noise = 0.0;   // P(auto_label != true_label)
  int crowd_annotators = 0;
  double crowd_confusion = 0.0;    // P(an annotator votes for another class)
  std::uint64_t seed = 0;
};

inline void validate_synth_config(const SynthConfig& config) {
  auto fail = [](const std::string& what) {
    throw std::invalid_argument("synth config: " + what);
  };
  if (config.class_count < 2) fail("class_count must be >= 2");
  if (config.feature_dim < 1) fail("feature_dim must be >= 1");
  if (config.feature_dim < config.class_count) {
    fail("feature_dim must be >= class_count (class means sit on scaled basis vectors)");
  }
  if (config.frames_per_class < 1) fail("frames_per_class must be >= 1");
  if (config.subjects < 1) fail("subjects must be >= 1");
  if (config.cluster_separation < 0.0) fail("cluster_separation must be >= 0");
  if (!(config.within_class_std > 0.0)) fail("within_class_std must be > 0");
  if (config.auto_label_noise < 0.0 || config.auto_label_noise > 1.0) {
    fail("auto_label_noise must be in [0, 1]");
  }
  if (config.crowd_annotators < 0) fail("crowd_annotators must be >= 0");
  if (config.crowd_confusion < 0.0 || config.crowd_confusion > 1.0) {
    fail("crowd_confusion must be in [0, 1]");
  }
}

namespace detail {

inline std::string padded_id(const char* prefix, int index, int width) {
  std::string digits = std::to_string(index);
  if (static_cast<int>(digits.size()) < width) {
    digits.insert(0, width - digits.size(), '0');
  }
  return prefix + digits;
}

}  // namespace detail

/// Generates a pool that is a pure function of its config. Class c is drawn
/// from an isotropic Gaussian centered at e_c * separation/sqrt(2), which
/// makes every pairwise mean distance exactly cluster_separation. Subjects
/// are assigned round-robin over the generation order.
inline Pool generate_pool(const SynthConfig& config) {
  validate_synth_config(config);
  Rng rng(config.seed);

  Pool pool;
  pool.class_count = config.class_count;
  pool.feature_dim = config.feature_dim;
  const double mean_scale = config.cluster_separation / std::sqrt(2.0);
  const int total = config.class_count * config.frames_per_class;
  const int id_width = std::max(4, static_cast<int>(std::to_string(total).size()));

  int frame_index = 0;
  for (int cls = 0; cls < config.class_count; ++cls) {
    for (int k = 0; k < config.frames_per_class; ++k, ++frame_index) {
      Frame frame;
      frame.frame_id = detail::padded_id("f", frame_index, id_width);
      frame.subject_id = detail::padded_id("s", frame_index % config.subjects, 3);
      frame.true_label = cls;

      frame.features.resize(config.feature_dim);
      for (int d = 0; d < config.feature_dim; ++d) {
        frame.features[d] = config.within_class_std * rng.normal();
      }
      frame.features[cls] += mean_scale;

      int auto_label = cls;
      if (rng.uniform() < config.auto_label_noise) {
        const int offset = rng.uniform_int(1, config.class_count);
        auto_label = (cls + offset) % config.class_count;
      }
      frame.auto_label = auto_label;

      if (config.crowd_annotators > 0) {
        std::vector<long long> counts(config.class_count, 0);
        for (int vote = 0; vote < config.crowd_annotators; ++vote) {
          int voted = cls;
          if (rng.uniform() < config.crowd_confusion) {
            const int offset = rng.uniform_int(1, config.class_count);
            voted = (cls + offset) % config.class_count;
          }
          ++counts[voted];
        }
        frame.crowd_counts = std::move(counts);
      }
      pool.frames.push_back(std::move(frame));
    }
  }
  validate_pool(pool);
  return pool;
}

}  // namespace alsim
