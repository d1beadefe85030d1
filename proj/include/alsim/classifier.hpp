#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "alsim/csv.hpp"
#include "alsim/frame.hpp"
#include "alsim/rng.hpp"

namespace alsim {

// Floor applied to probabilities before any log, so a confident mistake has
// finite loss. Natural log everywhere.
inline constexpr double kProbFloor = 1e-12;

struct AdamHyperparams {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

enum class TargetMode { one_hot, soft };

inline std::string target_mode_name(TargetMode mode) {
  return mode == TargetMode::one_hot ? "one_hot" : "soft";
}

/// Training/evaluation targets, one row per frame, each row a distribution.
struct TargetSet {
  TargetMode mode = TargetMode::one_hot;
  std::vector<std::vector<double>> targets;
};

inline void validate_targets(const TargetSet& set, int class_count) {
  for (std::size_t row = 0; row < set.targets.size(); ++row) {
    const auto& target = set.targets[row];
    if (static_cast<int>(target.size()) != class_count) {
      throw std::runtime_error("target row " + std::to_string(row) +
                               ": length does not match class count");
    }
    double sum = 0.0;
    int ones = 0;
    for (double value : target) {
      if (value < 0.0) throw std::runtime_error("target row " + std::to_string(row) + ": negative entry");
      if (value == 1.0) ++ones;
      sum += value;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw std::runtime_error("target row " + std::to_string(row) + ": does not sum to 1");
    }
    if (set.mode == TargetMode::one_hot && ones != 1) {
      throw std::runtime_error("target row " + std::to_string(row) + ": not one-hot");
    }
  }
}

/// One-hot targets from the frames' true labels.
inline TargetSet one_hot_targets(const std::vector<const Frame*>& frames, int class_count) {
  TargetSet set;
  set.mode = TargetMode::one_hot;
  set.targets.reserve(frames.size());
  for (const Frame* frame : frames) {
    if (!frame->true_label) {
      throw std::runtime_error("frame '" + frame->frame_id + "': missing true_label");
    }
    std::vector<double> row(class_count, 0.0);
    row[*frame->true_label] = 1.0;
    set.targets.push_back(std::move(row));
  }
  return set;
}

/// -sum target_i * ln(clamp(predicted_i)), the categorical cross-entropy.
inline double cross_entropy(std::span<const double> predicted,
                            std::span<const double> target) {
  if (predicted.size() != target.size()) {
    throw std::invalid_argument("cross_entropy: length mismatch");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (target[i] == 0.0) continue;
    loss -= target[i] * std::log(std::max(predicted[i], kProbFloor));
  }
  return loss;
}

/// Multinomial softmax classifier over feature vectors, trained by
/// mini-batch Adam on categorical cross-entropy. hidden_units == 0 gives
/// plain softmax regression; otherwise one tanh hidden layer.
///
/// Parameters live in one flat vector (row-major blocks), which keeps the
/// Adam state, the finite-difference oracle, and serialization uniform.
class SoftmaxClassifier {
 public:
  SoftmaxClassifier(int class_count, int feature_dim, int hidden_units = 0,
                    AdamHyperparams hyper = {})
      : class_count_(class_count),
        feature_dim_(feature_dim),
        hidden_units_(hidden_units),
        hyper_(hyper) {
    if (class_count_ < 2) throw std::invalid_argument("classifier: class_count must be >= 2");
    if (feature_dim_ < 1) throw std::invalid_argument("classifier: feature_dim must be >= 1");
    if (hidden_units_ < 0) throw std::invalid_argument("classifier: hidden_units must be >= 0");
    params_.assign(parameter_count(), 0.0);
    reset_adam_state();
  }

  int class_count() const { return class_count_; }
  int feature_dim() const { return feature_dim_; }
  int hidden_units() const { return hidden_units_; }
  const AdamHyperparams& hyperparams() const { return hyper_; }
  const std::vector<double>& parameters() const { return params_; }
  std::vector<double>& mutable_parameters() { return params_; }
  long long adam_step_count() const { return adam_step_; }

  std::size_t parameter_count() const {
    if (hidden_units_ == 0) {
      return static_cast<std::size_t>(class_count_) * feature_dim_ + class_count_;
    }
    return static_cast<std::size_t>(hidden_units_) * feature_dim_ + hidden_units_ +
           static_cast<std::size_t>(class_count_) * hidden_units_ + class_count_;
  }

  /// Zeros for the linear model (convex objective); symmetric uniform scaled
  /// by 1/sqrt(fan_in) for the hidden-layer weights, biases zero.
  void init_weights(std::uint64_t seed) {
    params_.assign(parameter_count(), 0.0);
    reset_adam_state();
    if (hidden_units_ == 0) return;
    Rng rng(seed);
    const double w1_scale = 1.0 / std::sqrt(static_cast<double>(feature_dim_));
    const double w2_scale = 1.0 / std::sqrt(static_cast<double>(hidden_units_));
    const std::size_t w1_size = static_cast<std::size_t>(hidden_units_) * feature_dim_;
    const std::size_t w2_off = w1_size + hidden_units_;
    const std::size_t w2_size = static_cast<std::size_t>(class_count_) * hidden_units_;
    for (std::size_t i = 0; i < w1_size; ++i) {
      params_[i] = (2.0 * rng.uniform() - 1.0) * w1_scale;
    }
    for (std::size_t i = 0; i < w2_size; ++i) {
      params_[w2_off + i] = (2.0 * rng.uniform() - 1.0) * w2_scale;
    }
  }

  std::vector<double> predict_proba(std::span<const double> features) const {
    if (static_cast<int>(features.size()) != feature_dim_) {
      throw std::invalid_argument("predict_proba: feature dimension mismatch");
    }
    std::vector<double> hidden;
    std::vector<double> probs(class_count_);
    forward(features, hidden, probs);
    return probs;
  }

  using EpochCallback = std::function<void(int epoch, const SoftmaxClassifier&)>;

  /// Runs `epochs` passes of shuffled mini-batch Adam. Deterministic given
  /// the seed; epochs == 0 leaves the model untouched.
  void train(const std::vector<const Frame*>& frames, const TargetSet& targets,
             int epochs, int batch_size, std::uint64_t seed,
             const EpochCallback& on_epoch = {}) {
    if (frames.empty()) throw std::runtime_error("train: empty training set");
    if (targets.targets.size() != frames.size()) {
      throw std::runtime_error("train: targets not aligned with frames");
    }
    if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    validate_targets(targets, class_count_);

    Rng rng(seed);
    std::vector<std::size_t> order(frames.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> grad(params_.size());
    std::vector<double> sample_grad(params_.size());

    for (int epoch = 1; epoch <= epochs; ++epoch) {
      rng.shuffle(order);
      for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + batch_size);
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t i = start; i < end; ++i) {
          const std::size_t idx = order[i];
          sample_gradient(frames[idx]->features, targets.targets[idx], sample_grad);
          for (std::size_t p = 0; p < grad.size(); ++p) grad[p] += sample_grad[p];
        }
        const double inv = 1.0 / static_cast<double>(end - start);
        for (double& g : grad) g *= inv;
        adam_update(grad);
      }
      if (on_epoch) on_epoch(epoch, *this);
    }
  }

  /// Mean cross-entropy loss of the current parameters on one sample.
  double sample_loss(std::span<const double> features,
                     std::span<const double> target) const {
    std::vector<double> hidden;
    std::vector<double> probs(class_count_);
    forward(features, hidden, probs);
    return cross_entropy(probs, target);
  }

  /// Analytic gradient of sample_loss with respect to every parameter.
  void sample_gradient(std::span<const double> features,
                       std::span<const double> target,
                       std::vector<double>& grad) const {
    grad.assign(params_.size(), 0.0);
    std::vector<double> hidden;
    std::vector<double> probs(class_count_);
    forward(features, hidden, probs);
    std::vector<double> dlogits(class_count_);
    for (int c = 0; c < class_count_; ++c) dlogits[c] = probs[c] - target[c];

    if (hidden_units_ == 0) {
      for (int c = 0; c < class_count_; ++c) {
        const std::size_t row = static_cast<std::size_t>(c) * feature_dim_;
        for (int d = 0; d < feature_dim_; ++d) grad[row + d] = dlogits[c] * features[d];
        grad[static_cast<std::size_t>(class_count_) * feature_dim_ + c] = dlogits[c];
      }
      return;
    }
    const std::size_t w1_off = 0;
    const std::size_t b1_off = static_cast<std::size_t>(hidden_units_) * feature_dim_;
    const std::size_t w2_off = b1_off + hidden_units_;
    const std::size_t b2_off = w2_off + static_cast<std::size_t>(class_count_) * hidden_units_;
    for (int c = 0; c < class_count_; ++c) {
      const std::size_t row = w2_off + static_cast<std::size_t>(c) * hidden_units_;
      for (int h = 0; h < hidden_units_; ++h) grad[row + h] = dlogits[c] * hidden[h];
      grad[b2_off + c] = dlogits[c];
    }
    for (int h = 0; h < hidden_units_; ++h) {
      double dhidden = 0.0;
      for (int c = 0; c < class_count_; ++c) {
        dhidden += params_[w2_off + static_cast<std::size_t>(c) * hidden_units_ + h] * dlogits[c];
      }
      const double dz = dhidden * (1.0 - hidden[h] * hidden[h]);
      const std::size_t row = w1_off + static_cast<std::size_t>(h) * feature_dim_;
      for (int d = 0; d < feature_dim_; ++d) grad[row + d] = dz * features[d];
      grad[b1_off + h] = dz;
    }
  }

  /// Flat CSV: one shape header row, then the parameters row-major.
  void save_weights(const std::string& path) const {
    csv::Writer writer(path);
    writer.write_row({"class_count", "feature_dim", "hidden_units", "n_params"});
    writer.write_row({std::to_string(class_count_), std::to_string(feature_dim_),
                      std::to_string(hidden_units_), std::to_string(params_.size())});
    std::vector<std::string> values;
    values.reserve(params_.size());
    for (double value : params_) values.push_back(csv::format_double(value));
    writer.write_row(values);
  }

  void load_weights(const std::string& path) {
    const auto rows = csv::read_rows(path);
    if (rows.size() != 3) throw std::runtime_error("weights file '" + path + "': expected 3 rows");
    const auto& shape = rows[1];
    long long cc = 0, fd = 0, hu = 0, np = 0;
    if (shape.size() != 4 || !csv::try_parse_ll(shape[0], cc) ||
        !csv::try_parse_ll(shape[1], fd) || !csv::try_parse_ll(shape[2], hu) ||
        !csv::try_parse_ll(shape[3], np)) {
      throw std::runtime_error("weights file '" + path + "': bad shape header");
    }
    if (cc != class_count_ || fd != feature_dim_ || hu != hidden_units_ ||
        np != static_cast<long long>(parameter_count())) {
      throw std::runtime_error("weights file '" + path + "': shape mismatch");
    }
    if (rows[2].size() != parameter_count()) {
      throw std::runtime_error("weights file '" + path + "': value count mismatch");
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!csv::try_parse_double(rows[2][i], params_[i])) {
        throw std::runtime_error("weights file '" + path + "': bad value at index " +
                                 std::to_string(i));
      }
    }
    reset_adam_state();
  }

 private:
  void forward(std::span<const double> features, std::vector<double>& hidden,
               std::vector<double>& probs) const {
    std::vector<double> logits(class_count_, 0.0);
    if (hidden_units_ == 0) {
      for (int c = 0; c < class_count_; ++c) {
        const std::size_t row = static_cast<std::size_t>(c) * feature_dim_;
        double z = params_[static_cast<std::size_t>(class_count_) * feature_dim_ + c];
        for (int d = 0; d < feature_dim_; ++d) z += params_[row + d] * features[d];
        logits[c] = z;
      }
    } else {
      const std::size_t b1_off = static_cast<std::size_t>(hidden_units_) * feature_dim_;
      const std::size_t w2_off = b1_off + hidden_units_;
      const std::size_t b2_off = w2_off + static_cast<std::size_t>(class_count_) * hidden_units_;
      hidden.resize(hidden_units_);
      for (int h = 0; h < hidden_units_; ++h) {
        const std::size_t row = static_cast<std::size_t>(h) * feature_dim_;
        double z = params_[b1_off + h];
        for (int d = 0; d < feature_dim_; ++d) z += params_[row + d] * features[d];
        hidden[h] = std::tanh(z);
      }
      for (int c = 0; c < class_count_; ++c) {
        const std::size_t row = w2_off + static_cast<std::size_t>(c) * hidden_units_;
        double z = params_[b2_off + c];
        for (int h = 0; h < hidden_units_; ++h) z += params_[row + h] * hidden[h];
        logits[c] = z;
      }
    }
    const double max_logit = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (int c = 0; c < class_count_; ++c) {
      probs[c] = std::exp(logits[c] - max_logit);
      denom += probs[c];
    }
    for (int c = 0; c < class_count_; ++c) probs[c] /= denom;
  }

  void reset_adam_state() {
    adam_m_.assign(params_.size(), 0.0);
    adam_v_.assign(params_.size(), 0.0);
    adam_step_ = 0;
  }

  // Bias-corrected Adam update.
  void adam_update(const std::vector<double>& grad) {
    ++adam_step_;
    const double bc1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(adam_step_));
    const double bc2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(adam_step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      adam_m_[i] = hyper_.beta1 * adam_m_[i] + (1.0 - hyper_.beta1) * grad[i];
      adam_v_[i] = hyper_.beta2 * adam_v_[i] + (1.0 - hyper_.beta2) * grad[i] * grad[i];
      const double m_hat = adam_m_[i] / bc1;
      const double v_hat = adam_v_[i] / bc2;
      params_[i] -= hyper_.learning_rate * m_hat / (std::sqrt(v_hat) + hyper_.epsilon);
    }
  }

  int class_count_;
  int feature_dim_;
  int hidden_units_;
  AdamHyperparams hyper_;
  std::vector<double> params_;
  std::vector<double> adam_m_;
  std::vector<double> adam_v_;
  long long adam_step_ = 0;
};

/// Central finite differences over every parameter vs the analytic gradient.
/// Returns the max elementwise error, relative above magnitude 1.
inline double gradient_check(SoftmaxClassifier model, const Frame& frame,
                             const std::vector<double>& target, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("gradient_check: h must be > 0");
  std::vector<double> analytic;
  model.sample_gradient(frame.features, target, analytic);
  auto& params = model.mutable_parameters();
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double loss_plus = model.sample_loss(frame.features, target);
    params[i] = saved - h;
    const double loss_minus = model.sample_loss(frame.features, target);
    params[i] = saved;
    const double numeric = (loss_plus - loss_minus) / (2.0 * h);
    const double scale = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / scale);
  }
  return worst;
}

struct EvalMetrics {
  std::optional<double> accuracy;
  std::optional<double> macro_f1;
  double mean_cross_entropy = 0.0;
};

/// Scores the model against explicit targets. Accuracy and macro-F1 are
/// defined only for one-hot targets (argmax prediction vs target class); a
/// class absent from both predictions and truth contributes F1 = 0.
inline EvalMetrics evaluate(const SoftmaxClassifier& model,
                            const std::vector<const Frame*>& frames,
                            const TargetSet& targets) {
  if (frames.empty()) throw std::runtime_error("evaluate: empty evaluation set");
  if (targets.targets.size() != frames.size()) {
    throw std::runtime_error("evaluate: targets not aligned with frames");
  }
  const int C = model.class_count();
  validate_targets(targets, C);

  double loss_sum = 0.0;
  std::vector<long long> tp(C, 0), fp(C, 0), fn(C, 0);
  long long correct = 0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto probs = model.predict_proba(frames[i]->features);
    loss_sum += cross_entropy(probs, targets.targets[i]);
    if (targets.mode == TargetMode::one_hot) {
      const int predicted = static_cast<int>(
          std::max_element(probs.begin(), probs.end()) - probs.begin());
      const auto& row = targets.targets[i];
      const int truth = static_cast<int>(
          std::max_element(row.begin(), row.end()) - row.begin());
      if (predicted == truth) {
        ++correct;
        ++tp[truth];
      } else {
        ++fp[predicted];
        ++fn[truth];
      }
    }
  }

  EvalMetrics metrics;
  metrics.mean_cross_entropy = loss_sum / static_cast<double>(frames.size());
  if (targets.mode == TargetMode::one_hot) {
    metrics.accuracy = static_cast<double>(correct) / static_cast<double>(frames.size());
    double f1_sum = 0.0;
    for (int c = 0; c < C; ++c) {
      const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
      f1_sum += denom > 0.0 ? 2.0 * static_cast<double>(tp[c]) / denom : 0.0;
    }
    metrics.macro_f1 = f1_sum / static_cast<double>(C);
  }
  return metrics;
}

/// Convenience: evaluate against one-hot targets from the frames' true labels.
inline EvalMetrics evaluate(const SoftmaxClassifier& model,
                            const std::vector<const Frame*>& frames) {
  return evaluate(model, frames, one_hot_targets(frames, model.class_count()));
}

}  // namespace alsim
