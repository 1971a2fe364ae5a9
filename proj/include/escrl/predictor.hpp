#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace escrl::spl {

using Distribution = std::array<double, 2>;

// Named binary features over a (candidate, reference) text pair:
//   c:<tok>   token present in the candidate
//   r:<tok>   token present in the reference
//   x:<tok>   token present in both
//   c:<empty>, r:<empty> for empty sides
//   c:<neg>, r:<neg>, x:<neg> negation cue on that side (x: both sides)
//   c:<unc>, r:<unc>, x:<unc> likewise for uncertainty cues
class FeatureVocab {
 public:
  FeatureVocab() = default;
  explicit FeatureVocab(std::vector<std::string> names);

  // Every feature name produced by any of the pairs, sorted.
  static FeatureVocab build(std::span<const std::pair<std::string, std::string>> pairs);

  static std::vector<std::string> feature_names(const std::string& candidate, const std::string& reference);

  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  // Indices of known features, ascending; unknown names are dropped.
  std::vector<std::uint32_t> encode(const std::string& candidate, const std::string& reference) const;

  bool operator==(const FeatureVocab& other) const { return names_ == other.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

struct Example {
  std::vector<std::uint32_t> features;
  Distribution target;
};

struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> gradient;  // same layout as PreferencePredictor::parameters()
};

// Two-way softmax scorer: logits = W x + b over the binary pair features.
class PreferencePredictor {
 public:
  PreferencePredictor() = default;
  explicit PreferencePredictor(FeatureVocab vocab);

  const FeatureVocab& vocab() const noexcept { return vocab_; }

  // Layout: [class0 weights (F), class0 bias, class1 weights (F), class1 bias].
  std::span<const double> parameters() const noexcept { return params_; }
  std::span<double> parameters() noexcept { return params_; }

  std::array<double, 2> logits(std::span<const std::uint32_t> features) const;
  // Strictly positive components summing to 1.
  Distribution predict(std::span<const std::uint32_t> features) const;
  Distribution predict(const std::string& candidate, const std::string& reference) const;

  Example make_example(const std::string& candidate, const std::string& reference, Distribution target) const;

  // Mean cross-entropy over `batch` plus 0.5 * l2 * |W|^2 (biases excluded).
  LossAndGradient loss_and_gradient(std::span<const Example> batch, double l2 = 0.0) const;

  // Versioned binary: magic, feature table, float32 parameters.
  void save(const std::filesystem::path& path) const;
  static PreferencePredictor load(const std::filesystem::path& path);

  // Same layout with float64 parameters, for exact checkpoint round trips.
  void write_exact(std::ostream& out) const;
  static PreferencePredictor read_exact(std::istream& in);

  bool operator==(const PreferencePredictor& other) const {
    return vocab_ == other.vocab_ && params_ == other.params_;
  }

 private:
  std::size_t stride() const noexcept { return vocab_.size() + 1; }

  FeatureVocab vocab_;
  std::vector<double> params_;
};

struct PredictorHyperparams {
  std::size_t epochs = 300;
  double learning_rate = 0.05;  // Adam step size
  double l2 = 1e-4;
  std::size_t batch_size = 0;  // 0: full batch
  std::uint64_t seed = 0;      // minibatch order
};

struct PredictorTrainResult {
  double final_loss = 0.0;
  std::size_t steps = 0;
};

PredictorTrainResult train_predictor(PreferencePredictor& model, std::span<const Example> data,
                                     const PredictorHyperparams& hp);

// One plain gradient step on `batch`; returns the pre-step loss.
double sgd_step(PreferencePredictor& model, std::span<const Example> batch, double learning_rate, double l2 = 0.0);

}  // namespace escrl::spl
