#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "escrl/corpus.hpp"
#include "escrl/gear.hpp"
#include "escrl/labeler.hpp"
#include "escrl/metrics.hpp"
#include "escrl/predictor.hpp"
#include "escrl/random.hpp"
#include "escrl/refine.hpp"
#include "escrl/spl.hpp"

namespace escrl::policy {

enum class ActionKind : std::uint8_t { kPositive = 0, kNegative = 1, kOmit = 2 };

// Per disease and per context, logits over {positive, negative, omit} x
// templates, kind-major. The context is the disease's ground-truth status
// code, the desk-scale stand-in for what the image shows.
class ToyPolicy {
 public:
  static constexpr std::size_t kContexts = 4;
  static constexpr std::size_t kKinds = 3;

  ToyPolicy() = default;
  ToyPolicy(std::size_t num_diseases, std::size_t templates_per_disease, double temperature);

  std::size_t num_diseases() const noexcept { return num_diseases_; }
  std::size_t templates() const noexcept { return templates_; }
  std::size_t num_actions() const noexcept { return kKinds * templates_; }
  double temperature() const noexcept { return temperature_; }

  ActionKind kind(std::size_t action) const { return static_cast<ActionKind>(action / templates_); }
  std::size_t template_index(std::size_t action) const { return action % templates_; }
  std::size_t action(ActionKind kind, std::size_t template_index) const {
    return static_cast<std::size_t>(kind) * templates_ + template_index;
  }

  // Offset of the (disease, context) row in parameters().
  std::size_t row_offset(std::size_t disease, DiseaseStatus context) const;
  std::span<double> logits(std::size_t disease, DiseaseStatus context);
  std::span<const double> logits(std::size_t disease, DiseaseStatus context) const;
  // softmax(logits / temperature)
  std::vector<double> probabilities(std::size_t disease, DiseaseStatus context) const;
  std::vector<double> log_probabilities(std::size_t disease, DiseaseStatus context) const;

  std::span<double> parameters() noexcept { return logits_; }
  std::span<const double> parameters() const noexcept { return logits_; }

  // Adds `bias` to every logit of one action kind in every row.
  void add_kind_bias(ActionKind kind, double bias);

  bool operator==(const ToyPolicy&) const = default;

 private:
  std::size_t num_diseases_ = 0;
  std::size_t templates_ = 0;
  double temperature_ = 1.0;
  std::vector<double> logits_;
};

struct SampledObservation {
  std::string text;
  std::vector<std::size_t> actions;  // one per disease
  std::vector<double> logprobs;      // one per disease
  double logprob = 0.0;              // sum of logprobs
};

// One categorical draw per disease, in disease order; sentences are joined in
// the same order and omitted diseases contribute nothing.
SampledObservation sample_observation(const ToyPolicy& policy, const labeler::Lexicon& lexicon,
                                      const StatusVector& context, Rng& rng);
std::vector<SampledObservation> sample_observations(const ToyPolicy& policy, const labeler::Lexicon& lexicon,
                                                    const StatusVector& context, std::size_t n, Rng& rng);

// grad += scale * d(sample.logprob)/d(parameters)
void accumulate_logprob_gradient(const ToyPolicy& policy, const StatusVector& context,
                                 const SampledObservation& sample, double scale, std::vector<double>& grad);

// Sum over diseases of -ln P(kind matching the ground truth); uncertain
// ground truth contributes nothing. When `grad` is given, adds scale * dL.
double task_loss(const ToyPolicy& policy, const StatusVector& ground_truth, std::vector<double>* grad = nullptr,
                 double scale = 1.0);

struct TrainConfig {
  std::size_t epochs = 4;
  std::size_t num_samples = 4;  // N
  double learning_rate = 1.0;
  double gamma = 0.5;
  double temperature = 1.0;
  double baseline_momentum = 0.9;
  double init_positive_bias = 0.0;  // > 0 makes the initial policy over-report findings
  std::uint64_t seed = 0;
  std::size_t retrain_every = 1;  // predictor refit period, in epochs
  double predictor_online_lr = 0.05;
  spl::PredictorHyperparams predictor;
  spl::FilterSchedule schedule;
  gear::GearConfig gear;

  void validate() const;
};

// Canonical JSON of every field that shapes a run except `epochs`, so a run
// can be resumed with a larger epoch budget.
std::string canonical_config(const TrainConfig& cfg);
std::uint64_t config_hash(const TrainConfig& cfg);

struct PipelineBackends {
  std::shared_ptr<const labeler::LabelerBackend> labeler;
  std::shared_ptr<const grounding::GroundingBackend> grounder;
  std::shared_ptr<const spl::JudgeBackend> judge;
  std::shared_ptr<const refine::Refiner> refiner;
  std::shared_ptr<const labeler::Lexicon> lexicon;  // composes sampled sentences

  void validate() const;
};

// Rule labeler, synthetic grounder, rule judge and rules refiner.
PipelineBackends default_backends(const DiseaseVocabulary& vocab, const grounding::SyntheticGrounderConfig& grounder);

struct TrainState {
  ToyPolicy policy;
  spl::PreferencePredictor predictor;
  spl::FilterSchedule schedule;
  std::size_t epoch = 0;  // completed epochs
  std::size_t step = 0;   // completed reinforce steps
  double gamma = 0.5;
  double baseline = 0.0;
  bool baseline_ready = false;
  Rng rng;
  std::uint64_t config_hash = 0;

  bool operator==(const TrainState&) const = default;
};

// Policy from the config; predictor fitted on the corpus's own candidate
// observations when it has any.
TrainState initial_state(std::span<const corpus::StudyRecord> corpus, const TrainConfig& cfg,
                         const PipelineBackends& backends);

struct PipelineResult {
  std::vector<SampledObservation> samples;
  std::vector<spl::PreferenceTriplet> triplets;
  spl::FilterResult filtered;
  refine::TrustedEvidence evidence;
  std::string refined;
  gear::GearLossBreakdown reward;
};

// Sample N observations, judge them against the reference, filter with the
// current predictor and schedule, refine, and score the refined report.
PipelineResult run_pipeline(const TrainState& state, const corpus::StudyRecord& study, const StatusVector& context,
                            const PipelineBackends& backends, const TrainConfig& cfg, Rng& rng);

struct StepReport {
  PipelineResult pipeline;
  double reward = 0.0;     // -l_r of the refined report
  double advantage = 0.0;  // reward - baseline before the update
  double task_loss = 0.0;
  double predictor_loss = 0.0;
  double update_norm = 0.0;
};

// One policy update: theta += lr * (gamma * advantage * sum_n dlogp_n - dL_task),
// one SGD step of the predictor on the study's triplets, then the baseline
// moves toward the reward (the first reward initializes it).
StepReport reinforce_step(TrainState& state, const corpus::StudyRecord& study, const StatusVector& context,
                          const PipelineBackends& backends, const TrainConfig& cfg);

struct EpochMetrics {
  std::size_t epoch = 0;
  double mean_l_r = 0.0;
  double mean_l_tp = 0.0;
  double mean_l_fn = 0.0;
  double mean_l_fp = 0.0;
  metrics::Prf ce;  // micro
};

std::vector<StatusVector> ground_truth_statuses(std::span<const corpus::StudyRecord> corpus,
                                                const labeler::LabelerBackend& labeler);

// Runs the pipeline once per study with a generator derived from (seed,
// epoch), leaving the training stream untouched.
EpochMetrics evaluate(const TrainState& state, std::span<const corpus::StudyRecord> corpus,
                      std::span<const StatusVector> contexts, const PipelineBackends& backends, const TrainConfig& cfg);

using EpochCallback = std::function<void(const TrainState&, const EpochMetrics&)>;

// Continues from state.epoch up to cfg.epochs, visiting studies in a fresh
// shuffled order each epoch. Returns one entry per epoch run.
std::vector<EpochMetrics> train(TrainState& state, std::span<const corpus::StudyRecord> corpus,
                                const TrainConfig& cfg, const PipelineBackends& backends,
                                const EpochCallback& on_epoch = {});

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& m);

// Magic, version, config hash, counters, generator state, policy, schedule
// and predictor, all exact.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace escrl::policy
