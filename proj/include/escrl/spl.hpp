#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "escrl/corpus.hpp"
#include "escrl/labeler.hpp"
#include "escrl/llm.hpp"
#include "escrl/predictor.hpp"

namespace escrl::spl {

// (1,0): the candidate agrees with the reference; (0,1): it contradicts the
// reference; (0.5,0.5): the pair carries no usable preference.
enum class PreferenceLabel { kConsistent, kInconsistent, kIndistinguishable };

Distribution distribution(PreferenceLabel label);
// Exact match against the three allowed distributions; ValidationError otherwise.
PreferenceLabel label_from_distribution(Distribution d);
std::string_view label_name(PreferenceLabel label);

struct PreferenceTriplet {
  std::string study_id;
  std::size_t observation_index = 0;
  std::size_t disease_index = 0;
  std::string candidate;
  std::string reference;
  PreferenceLabel label = PreferenceLabel::kIndistinguishable;

  bool operator==(const PreferenceTriplet&) const = default;
};

class JudgeBackend {
 public:
  virtual ~JudgeBackend() = default;
  virtual PreferenceLabel judge(const std::string& candidate, const std::string& reference,
                                std::size_t disease_index) const = 0;
};

// Labels both texts and compares the statuses of one disease: blank or
// uncertain on either side gives (0.5,0.5), equal statuses (1,0), the
// positive/negative pair (0,1).
class RuleJudge final : public JudgeBackend {
 public:
  explicit RuleJudge(std::shared_ptr<const labeler::LabelerBackend> labeler);
  PreferenceLabel judge(const std::string& candidate, const std::string& reference,
                        std::size_t disease_index) const override;

 private:
  std::shared_ptr<const labeler::LabelerBackend> labeler_;
};

// Asks a chat model to answer with one of "(1,0)", "(0,1)", "(0.5,0.5)".
class LlmJudge final : public JudgeBackend {
 public:
  LlmJudge(net::ChatConfig cfg, DiseaseVocabulary vocab);
  PreferenceLabel judge(const std::string& candidate, const std::string& reference,
                        std::size_t disease_index) const override;

  static std::string system_prompt();
  std::string user_prompt(const std::string& candidate, const std::string& reference,
                          std::size_t disease_index) const;

 private:
  net::ChatClient client_;
  DiseaseVocabulary vocab_;
};

// The answer must contain exactly one distinct label literal (whitespace
// inside the parentheses is ignored); ProtocolError otherwise.
PreferenceLabel parse_judge_answer(std::string_view answer);

enum class JudgeFailurePolicy { kSkip, kError };

struct DatasetBuildStats {
  std::size_t triplets = 0;
  std::size_t skipped = 0;
};

// One triplet per (observation n, disease k), n-major. Records without
// candidate observations yield nothing.
std::vector<PreferenceTriplet> build_study_triplets(const corpus::StudyRecord& record, const JudgeBackend& judge,
                                                    const labeler::Lexicon& lexicon,
                                                    JudgeFailurePolicy on_failure = JudgeFailurePolicy::kError,
                                                    DatasetBuildStats* stats = nullptr);

std::vector<PreferenceTriplet> build_preference_dataset(std::span<const corpus::StudyRecord> records,
                                                        const JudgeBackend& judge, const labeler::Lexicon& lexicon,
                                                        JudgeFailurePolicy on_failure = JudgeFailurePolicy::kError,
                                                        DatasetBuildStats* stats = nullptr);

// JSONL {"study_id","n","k","candidate","reference","label":[f,f]}.
std::string to_json_line(const PreferenceTriplet& t);
void write_dataset(const std::filesystem::path& path, std::span<const PreferenceTriplet> triplets);
// `num_diseases` bounds k when given.
std::vector<PreferenceTriplet> load_dataset(const std::filesystem::path& path,
                                            std::optional<std::size_t> num_diseases = std::nullopt);

// Predictor whose feature table covers every pair in `triplets`.
PreferencePredictor make_predictor(std::span<const PreferenceTriplet> triplets);
std::vector<Example> to_examples(const PreferencePredictor& model, std::span<const PreferenceTriplet> triplets);

// sum_i t_i ln(t_i / p_i) with 0 ln 0 = 0. `predicted` must be strictly
// positive and sum to 1 within 1e-9 (NumericalError otherwise).
double kl_divergence(Distribution target, Distribution predicted);
inline double kl_divergence(PreferenceLabel target, Distribution predicted) {
  return kl_divergence(distribution(target), predicted);
}

enum class FilterMode {
  kBand,        // tau_lower < KL < tau_upper
  kBelowLower,  // KL < tau_lower
};

struct FilterSchedule {
  double tau_lower_initial = 3.0 * std::numbers::ln10;
  double decay_rate = 1.0 / 30.0;  // per epoch, linear
  double upper_c = 1.0;            // tau_upper = mean + c * std of the batch KLs
  double upper_delta = 1e-3;       // tau_upper >= tau_lower + delta
  std::optional<double> fixed_upper;
  FilterMode mode = FilterMode::kBand;

  void validate() const;
  bool operator==(const FilterSchedule&) const = default;
};

// max(0, tau0 * (1 - decay * epoch)); a non-finite tau0 is returned unchanged
// so the bound can be disabled with -inf.
double tau_lower(std::size_t epoch, const FilterSchedule& sched);
// Adaptive: max(mean + c * std, lower + delta), population std. With
// fixed_upper set, that value. Throws ValidationError on an empty batch.
double tau_upper(std::span<const double> batch_kls, double lower, const FilterSchedule& sched);

std::vector<double> triplet_kls(std::span<const PreferenceTriplet> triplets, const PreferencePredictor& model);

struct FilterResult {
  std::vector<PreferenceTriplet> kept;
  std::vector<std::size_t> kept_indices;  // into the input, ascending
  std::vector<double> kls;                // one per input triplet
  double tau_lower = 0.0;
  double tau_upper = 0.0;
};

// Strict inequalities at both bounds. ScheduleError when tau_upper <= tau_lower.
FilterResult filter_trustworthy(std::span<const PreferenceTriplet> triplets, const PreferencePredictor& model,
                                const FilterSchedule& sched, std::size_t epoch);

}  // namespace escrl::spl
