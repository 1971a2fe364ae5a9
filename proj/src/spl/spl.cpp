#include "escrl/spl.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>

#include "escrl/error.hpp"
#include "escrl/text.hpp"

namespace escrl::spl {

Distribution distribution(PreferenceLabel label) {
  switch (label) {
    case PreferenceLabel::kConsistent:
      return {1.0, 0.0};
    case PreferenceLabel::kInconsistent:
      return {0.0, 1.0};
    case PreferenceLabel::kIndistinguishable:
      return {0.5, 0.5};
  }
  throw ValidationError("unknown preference label");
}

PreferenceLabel label_from_distribution(Distribution d) {
  if (d[0] == 1.0 && d[1] == 0.0) return PreferenceLabel::kConsistent;
  if (d[0] == 0.0 && d[1] == 1.0) return PreferenceLabel::kInconsistent;
  if (d[0] == 0.5 && d[1] == 0.5) return PreferenceLabel::kIndistinguishable;
  throw ValidationError("preference label must be (1,0), (0,1) or (0.5,0.5)");
}

std::string_view label_name(PreferenceLabel label) {
  switch (label) {
    case PreferenceLabel::kConsistent:
      return "(1,0)";
    case PreferenceLabel::kInconsistent:
      return "(0,1)";
    case PreferenceLabel::kIndistinguishable:
      return "(0.5,0.5)";
  }
  return "?";
}

RuleJudge::RuleJudge(std::shared_ptr<const labeler::LabelerBackend> labeler) : labeler_(std::move(labeler)) {
  if (!labeler_) throw ConfigError("rule judge needs a labeler");
}

PreferenceLabel RuleJudge::judge(const std::string& candidate, const std::string& reference,
                                 std::size_t disease_index) const {
  const auto k_count = labeler_->vocabulary().size();
  if (disease_index >= k_count) throw ArityError("judge: disease index out of range");
  auto c = labeler_->extract(candidate).at(disease_index);
  auto r = labeler_->extract(reference).at(disease_index);
  auto vague = [](DiseaseStatus s) { return s == DiseaseStatus::kBlank || s == DiseaseStatus::kUncertain; };
  if (vague(c) || vague(r)) return PreferenceLabel::kIndistinguishable;
  return c == r ? PreferenceLabel::kConsistent : PreferenceLabel::kInconsistent;
}

LlmJudge::LlmJudge(net::ChatConfig cfg, DiseaseVocabulary vocab) : client_(std::move(cfg)), vocab_(std::move(vocab)) {}

std::string LlmJudge::system_prompt() {
  return "You are a radiologist comparing two descriptions of the same chest X-ray finding. "
         "The reference description is authoritative.";
}

std::string LlmJudge::user_prompt(const std::string& candidate, const std::string& reference,
                                  std::size_t disease_index) const {
  std::string out;
  out += "Finding: " + vocab_.label(disease_index) + "\n";
  out += "Reference: " + (reference.empty() ? std::string("(not mentioned)") : reference) + "\n";
  out += "Candidate: " + (candidate.empty() ? std::string("(not mentioned)") : candidate) + "\n";
  out += "Using the reference as ground truth, answer with exactly one of:\n";
  out += "(1,0) if the candidate is consistent with the reference,\n";
  out += "(0,1) if the candidate contradicts the reference,\n";
  out += "(0.5,0.5) if the two cannot be distinguished.\n";
  return out;
}

PreferenceLabel LlmJudge::judge(const std::string& candidate, const std::string& reference,
                                std::size_t disease_index) const {
  if (disease_index >= vocab_.size()) throw ArityError("judge: disease index out of range");
  return parse_judge_answer(client_.complete(system_prompt(), user_prompt(candidate, reference, disease_index)));
}

PreferenceLabel parse_judge_answer(std::string_view answer) {
  std::string compact;
  for (char c : answer) {
    if (!std::isspace(static_cast<unsigned char>(c))) compact.push_back(c);
  }
  std::optional<PreferenceLabel> found;
  for (auto label : {PreferenceLabel::kIndistinguishable, PreferenceLabel::kConsistent,
                     PreferenceLabel::kInconsistent}) {
    if (compact.find(label_name(label)) == std::string::npos) continue;
    if (found) throw ProtocolError("judge answer names more than one label: " + std::string(answer));
    found = label;
  }
  if (!found) throw ProtocolError("judge answer names no label: " + std::string(answer));
  return *found;
}

std::vector<PreferenceTriplet> build_study_triplets(const corpus::StudyRecord& record, const JudgeBackend& judge,
                                                    const labeler::Lexicon& lexicon, JudgeFailurePolicy on_failure,
                                                    DatasetBuildStats* stats) {
  std::vector<PreferenceTriplet> out;
  if (record.candidate_observations.empty()) return out;
  const auto reference = labeler::segment_descriptions(record.ground_truth_report, lexicon);
  for (std::size_t n = 0; n < record.candidate_observations.size(); ++n) {
    const auto candidate = labeler::segment_descriptions(record.candidate_observations[n], lexicon);
    for (std::size_t k = 0; k < lexicon.size(); ++k) {
      PreferenceTriplet t{record.study_id, n, k, candidate[k], reference[k], PreferenceLabel::kIndistinguishable};
      try {
        t.label = judge.judge(t.candidate, t.reference, k);
      } catch (const std::exception& e) {
        std::string where = "judge failed for study " + record.study_id + " n=" + std::to_string(n) +
                            " k=" + std::to_string(k) + ": " + e.what();
        if (on_failure == JudgeFailurePolicy::kError) throw Error(where);
        std::cerr << "warning: " << where << " (skipped)\n";
        if (stats) ++stats->skipped;
        continue;
      }
      out.push_back(std::move(t));
      if (stats) ++stats->triplets;
    }
  }
  return out;
}

std::vector<PreferenceTriplet> build_preference_dataset(std::span<const corpus::StudyRecord> records,
                                                        const JudgeBackend& judge, const labeler::Lexicon& lexicon,
                                                        JudgeFailurePolicy on_failure, DatasetBuildStats* stats) {
  std::vector<PreferenceTriplet> out;
  for (const auto& r : records) {
    auto part = build_study_triplets(r, judge, lexicon, on_failure, stats);
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return out;
}

std::string to_json_line(const PreferenceTriplet& t) {
  nlohmann::ordered_json j;
  auto d = distribution(t.label);
  j["study_id"] = t.study_id;
  j["n"] = t.observation_index;
  j["k"] = t.disease_index;
  j["candidate"] = t.candidate;
  j["reference"] = t.reference;
  j["label"] = {d[0], d[1]};
  return j.dump();
}

void write_dataset(const std::filesystem::path& path, std::span<const PreferenceTriplet> triplets) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write dataset: " + path.string());
    for (const auto& t : triplets) out << to_json_line(t) << '\n';
    if (!out) throw Error("write failed: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<PreferenceTriplet> load_dataset(const std::filesystem::path& path,
                                            std::optional<std::size_t> num_diseases) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset: " + path.string());
  std::vector<PreferenceTriplet> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      PreferenceTriplet t;
      t.study_id = j.at("study_id").get<std::string>();
      t.observation_index = j.at("n").get<std::size_t>();
      t.disease_index = j.at("k").get<std::size_t>();
      t.candidate = j.at("candidate").get<std::string>();
      t.reference = j.at("reference").get<std::string>();
      const auto& lab = j.at("label");
      if (!lab.is_array() || lab.size() != 2) throw ParseError("label must be a pair", line_no);
      t.label = label_from_distribution({lab[0].get<double>(), lab[1].get<double>()});
      if (num_diseases && t.disease_index >= *num_diseases) throw ParseError("k out of range", line_no);
      out.push_back(std::move(t));
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return out;
}

PreferencePredictor make_predictor(std::span<const PreferenceTriplet> triplets) {
  std::vector<std::pair<std::string, std::string>> pairs;
  pairs.reserve(triplets.size());
  for (const auto& t : triplets) pairs.emplace_back(t.candidate, t.reference);
  return PreferencePredictor(FeatureVocab::build(pairs));
}

std::vector<Example> to_examples(const PreferencePredictor& model, std::span<const PreferenceTriplet> triplets) {
  std::vector<Example> out;
  out.reserve(triplets.size());
  for (const auto& t : triplets) out.push_back(model.make_example(t.candidate, t.reference, distribution(t.label)));
  return out;
}

double kl_divergence(Distribution target, Distribution predicted) {
  if (!(predicted[0] > 0.0) || !(predicted[1] > 0.0)) {
    throw NumericalError("predicted distribution must be strictly positive");
  }
  if (std::abs(predicted[0] + predicted[1] - 1.0) > 1e-9) {
    throw NumericalError("predicted distribution must sum to 1");
  }
  double kl = 0.0;
  for (int i = 0; i < 2; ++i) {
    if (target[i] > 0.0) kl += target[i] * std::log(target[i] / predicted[i]);
  }
  return std::max(0.0, kl);
}

void FilterSchedule::validate() const {
  if (std::isnan(tau_lower_initial)) throw ConfigError("tau_lower_initial must not be NaN");
  if (!(decay_rate >= 0.0) || !std::isfinite(decay_rate)) throw ConfigError("decay_rate must be finite and >= 0");
  if (!std::isfinite(upper_c)) throw ConfigError("upper_c must be finite");
  if (!(upper_delta > 0.0)) throw ConfigError("upper_delta must be positive");
  if (fixed_upper && std::isnan(*fixed_upper)) throw ConfigError("fixed_upper must not be NaN");
}

double tau_lower(std::size_t epoch, const FilterSchedule& sched) {
  if (!std::isfinite(sched.tau_lower_initial)) return sched.tau_lower_initial;
  return std::max(0.0, sched.tau_lower_initial * (1.0 - sched.decay_rate * static_cast<double>(epoch)));
}

double tau_upper(std::span<const double> batch_kls, double lower, const FilterSchedule& sched) {
  if (sched.fixed_upper) return *sched.fixed_upper;
  if (batch_kls.empty()) throw ValidationError("tau_upper needs a non-empty batch");
  const double n = static_cast<double>(batch_kls.size());
  double mean = 0.0;
  for (double v : batch_kls) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : batch_kls) var += (v - mean) * (v - mean);
  var /= n;
  return std::max(mean + sched.upper_c * std::sqrt(var), lower + sched.upper_delta);
}

std::vector<double> triplet_kls(std::span<const PreferenceTriplet> triplets, const PreferencePredictor& model) {
  std::vector<double> out;
  out.reserve(triplets.size());
  for (const auto& t : triplets) out.push_back(kl_divergence(t.label, model.predict(t.candidate, t.reference)));
  return out;
}

FilterResult filter_trustworthy(std::span<const PreferenceTriplet> triplets, const PreferencePredictor& model,
                                const FilterSchedule& sched, std::size_t epoch) {
  sched.validate();
  FilterResult r;
  r.kls = triplet_kls(triplets, model);
  r.tau_lower = tau_lower(epoch, sched);
  if (triplets.empty()) {
    r.tau_upper = sched.fixed_upper.value_or(r.tau_lower + sched.upper_delta);
    return r;
  }
  r.tau_upper = tau_upper(r.kls, r.tau_lower, sched);
  if (!(r.tau_upper > r.tau_lower)) {
    throw ScheduleError("tau_upper (" + std::to_string(r.tau_upper) + ") must exceed tau_lower (" +
                        std::to_string(r.tau_lower) + ")");
  }
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    const double kl = r.kls[i];
    const bool keep = sched.mode == FilterMode::kBand ? (r.tau_lower < kl && kl < r.tau_upper) : kl < r.tau_lower;
    if (keep) {
      r.kept.push_back(triplets[i]);
      r.kept_indices.push_back(i);
    }
  }
  return r;
}

}  // namespace escrl::spl
