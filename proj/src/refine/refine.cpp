#include "escrl/refine.hpp"

#include <algorithm>
#include <iostream>
#include <map>
#include <set>
#include <tuple>

#include "escrl/error.hpp"
#include "escrl/text.hpp"

namespace escrl::refine {

const EvidenceEntry* TrustedEvidence::find(std::size_t disease_index) const {
  auto it = std::lower_bound(entries.begin(), entries.end(), disease_index,
                             [](const EvidenceEntry& e, std::size_t k) { return e.disease_index < k; });
  return it != entries.end() && it->disease_index == disease_index ? &*it : nullptr;
}

TrustedEvidence derive_trusted_evidence(std::span<const spl::PreferenceTriplet> filtered,
                                        const spl::PreferencePredictor& model,
                                        const labeler::LabelerBackend& labeler) {
  std::map<std::size_t, EvidenceEntry> best;
  for (const auto& t : filtered) {
    if (t.label != spl::PreferenceLabel::kConsistent) continue;
    if (t.disease_index >= labeler.vocabulary().size()) throw ArityError("evidence: disease index out of range");
    double conf = model.predict(t.candidate, t.reference)[0];
    auto it = best.find(t.disease_index);
    if (it != best.end()) {
      const auto& cur = it->second;
      auto better = std::make_tuple(-conf, t.observation_index, t.candidate.size()) <
                    std::make_tuple(-cur.confidence, cur.observation_index, cur.supporting_description.size());
      if (!better) continue;
    }
    EvidenceEntry e;
    e.disease_index = t.disease_index;
    e.trusted_status = labeler.extract(t.candidate).at(t.disease_index);
    e.supporting_description = t.candidate;
    e.confidence = conf;
    e.observation_index = t.observation_index;
    best[t.disease_index] = std::move(e);
  }
  TrustedEvidence out;
  for (auto& [k, e] : best) out.entries.push_back(std::move(e));
  return out;
}

std::string RefinementPrompt::user_text() const {
  return instruction_text + "\n\n" + evidence_text + "\n\n" + candidates_text;
}

RefinementPrompt build_prompt(const TrustedEvidence& evidence, std::span<const std::string> observations,
                              const DiseaseVocabulary& vocab) {
  RefinementPrompt p;
  p.system_text =
      "You are an expert radiologist. You merge several draft chest X-ray reports for the same image "
      "into one final report.";
  p.instruction_text =
      "Instructions:\n"
      "1. Remove every sentence that contradicts the trusted disease evidence.\n"
      "2. Retain descriptions supported by the trusted evidence.\n"
      "3. Do not introduce any finding that is absent from the candidate reports.\n"
      "4. Output a single coherent report and nothing else.";
  if (evidence.empty()) {
    p.evidence_text = "Trusted disease evidence:\nNo trusted constraints are available for this study.";
  } else {
    p.evidence_text = "Trusted disease evidence:";
    for (const auto& e : evidence.entries) {
      p.evidence_text += "\n- " + vocab.label(e.disease_index) + " (" + std::string(status_name(e.trusted_status)) +
                         "): " + e.supporting_description;
    }
  }
  p.candidates_text = "Candidate reports:";
  for (std::size_t n = 0; n < observations.size(); ++n) {
    p.candidates_text += "\n[" + std::to_string(n + 1) + "] " + observations[n];
  }
  return p;
}

RulesRefiner::RulesRefiner(labeler::Lexicon lexicon) : lexicon_(std::move(lexicon)) {}

std::string RulesRefiner::refine(const TrustedEvidence& evidence, std::span<const std::string> observations) const {
  struct Kept {
    std::size_t first_disease;
    std::size_t position;
    std::string sentence;
  };
  std::vector<Kept> kept;
  std::set<std::string> seen;
  std::size_t position = 0;
  for (const auto& obs : observations) {
    for (auto& sentence : text::split_sentences(obs)) {
      const std::size_t pos = position++;
      auto reading = lexicon_.read(sentence);
      bool contradicted = false;
      for (auto k : reading.diseases) {
        const auto* e = evidence.find(k);
        if (!e) continue;
        // A trusted blank rules out asserting the finding.
        if (contradicts(reading.status, e->trusted_status) ||
            (e->trusted_status == DiseaseStatus::kBlank && reading.status == DiseaseStatus::kPositive)) {
          contradicted = true;
        }
      }
      if (contradicted) continue;
      // Joined output is re-split on terminators; keep sentence boundaries.
      if (char last = sentence.back(); last != '.' && last != '!' && last != '?') sentence.push_back('.');
      if (!seen.insert(text::normalize(sentence)).second) continue;
      std::size_t first = reading.diseases.empty() ? lexicon_.no_finding_index() : reading.diseases.front();
      kept.push_back({first, pos, std::move(sentence)});
    }
  }
  std::stable_sort(kept.begin(), kept.end(), [](const Kept& a, const Kept& b) {
    return std::tie(a.first_disease, a.position) < std::tie(b.first_disease, b.position);
  });
  std::vector<std::string> parts;
  parts.reserve(kept.size());
  for (auto& k : kept) parts.push_back(std::move(k.sentence));
  return text::join(parts);
}

LlmRefiner::LlmRefiner(net::ChatConfig cfg, DiseaseVocabulary vocab,
                       std::shared_ptr<const labeler::LabelerBackend> labeler, std::shared_ptr<const Refiner> fallback)
    : client_(std::move(cfg)), vocab_(std::move(vocab)), labeler_(std::move(labeler)), fallback_(std::move(fallback)) {
  if (!labeler_) throw ConfigError("LLM refiner needs a labeler for the contradiction check");
}

std::string LlmRefiner::refine(const TrustedEvidence& evidence, std::span<const std::string> observations) const {
  auto prompt = build_prompt(evidence, observations, vocab_);
  std::string report;
  try {
    report = text::trim(client_.complete(prompt.system_text, prompt.user_text()));
    if (report.empty()) throw ProtocolError("LLM refiner returned an empty report");
  } catch (const Error& e) {
    if (!fallback_) throw;
    std::cerr << "warning: LLM refinement failed (" << e.what() << "); using fallback\n";
    return fallback_->refine(evidence, observations);
  }
  for (auto k : contradicted_diseases(report, evidence, *labeler_)) {
    std::cerr << "warning: refined report contradicts trusted evidence for " << vocab_.label(k) << "\n";
  }
  return report;
}

std::vector<std::size_t> contradicted_diseases(const std::string& report, const TrustedEvidence& evidence,
                                               const labeler::LabelerBackend& labeler) {
  std::vector<std::size_t> out;
  if (evidence.empty()) return out;
  auto status = labeler.extract(report);
  for (const auto& e : evidence.entries) {
    if (contradicts(status.at(e.disease_index), e.trusted_status)) out.push_back(e.disease_index);
  }
  return out;
}

}  // namespace escrl::refine
