#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "escrl/labeler.hpp"
#include "escrl/llm.hpp"
#include "escrl/predictor.hpp"
#include "escrl/spl.hpp"

namespace escrl::refine {

struct EvidenceEntry {
  std::size_t disease_index = 0;
  DiseaseStatus trusted_status = DiseaseStatus::kBlank;
  std::string supporting_description;
  double confidence = 0.0;  // predictor probability of (1,0)
  std::size_t observation_index = 0;

  bool operator==(const EvidenceEntry&) const = default;
};

// At most one entry per disease, ascending by disease index.
struct TrustedEvidence {
  std::vector<EvidenceEntry> entries;

  bool empty() const noexcept { return entries.empty(); }
  const EvidenceEntry* find(std::size_t disease_index) const;
  bool operator==(const TrustedEvidence&) const = default;
};

// Among retained (1,0) triplets of each disease, the candidate description
// with the highest predictor confidence; ties go to the lowest observation
// index, then the shorter text. The trusted status is the labeler's reading
// of that description.
TrustedEvidence derive_trusted_evidence(std::span<const spl::PreferenceTriplet> filtered,
                                        const spl::PreferencePredictor& model,
                                        const labeler::LabelerBackend& labeler);

struct RefinementPrompt {
  std::string system_text;
  std::string instruction_text;
  std::string evidence_text;
  std::string candidates_text;

  // Instruction, evidence and candidates as one user message.
  std::string user_text() const;
  bool operator==(const RefinementPrompt&) const = default;
};

RefinementPrompt build_prompt(const TrustedEvidence& evidence, std::span<const std::string> observations,
                              const DiseaseVocabulary& vocab);

class Refiner {
 public:
  virtual ~Refiner() = default;
  virtual std::string refine(const TrustedEvidence& evidence, std::span<const std::string> observations) const = 0;
};

// Pools every sentence of every observation, drops sentences whose reading
// contradicts a trusted status (or asserts a finding trusted as blank),
// removes case/whitespace duplicates and orders the rest by (first assigned
// disease, original position).
class RulesRefiner final : public Refiner {
 public:
  explicit RulesRefiner(labeler::Lexicon lexicon);
  std::string refine(const TrustedEvidence& evidence, std::span<const std::string> observations) const override;

 private:
  labeler::Lexicon lexicon_;
};

// One chat completion per study. An empty response raises ProtocolError
// unless a fallback refiner is configured. Contradictions with the evidence
// are reported on stderr, not enforced.
class LlmRefiner final : public Refiner {
 public:
  LlmRefiner(net::ChatConfig cfg, DiseaseVocabulary vocab, std::shared_ptr<const labeler::LabelerBackend> labeler,
             std::shared_ptr<const Refiner> fallback = nullptr);
  std::string refine(const TrustedEvidence& evidence, std::span<const std::string> observations) const override;

 private:
  net::ChatClient client_;
  DiseaseVocabulary vocab_;
  std::shared_ptr<const labeler::LabelerBackend> labeler_;
  std::shared_ptr<const Refiner> fallback_;
};

// Evidence diseases whose status in `report` is the opposite polarity.
std::vector<std::size_t> contradicted_diseases(const std::string& report, const TrustedEvidence& evidence,
                                               const labeler::LabelerBackend& labeler);

}  // namespace escrl::refine
