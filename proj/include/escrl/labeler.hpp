#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "escrl/http.hpp"
#include "escrl/lexicon.hpp"
#include "escrl/types.hpp"

namespace escrl::labeler {

// Maps report text to one status per vocabulary entry.
class LabelerBackend {
 public:
  virtual ~LabelerBackend() = default;
  virtual StatusVector extract(std::string_view report) const = 0;
  virtual const DiseaseVocabulary& vocabulary() const = 0;
};

// Deterministic keyword/cue labeler. When a disease is mentioned in several
// sentences the strongest reading wins: positive, then uncertain, then
// negative.
class RuleLabeler final : public LabelerBackend {
 public:
  explicit RuleLabeler(DiseaseVocabulary vocab);

  StatusVector extract(std::string_view report) const override;
  const DiseaseVocabulary& vocabulary() const override { return vocab_; }
  const Lexicon& lexicon() const noexcept { return lexicon_; }

 private:
  DiseaseVocabulary vocab_;
  Lexicon lexicon_;
};

// POST {"report": str, "labels": [str]} -> {"statuses": [int]}.
class RemoteLabeler final : public LabelerBackend {
 public:
  RemoteLabeler(DiseaseVocabulary vocab, net::Endpoint endpoint);

  StatusVector extract(std::string_view report) const override;
  const DiseaseVocabulary& vocabulary() const override { return vocab_; }

 private:
  DiseaseVocabulary vocab_;
  net::Endpoint endpoint_;
};

inline StatusVector extract_status(std::string_view report, const LabelerBackend& backend) {
  return backend.extract(report);
}

// Per-disease text: the whole sentences of the report assigned to each
// disease, joined by single spaces. Empty when nothing was assigned.
using DescriptionSet = std::vector<std::string>;

struct Segmentation {
  std::vector<std::string> sentences;
  // For each sentence, the diseases it was assigned to (ascending).
  std::vector<std::vector<std::size_t>> assignment;
  DescriptionSet descriptions;
};

// Keyword assignment with multi-assignment; sentences matching no disease go
// to "No Finding" when the vocabulary has it and are dropped otherwise.
Segmentation segment(std::string_view report, const Lexicon& lexicon);
DescriptionSet segment_descriptions(std::string_view report, const Lexicon& lexicon);
DescriptionSet segment_descriptions(std::string_view report, const DiseaseVocabulary& vocab);

}  // namespace escrl::labeler
