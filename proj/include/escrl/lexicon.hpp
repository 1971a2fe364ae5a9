#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "escrl/types.hpp"

namespace escrl::labeler {

// Keyword phrases and sentence templates for one disease.
struct LexiconEntry {
  std::string label;
  std::vector<std::string> keywords;  // matched as whole-token phrases
  std::string noun_phrase;            // subject of the generic templates
  // Optional per-status template overrides, indexed positive/negative/uncertain.
  // "{}" is replaced by the noun phrase.
  std::array<std::vector<std::string>, 3> templates;
};

// Result of scanning a single sentence.
struct SentenceReading {
  std::vector<std::size_t> diseases;  // ascending, unique
  DiseaseStatus status = DiseaseStatus::kBlank;
};

// Rule table shared by the labeler, the synthetic corpus generator and the
// toy policy. Sentence cues apply to every disease mentioned in the sentence:
// an uncertainty cue wins over a negation cue; with neither the mention is
// positive.
class Lexicon {
 public:
  static constexpr std::size_t kTemplatesPerStatus = 4;

  // Built-in entries for the CheXbert labels; any other label falls back to
  // its lowercased name as the only keyword.
  static Lexicon for_vocabulary(const DiseaseVocabulary& vocab);

  std::size_t size() const noexcept { return entries_.size(); }
  const LexiconEntry& entry(std::size_t k) const { return entries_.at(k); }

  // Template sentence for (disease, status); status must not be blank.
  std::string sentence(std::size_t k, DiseaseStatus status, std::size_t template_index) const;

  SentenceReading read(std::string_view sentence) const;

  // Index of the catch-all label receiving unmatched sentences, or size()
  // when the vocabulary has none.
  std::size_t no_finding_index() const noexcept { return no_finding_; }

  static const std::vector<std::string>& negation_cues();
  static const std::vector<std::string>& uncertainty_cues();

 private:
  struct Phrase {
    std::vector<std::string> tokens;
    std::size_t disease;
  };
  std::vector<LexiconEntry> entries_;
  std::vector<Phrase> phrases_;
  std::vector<std::vector<std::string>> negation_;
  std::vector<std::vector<std::string>> uncertainty_;
  std::size_t no_finding_ = 0;
};

}  // namespace escrl::labeler
