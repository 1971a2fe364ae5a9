#include "escrl/lexicon.hpp"

#include <algorithm>
#include <map>

#include "escrl/error.hpp"
#include "escrl/text.hpp"

namespace escrl::labeler {
namespace {

const std::array<std::vector<std::string>, 3>& generic_templates() {
  static const std::array<std::vector<std::string>, 3> kTemplates = {{
      {"There is {}.", "{} is present.", "Findings are consistent with {}.", "{} is seen."},
      {"No {}.", "There is no {}.", "No evidence of {}.", "{} is not seen."},
      {"Possible {}.", "{} cannot be excluded.", "There may be {}.", "Findings are suspicious for {}."},
  }};
  return kTemplates;
}

const std::map<std::string, LexiconEntry>& builtin_entries() {
  static const std::map<std::string, LexiconEntry> kEntries = [] {
    std::vector<LexiconEntry> list = {
        {"Enlarged Cardiomediastinum",
         {"enlarged cardiomediastinum", "widened mediastinum", "mediastinal widening"},
         "enlarged cardiomediastinum", {}},
        {"Cardiomegaly", {"cardiomegaly", "enlarged cardiac silhouette", "enlarged heart"}, "cardiomegaly", {}},
        {"Lung Opacity", {"lung opacity", "opacity", "opacities", "opacification"}, "lung opacity", {}},
        {"Lung Lesion", {"lung lesion", "lesion", "lesions", "nodule", "nodules", "mass"}, "lung lesion", {}},
        {"Edema", {"edema", "oedema"}, "pulmonary edema", {}},
        {"Consolidation", {"consolidation", "consolidations"}, "consolidation", {}},
        {"Pneumonia", {"pneumonia"}, "pneumonia", {}},
        {"Atelectasis", {"atelectasis", "atelectatic"}, "atelectasis", {}},
        {"Pneumothorax", {"pneumothorax", "pneumothoraces"}, "pneumothorax", {}},
        {"Pleural Effusion", {"pleural effusion", "pleural effusions", "effusion", "effusions"}, "pleural effusion", {}},
        {"Pleural Other", {"pleural thickening", "pleural plaque", "pleural plaques", "pleural scarring"},
         "pleural thickening", {}},
        {"Fracture", {"fracture", "fractures"}, "rib fracture", {}},
        {"Support Devices",
         {"support hardware", "support device", "support devices", "endotracheal tube", "pacemaker", "catheter"},
         "support hardware", {}},
        {"No Finding",
         {"unremarkable"},
         "unremarkable study",
         {{
             {"The study is unremarkable.", "Unremarkable chest radiograph.", "The chest radiograph is unremarkable.",
              "The examination is unremarkable."},
             {"The study is not unremarkable.", "The chest radiograph is not unremarkable.",
              "The examination is not unremarkable.", "This is not an unremarkable study."},
             {"The study may be unremarkable.", "The study is possibly unremarkable.",
              "The examination might be unremarkable.", "The chest radiograph is possibly unremarkable."},
         }}},
    };
    std::map<std::string, LexiconEntry> m;
    for (auto& e : list) m.emplace(e.label, std::move(e));
    return m;
  }();
  return kEntries;
}

bool contains_phrase(const std::vector<std::string>& tokens, const std::vector<std::string>& phrase) {
  if (phrase.empty() || phrase.size() > tokens.size()) return false;
  for (std::size_t i = 0; i + phrase.size() <= tokens.size(); ++i) {
    if (std::equal(phrase.begin(), phrase.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i))) return true;
  }
  return false;
}

bool contains_any(const std::vector<std::string>& tokens, const std::vector<std::vector<std::string>>& cues) {
  return std::any_of(cues.begin(), cues.end(), [&](const auto& cue) { return contains_phrase(tokens, cue); });
}

}  // namespace

const std::vector<std::string>& Lexicon::negation_cues() {
  static const std::vector<std::string> kCues = {"no", "not", "without", "resolved", "negative for", "free of",
                                                 "absent"};
  return kCues;
}

const std::vector<std::string>& Lexicon::uncertainty_cues() {
  static const std::vector<std::string> kCues = {"possible", "possibly", "may", "might", "cannot exclude",
                                                 "cannot be excluded", "probable", "suspicious for",
                                                 "questionable", "suspected"};
  return kCues;
}

Lexicon Lexicon::for_vocabulary(const DiseaseVocabulary& vocab) {
  Lexicon lex;
  for (const auto& c : negation_cues()) lex.negation_.push_back(text::tokenize(c));
  for (const auto& c : uncertainty_cues()) lex.uncertainty_.push_back(text::tokenize(c));
  const auto& builtin = builtin_entries();
  for (std::size_t k = 0; k < vocab.size(); ++k) {
    const auto& label = vocab.label(k);
    auto it = builtin.find(label);
    LexiconEntry e;
    if (it != builtin.end()) {
      e = it->second;
    } else {
      auto lowered = text::normalize(label);
      e = LexiconEntry{label, {lowered}, lowered, {}};
    }
    for (const auto& kw : e.keywords) {
      auto toks = text::tokenize(kw);
      if (toks.empty()) throw ValidationError("label has no matchable keyword: " + label);
      lex.phrases_.push_back({std::move(toks), k});
    }
    lex.entries_.push_back(std::move(e));
  }
  lex.no_finding_ = vocab.index_of("No Finding").value_or(vocab.size());
  return lex;
}

std::string Lexicon::sentence(std::size_t k, DiseaseStatus status, std::size_t template_index) const {
  if (status == DiseaseStatus::kBlank) throw ValidationError("blank status has no template sentence");
  const auto& e = entry(k);
  std::size_t slot = status == DiseaseStatus::kPositive ? 0 : status == DiseaseStatus::kNegative ? 1 : 2;
  const auto& bank = e.templates[slot].empty() ? generic_templates()[slot] : e.templates[slot];
  std::string tpl = bank.at(template_index % bank.size());
  auto pos = tpl.find("{}");
  if (pos != std::string::npos) tpl.replace(pos, 2, e.noun_phrase);
  return text::capitalize(tpl);
}

SentenceReading Lexicon::read(std::string_view sentence) const {
  SentenceReading out;
  auto tokens = text::tokenize(sentence);
  for (const auto& p : phrases_) {
    if (contains_phrase(tokens, p.tokens)) out.diseases.push_back(p.disease);
  }
  std::sort(out.diseases.begin(), out.diseases.end());
  out.diseases.erase(std::unique(out.diseases.begin(), out.diseases.end()), out.diseases.end());
  if (out.diseases.empty()) return out;
  if (contains_any(tokens, uncertainty_)) {
    out.status = DiseaseStatus::kUncertain;
  } else if (contains_any(tokens, negation_)) {
    out.status = DiseaseStatus::kNegative;
  } else {
    out.status = DiseaseStatus::kPositive;
  }
  return out;
}

}  // namespace escrl::labeler
