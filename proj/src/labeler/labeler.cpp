#include "escrl/labeler.hpp"

#include <json.hpp>

#include "escrl/error.hpp"
#include "escrl/text.hpp"

namespace escrl::labeler {
namespace {

int strength(DiseaseStatus s) {
  switch (s) {
    case DiseaseStatus::kPositive: return 3;
    case DiseaseStatus::kUncertain: return 2;
    case DiseaseStatus::kNegative: return 1;
    case DiseaseStatus::kBlank: return 0;
  }
  return 0;
}

}  // namespace

RuleLabeler::RuleLabeler(DiseaseVocabulary vocab)
    : vocab_(std::move(vocab)), lexicon_(Lexicon::for_vocabulary(vocab_)) {}

StatusVector RuleLabeler::extract(std::string_view report) const {
  StatusVector out(vocab_.size(), DiseaseStatus::kBlank);
  for (const auto& sentence : text::split_sentences(report)) {
    auto reading = lexicon_.read(sentence);
    for (auto k : reading.diseases) {
      if (strength(reading.status) > strength(out[k])) out[k] = reading.status;
    }
  }
  return out;
}

RemoteLabeler::RemoteLabeler(DiseaseVocabulary vocab, net::Endpoint endpoint)
    : vocab_(std::move(vocab)), endpoint_(std::move(endpoint)) {}

StatusVector RemoteLabeler::extract(std::string_view report) const {
  nlohmann::json req = {{"report", std::string(report)}, {"labels", vocab_.labels()}};
  auto body = net::post_json(endpoint_, req.dump());
  nlohmann::json res;
  try {
    res = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("labeler returned invalid JSON: ") + e.what());
  }
  if (!res.is_object() || !res.contains("statuses") || !res["statuses"].is_array()) {
    throw ProtocolError("labeler response lacks a \"statuses\" array");
  }
  const auto& arr = res["statuses"];
  if (arr.size() != vocab_.size()) {
    throw ProtocolError("labeler returned " + std::to_string(arr.size()) + " statuses, expected " +
                        std::to_string(vocab_.size()));
  }
  StatusVector out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number_integer()) throw ProtocolError("labeler status is not an integer");
    int code = v.get<int>();
    if (code < 0 || code > 3) throw ProtocolError("labeler status out of range: " + std::to_string(code));
    out.push_back(static_cast<DiseaseStatus>(code));
  }
  return out;
}

Segmentation segment(std::string_view report, const Lexicon& lexicon) {
  Segmentation seg;
  seg.sentences = text::split_sentences(report);
  std::vector<std::vector<std::string>> parts(lexicon.size());
  for (const auto& sentence : seg.sentences) {
    auto diseases = lexicon.read(sentence).diseases;
    if (diseases.empty() && lexicon.no_finding_index() < lexicon.size()) {
      diseases.push_back(lexicon.no_finding_index());
    }
    for (auto k : diseases) parts[k].push_back(sentence);
    seg.assignment.push_back(std::move(diseases));
  }
  seg.descriptions.reserve(parts.size());
  for (const auto& p : parts) seg.descriptions.push_back(text::join(p));
  return seg;
}

DescriptionSet segment_descriptions(std::string_view report, const Lexicon& lexicon) {
  return segment(report, lexicon).descriptions;
}

DescriptionSet segment_descriptions(std::string_view report, const DiseaseVocabulary& vocab) {
  return segment_descriptions(report, Lexicon::for_vocabulary(vocab));
}

}  // namespace escrl::labeler
