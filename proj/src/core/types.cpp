#include "escrl/types.hpp"

#include <fstream>
#include <unordered_set>

#include "escrl/error.hpp"

namespace escrl {

DiseaseStatus status_from_int(int code) {
  if (code < 0 || code > 3) {
    throw ValidationError("disease status code out of range: " + std::to_string(code));
  }
  return static_cast<DiseaseStatus>(code);
}

std::string_view status_name(DiseaseStatus s) {
  switch (s) {
    case DiseaseStatus::kBlank: return "blank";
    case DiseaseStatus::kPositive: return "positive";
    case DiseaseStatus::kNegative: return "negative";
    case DiseaseStatus::kUncertain: return "uncertain";
  }
  return "?";
}

std::vector<int> to_ints(const StatusVector& v) {
  std::vector<int> out;
  out.reserve(v.size());
  for (auto s : v) out.push_back(to_int(s));
  return out;
}

StatusVector from_ints(const std::vector<int>& codes) {
  StatusVector out;
  out.reserve(codes.size());
  for (int c : codes) out.push_back(status_from_int(c));
  return out;
}

DiseaseVocabulary::DiseaseVocabulary(std::vector<std::string> labels) : labels_(std::move(labels)) {
  if (labels_.empty()) throw ValidationError("vocabulary must contain at least one label");
  std::unordered_set<std::string> seen;
  for (const auto& l : labels_) {
    if (l.empty()) throw ValidationError("vocabulary contains an empty label");
    if (!seen.insert(l).second) throw ValidationError("duplicate vocabulary label: " + l);
  }
}

DiseaseVocabulary DiseaseVocabulary::chexbert14() {
  return DiseaseVocabulary({
      "Enlarged Cardiomediastinum",
      "Cardiomegaly",
      "Lung Opacity",
      "Lung Lesion",
      "Edema",
      "Consolidation",
      "Pneumonia",
      "Atelectasis",
      "Pneumothorax",
      "Pleural Effusion",
      "Pleural Other",
      "Fracture",
      "Support Devices",
      "No Finding",
  });
}

DiseaseVocabulary DiseaseVocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open vocabulary file: " + path.string());
  std::vector<std::string> labels;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    auto last = line.find_last_not_of(" \t");
    labels.push_back(line.substr(first, last - first + 1));
  }
  return DiseaseVocabulary(std::move(labels));
}

std::optional<std::size_t> DiseaseVocabulary::index_of(std::string_view label) const {
  for (std::size_t k = 0; k < labels_.size(); ++k) {
    if (labels_[k] == label) return k;
  }
  return std::nullopt;
}

}  // namespace escrl
