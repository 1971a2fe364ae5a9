#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace escrl {

// Per-disease status codes as produced by a report labeler.
enum class DiseaseStatus : std::uint8_t {
  kBlank = 0,
  kPositive = 1,
  kNegative = 2,
  kUncertain = 3,
};

using StatusVector = std::vector<DiseaseStatus>;

DiseaseStatus status_from_int(int code);  // throws ValidationError outside 0..3
inline int to_int(DiseaseStatus s) { return static_cast<int>(s); }
std::string_view status_name(DiseaseStatus s);

std::vector<int> to_ints(const StatusVector& v);
StatusVector from_ints(const std::vector<int>& codes);

// True for the positive/negative pair, in either order.
inline bool contradicts(DiseaseStatus a, DiseaseStatus b) {
  return (a == DiseaseStatus::kPositive && b == DiseaseStatus::kNegative) ||
         (a == DiseaseStatus::kNegative && b == DiseaseStatus::kPositive);
}

// Ordered, duplicate-free list of disease names. Indices are stable for the
// lifetime of the object.
class DiseaseVocabulary {
 public:
  explicit DiseaseVocabulary(std::vector<std::string> labels);

  // The 14 CheXbert observation labels.
  static DiseaseVocabulary chexbert14();
  // One label per line, UTF-8. Blank lines are ignored.
  static DiseaseVocabulary load(const std::filesystem::path& path);

  std::size_t size() const noexcept { return labels_.size(); }
  const std::string& label(std::size_t k) const { return labels_.at(k); }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  std::optional<std::size_t> index_of(std::string_view label) const;

  bool operator==(const DiseaseVocabulary&) const = default;

 private:
  std::vector<std::string> labels_;
};

}  // namespace escrl
