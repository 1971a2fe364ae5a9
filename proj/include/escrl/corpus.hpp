#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "escrl/lexicon.hpp"
#include "escrl/types.hpp"

namespace escrl::corpus {

struct StudyRecord {
  std::string study_id;
  std::optional<std::string> image_ref;
  std::string ground_truth_report;
  std::vector<std::string> candidate_observations;
  std::optional<StatusVector> ground_truth_status;

  bool operator==(const StudyRecord&) const = default;
};

// One record as a single JSON line (no trailing newline). Keys are emitted in
// sorted order so output bytes depend only on the record.
std::string to_json_line(const StudyRecord& record);

// Parses one JSONL line; `line_no` is reported in errors.
StudyRecord parse_record(const std::string& line, const DiseaseVocabulary& vocab, std::size_t line_no);

// Reads a JSONL corpus. Blank lines are skipped. When `expected_candidates`
// is set, every record with candidate observations must carry exactly that
// many.
std::vector<StudyRecord> load_corpus(const std::filesystem::path& path, const DiseaseVocabulary& vocab,
                                     std::optional<std::size_t> expected_candidates = std::nullopt);

// Writes atomically: the data lands in a sibling temp file that is renamed
// over `path` only after a complete write.
void write_corpus(const std::filesystem::path& path, const std::vector<StudyRecord>& records);

struct SyntheticCorpusConfig {
  std::uint64_t seed = 0;
  std::size_t num_studies = 50;
  std::size_t num_candidates = 4;
  double positive_rate = 0.3;
  // For diseases not drawn positive: chance of an explicit negative or
  // uncertain mention; otherwise the disease is left blank.
  double negative_mention_rate = 0.25;
  double uncertain_rate = 0.05;
  // Per (candidate, disease): chance the candidate departs from the ground
  // truth (drop or flip a finding, or hallucinate one).
  double noise_rate = 0.2;
  std::size_t templates_per_disease = labeler::Lexicon::kTemplatesPerStatus;

  void validate() const;
};

// A report assembled from template sentences, with the disease each sentence
// was generated for.
struct ComposedReport {
  std::string text;
  std::vector<std::size_t> sentence_disease;
};

// Sentences appear in disease-index order; blank entries contribute nothing.
ComposedReport compose_report(const labeler::Lexicon& lexicon, const StatusVector& statuses,
                              const std::vector<std::size_t>& template_choice);

struct SyntheticStudy {
  StudyRecord record;
  ComposedReport ground_truth;
  std::vector<StatusVector> candidate_status;
};

std::vector<SyntheticStudy> generate_synthetic_studies(const SyntheticCorpusConfig& cfg,
                                                       const DiseaseVocabulary& vocab);
std::vector<StudyRecord> generate_synthetic_corpus(const SyntheticCorpusConfig& cfg, const DiseaseVocabulary& vocab);

}  // namespace escrl::corpus
