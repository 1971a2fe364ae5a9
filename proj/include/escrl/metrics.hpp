#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "escrl/labeler.hpp"
#include "escrl/types.hpp"

namespace escrl::metrics {

// Tokens are lowercased ASCII alphanumeric runs.

// Sentence BLEU with uniform weights over 1..max_n, clipped n-gram counts,
// brevity penalty against the closest reference length (shorter on ties)
// and no smoothing. max_n outside 1..4 raises ConfigError.
double bleu(const std::string& candidate, std::span<const std::string> references, int max_n);
// Counts pooled over the corpus before the geometric mean.
double corpus_bleu(std::span<const std::string> candidates, std::span<const std::vector<std::string>> references,
                   int max_n);

inline constexpr double kRougeBeta = 1.2;

// LCS F-measure ((1 + b^2) P R) / (R + b^2 P); 0 when either side is empty.
double rouge_l(const std::string& candidate, const std::string& reference, double beta = kRougeBeta);
// Mean of sentence scores.
double corpus_rouge_l(std::span<const std::string> candidates, std::span<const std::string> references,
                      double beta = kRougeBeta);

struct Counts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Zero denominators give 0.
Prf prf(const Counts& c);

struct CeReport {
  std::vector<std::string> labels;
  std::vector<Counts> per_disease;
  Prf micro;
  Prf macro;  // unweighted mean of per-disease scores
};

// Positive class is status 1 only unless `uncertain_positive` also counts 3.
CeReport ce_from_statuses(std::span<const StatusVector> pred, std::span<const StatusVector> gt,
                          const DiseaseVocabulary& vocab, bool uncertain_positive = false);
CeReport ce_metrics(std::span<const std::string> pred_reports, std::span<const std::string> gt_reports,
                    const labeler::LabelerBackend& labeler, bool uncertain_positive = false);

struct Evaluation {
  double bleu1 = 0.0;
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  CeReport ce;
};

Evaluation evaluate_reports(std::span<const std::string> pred_reports, std::span<const std::string> gt_reports,
                            const labeler::LabelerBackend& labeler, bool uncertain_positive = false);

// {"n","bleu1","bleu4","rouge_l","ce":{"micro":{...},"macro":{...},"per_disease":[...]}}
std::string to_json(const Evaluation& e, std::size_t num_studies);

}  // namespace escrl::metrics
