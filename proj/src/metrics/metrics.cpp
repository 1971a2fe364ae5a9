#include "escrl/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>

#include "escrl/error.hpp"
#include "escrl/text.hpp"

namespace escrl::metrics {
namespace {

using Tokens = std::vector<std::string>;
using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const Tokens& toks, std::size_t n) {
  NgramCounts out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++out[Tokens(toks.begin() + i, toks.begin() + i + n)];
  return out;
}

struct BleuStats {
  std::array<std::size_t, 4> matched{};
  std::array<std::size_t, 4> total{};
  std::size_t cand_len = 0;
  std::size_t ref_len = 0;
};

void check_order(int max_n) {
  if (max_n < 1 || max_n > 4) throw ConfigError("BLEU order must be in 1..4, got " + std::to_string(max_n));
}

void accumulate(BleuStats& s, const Tokens& cand, const std::vector<Tokens>& refs, int max_n) {
  s.cand_len += cand.size();
  std::size_t best = 0;
  std::size_t best_diff = std::numeric_limits<std::size_t>::max();
  for (const auto& r : refs) {
    std::size_t diff = r.size() > cand.size() ? r.size() - cand.size() : cand.size() - r.size();
    if (diff < best_diff || (diff == best_diff && r.size() < best)) {
      best = r.size();
      best_diff = diff;
    }
  }
  s.ref_len += best;
  for (int n = 1; n <= max_n; ++n) {
    auto cand_counts = ngrams(cand, static_cast<std::size_t>(n));
    NgramCounts max_ref;
    for (const auto& r : refs) {
      for (auto& [g, c] : ngrams(r, static_cast<std::size_t>(n))) max_ref[g] = std::max(max_ref[g], c);
    }
    for (const auto& [g, c] : cand_counts) {
      auto it = max_ref.find(g);
      s.matched[n - 1] += it == max_ref.end() ? 0 : std::min(c, it->second);
      s.total[n - 1] += c;
    }
  }
}

double score(const BleuStats& s, int max_n) {
  if (s.cand_len == 0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < max_n; ++n) {
    if (s.matched[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(s.matched[n]) / static_cast<double>(s.total[n]));
  }
  double bp = s.cand_len > s.ref_len
                  ? 1.0
                  : std::exp(1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.cand_len));
  return bp * std::exp(log_sum / max_n);
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double bleu(const std::string& candidate, std::span<const std::string> references, int max_n) {
  check_order(max_n);
  std::vector<Tokens> refs;
  for (const auto& r : references) refs.push_back(text::tokenize(r));
  BleuStats s;
  accumulate(s, text::tokenize(candidate), refs, max_n);
  return score(s, max_n);
}

double corpus_bleu(std::span<const std::string> candidates, std::span<const std::vector<std::string>> references,
                   int max_n) {
  check_order(max_n);
  if (candidates.size() != references.size()) throw ArityError("corpus_bleu: candidate and reference counts differ");
  BleuStats s;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    std::vector<Tokens> refs;
    for (const auto& r : references[i]) refs.push_back(text::tokenize(r));
    accumulate(s, text::tokenize(candidates[i]), refs, max_n);
  }
  return score(s, max_n);
}

double rouge_l(const std::string& candidate, const std::string& reference, double beta) {
  auto c = text::tokenize(candidate);
  auto r = text::tokenize(reference);
  if (c.empty() || r.empty()) return 0.0;
  auto lcs = static_cast<double>(lcs_length(c, r));
  if (lcs == 0.0) return 0.0;
  double p = lcs / static_cast<double>(c.size());
  double rec = lcs / static_cast<double>(r.size());
  double b2 = beta * beta;
  return (1.0 + b2) * p * rec / (rec + b2 * p);
}

double corpus_rouge_l(std::span<const std::string> candidates, std::span<const std::string> references, double beta) {
  if (candidates.size() != references.size()) throw ArityError("corpus_rouge_l: candidate and reference counts differ");
  if (candidates.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) sum += rouge_l(candidates[i], references[i], beta);
  return sum / static_cast<double>(candidates.size());
}

Prf prf(const Counts& c) {
  Prf out;
  if (c.tp + c.fp > 0) out.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) out.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (out.precision + out.recall > 0.0) {
    out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
  }
  return out;
}

CeReport ce_from_statuses(std::span<const StatusVector> pred, std::span<const StatusVector> gt,
                          const DiseaseVocabulary& vocab, bool uncertain_positive) {
  if (pred.size() != gt.size()) {
    throw ArityError("ce_metrics: " + std::to_string(pred.size()) + " predictions vs " + std::to_string(gt.size()) +
                     " references");
  }
  const std::size_t k_count = vocab.size();
  auto positive = [&](DiseaseStatus s) {
    return s == DiseaseStatus::kPositive || (uncertain_positive && s == DiseaseStatus::kUncertain);
  };
  CeReport rep;
  rep.labels = vocab.labels();
  rep.per_disease.assign(k_count, {});
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].size() != k_count || gt[i].size() != k_count) throw ArityError("ce_metrics: status vector arity");
    for (std::size_t k = 0; k < k_count; ++k) {
      bool p = positive(pred[i][k]);
      bool g = positive(gt[i][k]);
      auto& c = rep.per_disease[k];
      if (p && g) ++c.tp;
      else if (p) ++c.fp;
      else if (g) ++c.fn;
    }
  }
  Counts total;
  for (const auto& c : rep.per_disease) {
    total.tp += c.tp;
    total.fp += c.fp;
    total.fn += c.fn;
    auto s = prf(c);
    rep.macro.precision += s.precision;
    rep.macro.recall += s.recall;
    rep.macro.f1 += s.f1;
  }
  if (k_count > 0) {
    rep.macro.precision /= static_cast<double>(k_count);
    rep.macro.recall /= static_cast<double>(k_count);
    rep.macro.f1 /= static_cast<double>(k_count);
  }
  rep.micro = prf(total);
  return rep;
}

CeReport ce_metrics(std::span<const std::string> pred_reports, std::span<const std::string> gt_reports,
                    const labeler::LabelerBackend& labeler, bool uncertain_positive) {
  if (pred_reports.size() != gt_reports.size()) {
    throw ArityError("ce_metrics: " + std::to_string(pred_reports.size()) + " predictions vs " +
                     std::to_string(gt_reports.size()) + " references");
  }
  std::vector<StatusVector> p, g;
  p.reserve(pred_reports.size());
  g.reserve(gt_reports.size());
  for (const auto& r : pred_reports) p.push_back(labeler.extract(r));
  for (const auto& r : gt_reports) g.push_back(labeler.extract(r));
  return ce_from_statuses(p, g, labeler.vocabulary(), uncertain_positive);
}

Evaluation evaluate_reports(std::span<const std::string> pred_reports, std::span<const std::string> gt_reports,
                            const labeler::LabelerBackend& labeler, bool uncertain_positive) {
  Evaluation e;
  e.ce = ce_metrics(pred_reports, gt_reports, labeler, uncertain_positive);
  std::vector<std::vector<std::string>> refs;
  refs.reserve(gt_reports.size());
  for (const auto& g : gt_reports) refs.push_back({g});
  e.bleu1 = corpus_bleu(pred_reports, refs, 1);
  e.bleu4 = corpus_bleu(pred_reports, refs, 4);
  e.rouge_l = corpus_rouge_l(pred_reports, gt_reports);
  return e;
}

std::string to_json(const Evaluation& e, std::size_t num_studies) {
  auto block = [](const Prf& s) {
    nlohmann::ordered_json j;
    j["precision"] = s.precision;
    j["recall"] = s.recall;
    j["f1"] = s.f1;
    return j;
  };
  nlohmann::ordered_json j;
  j["n"] = num_studies;
  j["bleu1"] = e.bleu1;
  j["bleu4"] = e.bleu4;
  j["rouge_l"] = e.rouge_l;
  nlohmann::ordered_json ce;
  ce["micro"] = block(e.ce.micro);
  ce["macro"] = block(e.ce.macro);
  auto per = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < e.ce.per_disease.size(); ++k) {
    const auto& c = e.ce.per_disease[k];
    nlohmann::ordered_json d;
    d["label"] = e.ce.labels[k];
    d["tp"] = c.tp;
    d["fp"] = c.fp;
    d["fn"] = c.fn;
    auto s = prf(c);
    d["precision"] = s.precision;
    d["recall"] = s.recall;
    d["f1"] = s.f1;
    per.push_back(std::move(d));
  }
  ce["per_disease"] = std::move(per);
  j["ce"] = std::move(ce);
  return j.dump(2);
}

}  // namespace escrl::metrics
