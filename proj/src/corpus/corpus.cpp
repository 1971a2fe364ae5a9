#include "escrl/corpus.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <unordered_set>

#include "escrl/error.hpp"
#include "escrl/hash.hpp"
#include "escrl/random.hpp"

namespace escrl::corpus {

using nlohmann::json;

std::string to_json_line(const StudyRecord& r) {
  json j;
  j["study_id"] = r.study_id;
  j["image_ref"] = r.image_ref ? json(*r.image_ref) : json(nullptr);
  j["ground_truth_report"] = r.ground_truth_report;
  j["candidate_observations"] = r.candidate_observations;
  j["ground_truth_status"] = r.ground_truth_status ? json(to_ints(*r.ground_truth_status)) : json(nullptr);
  return j.dump();
}

StudyRecord parse_record(const std::string& line, const DiseaseVocabulary& vocab, std::size_t line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
  }
  if (!j.is_object()) throw ParseError("record is not a JSON object", line_no);

  auto require_string = [&](const char* field) -> std::string {
    if (!j.contains(field)) throw ParseError(std::string("missing field \"") + field + "\"", line_no);
    if (!j[field].is_string()) throw ParseError(std::string("field \"") + field + "\" must be a string", line_no);
    return j[field].get<std::string>();
  };

  StudyRecord r;
  r.study_id = require_string("study_id");
  if (r.study_id.empty()) throw ParseError("field \"study_id\" is empty", line_no);
  r.ground_truth_report = require_string("ground_truth_report");

  if (j.contains("image_ref") && !j["image_ref"].is_null()) {
    if (!j["image_ref"].is_string()) throw ParseError("field \"image_ref\" must be a string or null", line_no);
    r.image_ref = j["image_ref"].get<std::string>();
  }
  if (j.contains("candidate_observations") && !j["candidate_observations"].is_null()) {
    const auto& arr = j["candidate_observations"];
    if (!arr.is_array()) throw ParseError("field \"candidate_observations\" must be an array", line_no);
    for (const auto& v : arr) {
      if (!v.is_string()) throw ParseError("candidate observation must be a string", line_no);
      r.candidate_observations.push_back(v.get<std::string>());
    }
  }
  if (j.contains("ground_truth_status") && !j["ground_truth_status"].is_null()) {
    const auto& arr = j["ground_truth_status"];
    if (!arr.is_array()) throw ParseError("field \"ground_truth_status\" must be an array", line_no);
    if (arr.size() != vocab.size()) {
      throw ParseError("field \"ground_truth_status\" has " + std::to_string(arr.size()) + " entries, expected " +
                           std::to_string(vocab.size()),
                       line_no);
    }
    StatusVector s;
    for (const auto& v : arr) {
      if (!v.is_number_integer()) throw ParseError("ground_truth_status entries must be integers", line_no);
      int code = v.get<int>();
      if (code < 0 || code > 3) throw ParseError("status code out of range: " + std::to_string(code), line_no);
      s.push_back(static_cast<DiseaseStatus>(code));
    }
    r.ground_truth_status = std::move(s);
  }
  return r;
}

std::vector<StudyRecord> load_corpus(const std::filesystem::path& path, const DiseaseVocabulary& vocab,
                                     std::optional<std::size_t> expected_candidates) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open corpus file: " + path.string());
  std::vector<StudyRecord> out;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    auto rec = parse_record(line, vocab, line_no);
    if (!ids.insert(rec.study_id).second) {
      throw ValidationError("line " + std::to_string(line_no) + ": duplicate study_id \"" + rec.study_id + "\"");
    }
    if (expected_candidates && !rec.candidate_observations.empty() &&
        rec.candidate_observations.size() != *expected_candidates) {
      throw ValidationError("line " + std::to_string(line_no) + ": study \"" + rec.study_id + "\" has " +
                            std::to_string(rec.candidate_observations.size()) + " candidate observations, expected " +
                            std::to_string(*expected_candidates));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

void write_corpus(const std::filesystem::path& path, const std::vector<StudyRecord>& records) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open for writing: " + path.string());
    for (const auto& r : records) out << to_json_line(r) << '\n';
    out.flush();
    if (!out) {
      out.close();
      std::filesystem::remove(tmp);
      throw Error("write failed: " + path.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error("cannot move corpus into place: " + path.string() + ": " + ec.message());
  }
}

void SyntheticCorpusConfig::validate() const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
  };
  prob(positive_rate, "positive_rate");
  prob(negative_mention_rate, "negative_mention_rate");
  prob(uncertain_rate, "uncertain_rate");
  prob(noise_rate, "noise_rate");
  if (negative_mention_rate + uncertain_rate > 1.0) {
    throw ConfigError("negative_mention_rate + uncertain_rate must not exceed 1");
  }
  if (num_candidates == 0) throw ConfigError("num_candidates must be at least 1");
  if (templates_per_disease == 0 || templates_per_disease > labeler::Lexicon::kTemplatesPerStatus) {
    throw ConfigError("templates_per_disease must lie in [1, " +
                      std::to_string(labeler::Lexicon::kTemplatesPerStatus) + "]");
  }
}

ComposedReport compose_report(const labeler::Lexicon& lexicon, const StatusVector& statuses,
                              const std::vector<std::size_t>& template_choice) {
  if (statuses.size() != lexicon.size() || template_choice.size() != lexicon.size()) {
    throw ArityError("compose_report: status and template vectors must match the vocabulary");
  }
  ComposedReport out;
  for (std::size_t k = 0; k < statuses.size(); ++k) {
    if (statuses[k] == DiseaseStatus::kBlank) continue;
    if (!out.text.empty()) out.text.push_back(' ');
    out.text += lexicon.sentence(k, statuses[k], template_choice[k]);
    out.sentence_disease.push_back(k);
  }
  return out;
}

namespace {

DiseaseStatus perturb(DiseaseStatus gt, Rng& rng) {
  switch (gt) {
    case DiseaseStatus::kPositive:
      return bernoulli(rng, 0.5) ? DiseaseStatus::kBlank : DiseaseStatus::kNegative;
    case DiseaseStatus::kNegative:
      return bernoulli(rng, 0.5) ? DiseaseStatus::kBlank : DiseaseStatus::kPositive;
    case DiseaseStatus::kUncertain:
      return DiseaseStatus::kBlank;
    case DiseaseStatus::kBlank:
      return DiseaseStatus::kPositive;
  }
  return gt;
}

}  // namespace

std::vector<SyntheticStudy> generate_synthetic_studies(const SyntheticCorpusConfig& cfg,
                                                       const DiseaseVocabulary& vocab) {
  cfg.validate();
  auto lexicon = labeler::Lexicon::for_vocabulary(vocab);
  const std::size_t k_count = vocab.size();
  std::vector<SyntheticStudy> out;
  out.reserve(cfg.num_studies);
  char id_buf[32];
  for (std::size_t i = 0; i < cfg.num_studies; ++i) {
    Rng rng(mix64(Fnv1a{}.add(cfg.seed).add(static_cast<std::uint64_t>(i)).value()));

    StatusVector gt(k_count, DiseaseStatus::kBlank);
    std::vector<std::size_t> gt_templates(k_count);
    for (std::size_t k = 0; k < k_count; ++k) {
      if (bernoulli(rng, cfg.positive_rate)) {
        gt[k] = DiseaseStatus::kPositive;
      } else {
        double u = uniform01(rng);
        if (u < cfg.negative_mention_rate) {
          gt[k] = DiseaseStatus::kNegative;
        } else if (u < cfg.negative_mention_rate + cfg.uncertain_rate) {
          gt[k] = DiseaseStatus::kUncertain;
        }
      }
      gt_templates[k] = uniform_index(rng, cfg.templates_per_disease);
    }

    SyntheticStudy study;
    study.ground_truth = compose_report(lexicon, gt, gt_templates);
    std::snprintf(id_buf, sizeof(id_buf), "study-%05zu", i);
    study.record.study_id = id_buf;
    study.record.image_ref = std::string("synthetic://") + id_buf;
    study.record.ground_truth_report = study.ground_truth.text;
    study.record.ground_truth_status = gt;

    for (std::size_t n = 0; n < cfg.num_candidates; ++n) {
      StatusVector cand(k_count);
      std::vector<std::size_t> tpl(k_count);
      for (std::size_t k = 0; k < k_count; ++k) {
        cand[k] = bernoulli(rng, cfg.noise_rate) ? perturb(gt[k], rng) : gt[k];
        tpl[k] = uniform_index(rng, cfg.templates_per_disease);
      }
      study.record.candidate_observations.push_back(compose_report(lexicon, cand, tpl).text);
      study.candidate_status.push_back(std::move(cand));
    }
    out.push_back(std::move(study));
  }
  return out;
}

std::vector<StudyRecord> generate_synthetic_corpus(const SyntheticCorpusConfig& cfg, const DiseaseVocabulary& vocab) {
  auto studies = generate_synthetic_studies(cfg, vocab);
  std::vector<StudyRecord> out;
  out.reserve(studies.size());
  for (auto& s : studies) out.push_back(std::move(s.record));
  return out;
}

}  // namespace escrl::corpus
