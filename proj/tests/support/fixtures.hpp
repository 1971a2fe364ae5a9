#pragma once

#include <httplib.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <thread>
#include <unistd.h>
#include <vector>

#include "escrl/corpus.hpp"
#include "escrl/gear.hpp"
#include "escrl/hash.hpp"
#include "escrl/grounding.hpp"
#include "escrl/labeler.hpp"
#include "escrl/random.hpp"
#include "escrl/spl.hpp"
#include "escrl/types.hpp"

namespace fixtures {

using escrl::DiseaseStatus;
using escrl::StatusVector;

// Loopback server on an ephemeral port, stopped on destruction.
class TestServer {
 public:
  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  explicit TestServer(const std::string& path, Handler handler) {
    server_.Post(path, [handler](const httplib::Request& req, httplib::Response& res) { handler(req, res); });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    while (!server_.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
  ~TestServer() {
    server_.stop();
    thread_.join();
  }
  TestServer(const TestServer&) = delete;
  TestServer& operator=(const TestServer&) = delete;

  std::string url(const std::string& path) const { return "http://127.0.0.1:" + std::to_string(port_) + path; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("escrl-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Single-channel map set from row-major values.
inline escrl::grounding::ResponseMapSet plane(std::size_t h, std::size_t w, const std::vector<double>& values) {
  escrl::grounding::ResponseMapSet m(h, w, 1);
  for (std::size_t i = 0; i < values.size(); ++i) m.channel(0)[i] = values[i];
  return m;
}

inline escrl::grounding::ResponseMapSet random_maps(std::size_t h, std::size_t w, std::size_t k, escrl::Rng& rng) {
  escrl::grounding::ResponseMapSet m(h, w, k);
  for (std::size_t c = 0; c < k; ++c) {
    for (auto& v : m.channel(c)) v = escrl::uniform01(rng);
  }
  return m;
}

// Set-builder oracle, written independently of the partition routine.
inline escrl::gear::GroupPartition oracle_partition(const StatusVector& pred, const StatusVector& gt) {
  escrl::gear::GroupPartition g;
  for (std::size_t k = 0; k < gt.size(); ++k) {
    int p = escrl::to_int(pred[k]);
    int t = escrl::to_int(gt[k]);
    if (t == 1 && p == 1) g.tp.push_back(k);
    if (t == 1 && p == 0) g.fn.push_back(k);
    if (t == 0 && p == 1) g.fp.push_back(k);
  }
  return g;
}

inline StatusVector decode_base4(std::size_t code, std::size_t k) {
  StatusVector v(k);
  for (std::size_t i = 0; i < k; ++i) {
    v[i] = escrl::status_from_int(static_cast<int>(code % 4));
    code /= 4;
  }
  return v;
}

// Plain micro F1 over positive findings, counted by hand.
inline double oracle_f1(const StatusVector& pred, const StatusVector& gt) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t k = 0; k < gt.size(); ++k) {
    bool p = pred[k] == DiseaseStatus::kPositive;
    bool t = gt[k] == DiseaseStatus::kPositive;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  return tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
}

// A study whose four observations each omit a different finding of the
// ground truth; everything else matches it sentence for sentence.
struct OmissionStudy {
  escrl::corpus::StudyRecord record;
  StatusVector ground_truth;
};

inline OmissionStudy complementary_omission_study(const escrl::labeler::Lexicon& lexicon, std::size_t index,
                                                  escrl::Rng& rng) {
  const std::size_t K = lexicon.size();
  StatusVector gt(K, DiseaseStatus::kBlank);
  std::vector<std::size_t> findings;
  std::vector<std::size_t> order(K);
  for (std::size_t k = 0; k < K; ++k) order[k] = k;
  escrl::shuffle(order.begin(), order.end(), rng);
  for (std::size_t k : order) {
    if (k == lexicon.no_finding_index()) continue;
    if (findings.size() < 4) {
      gt[k] = escrl::bernoulli(rng, 0.7) ? DiseaseStatus::kPositive : DiseaseStatus::kNegative;
      findings.push_back(k);
    } else if (findings.size() < 6 && escrl::bernoulli(rng, 0.5)) {
      gt[k] = escrl::bernoulli(rng, 0.5) ? DiseaseStatus::kPositive : DiseaseStatus::kNegative;
      findings.push_back(k);
    }
  }
  std::vector<std::size_t> templates(K);
  for (auto& t : templates) t = escrl::uniform_index(rng, escrl::labeler::Lexicon::kTemplatesPerStatus);

  OmissionStudy s;
  s.ground_truth = gt;
  s.record.study_id = "omit-" + std::to_string(index);
  s.record.ground_truth_report = escrl::corpus::compose_report(lexicon, gt, templates).text;
  for (std::size_t n = 0; n < 4; ++n) {
    auto obs = gt;
    obs[findings[n]] = DiseaseStatus::kBlank;
    s.record.candidate_observations.push_back(escrl::corpus::compose_report(lexicon, obs, templates).text);
  }
  return s;
}

// Pairs whose label is fixed by whether the candidate restates or negates the
// reference's finding. Both sides use templates for the same disease.
inline std::vector<escrl::spl::PreferenceTriplet> separable_triplets(const escrl::labeler::Lexicon& lexicon,
                                                                     std::size_t count, escrl::Rng& rng) {
  std::vector<escrl::spl::PreferenceTriplet> out;
  const std::size_t T = escrl::labeler::Lexicon::kTemplatesPerStatus;
  while (out.size() < count) {
    std::size_t k = escrl::uniform_index(rng, lexicon.size());
    if (k == lexicon.no_finding_index()) continue;
    bool ref_pos = escrl::bernoulli(rng, 0.5);
    bool agree = escrl::bernoulli(rng, 0.5);
    auto ref_status = ref_pos ? DiseaseStatus::kPositive : DiseaseStatus::kNegative;
    auto cand_status = agree ? ref_status : (ref_pos ? DiseaseStatus::kNegative : DiseaseStatus::kPositive);
    escrl::spl::PreferenceTriplet t;
    t.study_id = "sep";
    t.disease_index = k;
    t.candidate = lexicon.sentence(k, cand_status, escrl::uniform_index(rng, T));
    t.reference = lexicon.sentence(k, ref_status, escrl::uniform_index(rng, T));
    t.label = agree ? escrl::spl::PreferenceLabel::kConsistent : escrl::spl::PreferenceLabel::kInconsistent;
    out.push_back(std::move(t));
  }
  return out;
}

struct DenoisingOutcome {
  std::size_t clean = 0;
  std::size_t clean_kept = 0;
  std::size_t flipped = 0;
  std::size_t flipped_kept = 0;
  double clean_retention() const { return clean == 0 ? 0.0 : double(clean_kept) / double(clean); }
  double flipped_retention() const { return flipped == 0 ? 0.0 : double(flipped_kept) / double(flipped); }
};

// Rule-judged triplets from a synthetic corpus with `flip_rate` of the
// decisive labels swapped, a predictor fitted to the noisy set, then the
// below-lower filter at `epoch`.
inline DenoisingOutcome denoising_run(std::uint64_t seed, double flip_rate, std::size_t epoch) {
  using namespace escrl;
  auto vocab = DiseaseVocabulary::chexbert14();
  auto lab = std::make_shared<labeler::RuleLabeler>(vocab);
  corpus::SyntheticCorpusConfig cc;
  cc.seed = seed;
  cc.num_studies = 50;
  auto records = corpus::generate_synthetic_corpus(cc, vocab);
  spl::RuleJudge judge(lab);
  auto triplets = spl::build_preference_dataset(records, judge, lab->lexicon());

  Rng rng(mix64(seed ^ 0x5eedULL));
  std::vector<bool> flipped(triplets.size(), false);
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    auto& t = triplets[i];
    if (t.label == spl::PreferenceLabel::kIndistinguishable) continue;
    if (bernoulli(rng, flip_rate)) {
      t.label = t.label == spl::PreferenceLabel::kConsistent ? spl::PreferenceLabel::kInconsistent
                                                             : spl::PreferenceLabel::kConsistent;
      flipped[i] = true;
    }
  }
  auto model = spl::make_predictor(triplets);
  auto examples = spl::to_examples(model, triplets);
  spl::train_predictor(model, examples, {});
  spl::FilterSchedule sched;
  sched.mode = spl::FilterMode::kBelowLower;
  auto r = spl::filter_trustworthy(triplets, model, sched, epoch);

  DenoisingOutcome out;
  std::vector<bool> kept(triplets.size(), false);
  for (auto i : r.kept_indices) kept[i] = true;
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    if (flipped[i]) {
      ++out.flipped;
      out.flipped_kept += kept[i];
    } else {
      ++out.clean;
      out.clean_kept += kept[i];
    }
  }
  return out;
}

}  // namespace fixtures
