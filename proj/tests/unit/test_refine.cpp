#include <doctest.h>

#include <cmath>

#include "escrl/error.hpp"
#include "escrl/labeler.hpp"
#include "escrl/refine.hpp"
#include "escrl/text.hpp"
#include "fixtures.hpp"

using namespace escrl;
using refine::EvidenceEntry;
using refine::TrustedEvidence;
using spl::PreferenceLabel;

namespace {

constexpr std::size_t kCardiomegaly = 1;
constexpr std::size_t kPneumonia = 6;
constexpr std::size_t kPneumothorax = 8;

auto rule_labeler() { return std::make_shared<labeler::RuleLabeler>(DiseaseVocabulary::chexbert14()); }

// p(1,0) = 0.9 for candidates mentioning "alpha", 0.7 for "beta".
spl::PreferencePredictor calibrated() {
  spl::PreferencePredictor m(spl::FeatureVocab({"c:alpha", "c:beta"}));
  m.parameters()[0] = std::log(9.0);
  m.parameters()[1] = std::log(7.0 / 3.0);
  return m;
}

spl::PreferenceTriplet triplet(std::size_t n, std::size_t k, std::string cand, PreferenceLabel label) {
  return {"s", n, k, std::move(cand), "ref", label};
}

spl::PreferencePredictor corpus_predictor(const labeler::RuleLabeler& lab) {
  corpus::SyntheticCorpusConfig cc;
  cc.seed = 12;
  auto records = corpus::generate_synthetic_corpus(cc, lab.vocabulary());
  auto ts = spl::build_preference_dataset(records, spl::RuleJudge(std::make_shared<labeler::RuleLabeler>(lab)),
                                          lab.lexicon());
  auto m = spl::make_predictor(ts);
  spl::train_predictor(m, spl::to_examples(m, ts), {});
  return m;
}

}  // namespace

TEST_SUITE("refine") {
  TEST_CASE("no retained triplets, no evidence") {
    auto lab = rule_labeler();
    CHECK(refine::derive_trusted_evidence({}, calibrated(), *lab).empty());
  }

  TEST_CASE("the most confident consistent description wins") {
    auto lab = rule_labeler();
    std::vector<spl::PreferenceTriplet> ts{
        triplet(0, kPneumonia, "Possible pneumonia beta.", PreferenceLabel::kConsistent),
        triplet(1, kPneumonia, "There is pneumonia alpha.", PreferenceLabel::kConsistent),
        triplet(2, kPneumonia, "No pneumonia alpha alpha.", PreferenceLabel::kInconsistent),
        triplet(0, kCardiomegaly, "Cardiomegaly is seen beta.", PreferenceLabel::kConsistent),
        triplet(0, kPneumothorax, "No pneumothorax.", PreferenceLabel::kIndistinguishable),
    };
    auto ev = refine::derive_trusted_evidence(ts, calibrated(), *lab);
    REQUIRE(ev.entries.size() == 2);
    CHECK(ev.entries[0].disease_index == kCardiomegaly);
    const auto* e = ev.find(kPneumonia);
    REQUIRE(e != nullptr);
    CHECK(e->supporting_description == "There is pneumonia alpha.");
    CHECK(e->observation_index == 1);
    CHECK(e->trusted_status == DiseaseStatus::kPositive);
    CHECK(e->confidence == doctest::Approx(0.9));
    CHECK(ev.find(kPneumothorax) == nullptr);
  }

  TEST_CASE("ties go to the lower observation, then the shorter text") {
    auto lab = rule_labeler();
    std::vector<spl::PreferenceTriplet> ts{
        triplet(2, kPneumonia, "There is pneumonia alpha.", PreferenceLabel::kConsistent),
        triplet(1, kPneumonia, "There is clearly pneumonia alpha.", PreferenceLabel::kConsistent),
        triplet(1, kPneumonia, "Pneumonia alpha.", PreferenceLabel::kConsistent),
    };
    auto ev = refine::derive_trusted_evidence(ts, calibrated(), *lab);
    CHECK(ev.find(kPneumonia)->supporting_description == "Pneumonia alpha.");
  }

  TEST_CASE("prompt assembly") {
    auto vocab = DiseaseVocabulary::chexbert14();
    std::vector<std::string> obs{"one.", "two.", "three.", "four."};
    auto empty = refine::build_prompt({}, obs, vocab);
    CHECK(empty.user_text().find("No trusted constraints are available for this study.") != std::string::npos);
    CHECK(empty == refine::build_prompt({}, obs, vocab));
    auto c = empty.candidates_text;
    CHECK(c.find("[1] one.") < c.find("[2] two."));
    CHECK(c.find("[3] three.") < c.find("[4] four."));
    TrustedEvidence ev{{EvidenceEntry{kPneumonia, DiseaseStatus::kPositive, "There is pneumonia.", 0.9, 0}}};
    auto p = refine::build_prompt(ev, obs, vocab);
    CHECK(p.evidence_text.find("Pneumonia") != std::string::npos);
    CHECK(p.evidence_text.find("There is pneumonia.") != std::string::npos);
    CHECK(p.user_text().find("No trusted constraints") == std::string::npos);
  }

  TEST_CASE("identical observations refine to the same statuses") {
    auto lab = rule_labeler();
    refine::RulesRefiner r(lab->lexicon());
    std::string gt = "There is cardiomegaly. No pleural effusion. Possible pneumonia.";
    auto out = r.refine({}, std::vector<std::string>(4, gt));
    CHECK(lab->extract(out) == lab->extract(gt));
  }

  TEST_CASE("a hallucinated finding trusted as absent is dropped") {
    auto lab = rule_labeler();
    refine::RulesRefiner r(lab->lexicon());
    std::vector<std::string> obs{"There is cardiomegaly. Pneumothorax is present.", "There is cardiomegaly.",
                                 "Cardiomegaly is seen.", "There is cardiomegaly."};
    TrustedEvidence blank{{EvidenceEntry{kPneumothorax, DiseaseStatus::kBlank, "", 0.8, 1}}};
    CHECK(lab->extract(r.refine(blank, obs))[kPneumothorax] == DiseaseStatus::kBlank);
    TrustedEvidence negative{{EvidenceEntry{kPneumothorax, DiseaseStatus::kNegative, "No pneumothorax.", 0.8, 1}}};
    CHECK(lab->extract(r.refine(negative, obs))[kPneumothorax] == DiseaseStatus::kBlank);
  }

  TEST_CASE("ordering, deduplication and terminators") {
    auto lab = rule_labeler();
    refine::RulesRefiner r(lab->lexicon());
    std::vector<std::string> obs{"No pleural effusion. There is cardiomegaly", "there is  CARDIOMEGALY. Lines stable."};
    CHECK(r.refine({}, obs) == "There is cardiomegaly. No pleural effusion. Lines stable.");
  }

  TEST_CASE("complementary omissions are recovered without contradicting evidence") {
    auto lab = rule_labeler();
    auto model = corpus_predictor(*lab);
    spl::RuleJudge judge(lab);
    refine::RulesRefiner refiner(lab->lexicon());
    spl::FilterSchedule sched;
    sched.mode = spl::FilterMode::kBelowLower;
    Rng rng(77);
    std::size_t with_evidence = 0;
    for (std::size_t i = 0; i < 20; ++i) {
      auto s = fixtures::complementary_omission_study(lab->lexicon(), i, rng);
      auto ts = spl::build_study_triplets(s.record, judge, lab->lexicon());
      auto kept = spl::filter_trustworthy(ts, model, sched, 25).kept;
      auto ev = refine::derive_trusted_evidence(kept, model, *lab);
      with_evidence += !ev.empty();
      auto out = refiner.refine(ev, s.record.candidate_observations);
      double best = 0;
      for (const auto& o : s.record.candidate_observations) {
        best = std::max(best, fixtures::oracle_f1(lab->extract(o), s.ground_truth));
      }
      CHECK(fixtures::oracle_f1(lab->extract(out), s.ground_truth) >= best);
      CHECK(refine::contradicted_diseases(out, ev, *lab).empty());
    }
    CHECK(with_evidence > 0);
  }

  TEST_CASE("refined sentences all come from the observations and never contradict evidence") {
    auto lab = rule_labeler();
    refine::RulesRefiner refiner(lab->lexicon());
    corpus::SyntheticCorpusConfig cc;
    cc.num_studies = 40;
    cc.noise_rate = 0.4;
    Rng rng(3);
    for (const auto& s : corpus::generate_synthetic_studies(cc, lab->vocabulary())) {
      TrustedEvidence ev;
      const auto& gt = *s.record.ground_truth_status;
      for (std::size_t k = 0; k < gt.size(); ++k) {
        if ((gt[k] == DiseaseStatus::kPositive || gt[k] == DiseaseStatus::kNegative) && bernoulli(rng, 0.5)) {
          ev.entries.push_back({k, gt[k], "", 1.0, 0});
        }
      }
      auto out = refiner.refine(ev, s.record.candidate_observations);
      CHECK(refine::contradicted_diseases(out, ev, *lab).empty());
      std::set<std::string> pool;
      for (const auto& o : s.record.candidate_observations) {
        for (const auto& sent : text::split_sentences(o)) pool.insert(text::normalize(sent));
      }
      for (const auto& sent : text::split_sentences(out)) CHECK(pool.count(text::normalize(sent)) == 1);
      CHECK(out == refiner.refine(ev, s.record.candidate_observations));
    }
  }
}
