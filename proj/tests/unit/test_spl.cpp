#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "escrl/error.hpp"
#include "escrl/labeler.hpp"
#include "escrl/spl.hpp"
#include "fixtures.hpp"

using namespace escrl;
using spl::PreferenceLabel;

namespace {

auto rule_labeler() { return std::make_shared<labeler::RuleLabeler>(DiseaseVocabulary::chexbert14()); }

class ThrowingJudge final : public spl::JudgeBackend {
 public:
  PreferenceLabel judge(const std::string&, const std::string&, std::size_t k) const override {
    if (k == 3) throw ProtocolError("no verdict");
    return PreferenceLabel::kIndistinguishable;
  }
};

std::vector<spl::PreferenceTriplet> mixed_triplets(std::uint64_t seed) {
  auto lex = labeler::Lexicon::for_vocabulary(DiseaseVocabulary::chexbert14());
  Rng rng(seed);
  auto ts = fixtures::separable_triplets(lex, 120, rng);
  for (std::size_t i = 0; i < ts.size(); i += 3) ts[i].label = PreferenceLabel::kIndistinguishable;
  for (std::size_t i = 1; i < ts.size(); i += 7) {
    ts[i].label = ts[i].label == PreferenceLabel::kConsistent ? PreferenceLabel::kInconsistent
                                                              : PreferenceLabel::kConsistent;
  }
  return ts;
}

spl::PreferencePredictor fitted(const std::vector<spl::PreferenceTriplet>& ts, std::size_t epochs) {
  auto m = spl::make_predictor(ts);
  spl::PredictorHyperparams hp;
  hp.epochs = epochs;
  spl::train_predictor(m, spl::to_examples(m, ts), hp);
  return m;
}

}  // namespace

TEST_SUITE("spl") {
  TEST_CASE("label distributions") {
    CHECK(spl::distribution(PreferenceLabel::kConsistent) == spl::Distribution{1, 0});
    CHECK(spl::distribution(PreferenceLabel::kInconsistent) == spl::Distribution{0, 1});
    CHECK(spl::distribution(PreferenceLabel::kIndistinguishable) == spl::Distribution{0.5, 0.5});
    CHECK(spl::label_from_distribution({0.5, 0.5}) == PreferenceLabel::kIndistinguishable);
    CHECK_THROWS_AS(spl::label_from_distribution({0.7, 0.3}), ValidationError);
    CHECK(spl::label_name(PreferenceLabel::kInconsistent) == "(0,1)");
  }

  TEST_CASE("analytic KL values") {
    CHECK(std::abs(spl::kl_divergence({1, 0}, {0.5, 0.5}) - std::numbers::ln2) < 1e-9);
    CHECK(std::abs(spl::kl_divergence({0.5, 0.5}, {0.5, 0.5})) < 1e-9);
    double expected = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
    CHECK(std::abs(spl::kl_divergence({0.5, 0.5}, {0.9, 0.1}) - expected) < 1e-9);
    CHECK(expected == doctest::Approx(0.5108).epsilon(1e-4));
    CHECK_THROWS_AS(spl::kl_divergence({1, 0}, {1.0, 0.0}), NumericalError);
    CHECK_THROWS_AS(spl::kl_divergence({1, 0}, {0.6, 0.6}), NumericalError);
  }

  TEST_CASE("judge answer parsing") {
    CHECK(spl::parse_judge_answer("(1,0)") == PreferenceLabel::kConsistent);
    CHECK(spl::parse_judge_answer("Answer: ( 0 , 1 ).") == PreferenceLabel::kInconsistent);
    CHECK(spl::parse_judge_answer("(0.5, 0.5)\n") == PreferenceLabel::kIndistinguishable);
    CHECK(spl::parse_judge_answer("(1,0) ... (1,0)") == PreferenceLabel::kConsistent);
    CHECK_THROWS_AS(spl::parse_judge_answer("(1,0) or (0,1)"), ProtocolError);
    CHECK_THROWS_AS(spl::parse_judge_answer("consistent"), ProtocolError);
    CHECK_THROWS_AS(spl::parse_judge_answer(""), ProtocolError);
  }

  TEST_CASE("rule judge") {
    spl::RuleJudge j(rule_labeler());
    const std::size_t k = 6;
    CHECK(j.judge("There is pneumonia.", "Pneumonia is seen.", k) == PreferenceLabel::kConsistent);
    CHECK(j.judge("No pneumonia.", "There is no pneumonia.", k) == PreferenceLabel::kConsistent);
    CHECK(j.judge("No pneumonia.", "Pneumonia is seen.", k) == PreferenceLabel::kInconsistent);
    CHECK(j.judge("", "Pneumonia is seen.", k) == PreferenceLabel::kIndistinguishable);
    CHECK(j.judge("Possible pneumonia.", "Pneumonia is seen.", k) == PreferenceLabel::kIndistinguishable);
  }

  TEST_CASE("triplets are built n-major from per-disease descriptions") {
    auto lab = rule_labeler();
    corpus::StudyRecord r;
    r.study_id = "s";
    r.ground_truth_report = "There is cardiomegaly. No pleural effusion.";
    r.candidate_observations = {"Cardiomegaly is seen.", "Pleural effusion is present. No cardiomegaly."};
    auto ts = spl::build_study_triplets(r, spl::RuleJudge(lab), lab->lexicon());
    REQUIRE(ts.size() == 28);
    CHECK(ts[0].observation_index == 0);
    CHECK(ts[0].disease_index == 0);
    CHECK(ts[14].observation_index == 1);
    CHECK(ts[1].candidate == "Cardiomegaly is seen.");
    CHECK(ts[1].reference == "There is cardiomegaly.");
    CHECK(ts[1].label == PreferenceLabel::kConsistent);
    CHECK(ts[15].label == PreferenceLabel::kInconsistent);
    CHECK(ts[14 + 9].label == PreferenceLabel::kInconsistent);
    CHECK(ts[9].label == PreferenceLabel::kIndistinguishable);
    r.candidate_observations.clear();
    CHECK(spl::build_study_triplets(r, spl::RuleJudge(lab), lab->lexicon()).empty());
  }

  TEST_CASE("judge failures either abort or are skipped") {
    auto lab = rule_labeler();
    corpus::StudyRecord r{"s9", {}, "x", {"a", "b"}, {}};
    CHECK_THROWS_WITH_AS(spl::build_study_triplets(r, ThrowingJudge(), lab->lexicon()),
                         doctest::Contains("s9"), Error);
    spl::DatasetBuildStats st;
    auto ts = spl::build_study_triplets(r, ThrowingJudge(), lab->lexicon(), spl::JudgeFailurePolicy::kSkip, &st);
    CHECK(ts.size() == 26);
    CHECK(st.skipped == 2);
    CHECK(st.triplets == 26);
  }

  TEST_CASE("dataset files round trip") {
    fixtures::TempDir dir("prefs");
    auto ts = mixed_triplets(3);
    spl::write_dataset(dir / "p.jsonl", ts);
    CHECK(spl::load_dataset(dir / "p.jsonl", 14) == ts);
    CHECK_THROWS_AS(spl::load_dataset(dir / "p.jsonl", 2), ParseError);
    {
      std::ofstream out(dir / "bad.jsonl");
      out << spl::to_json_line(ts[0]) << "\n"
          << R"({"study_id":"s","n":0,"k":1,"candidate":"a","reference":"b","label":[0.7,0.3]})" << "\n";
    }
    try {
      spl::load_dataset(dir / "bad.jsonl");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
  }

  TEST_CASE("lower threshold schedule") {
    spl::FilterSchedule s;
    CHECK(std::abs(spl::tau_lower(0, s) - 3 * std::log(10.0)) < 1e-12);
    CHECK(spl::tau_lower(15, s) == doctest::Approx(1.5 * std::log(10.0)));
    CHECK(spl::tau_lower(30, s) == 0.0);
    CHECK(spl::tau_lower(45, s) == 0.0);
    s.tau_lower_initial = -std::numeric_limits<double>::infinity();
    CHECK(spl::tau_lower(3, s) == -std::numeric_limits<double>::infinity());
  }

  TEST_CASE("upper threshold") {
    spl::FilterSchedule s;
    std::vector<double> kls{1, 2, 3, 4};
    double std_pop = std::sqrt(1.25);
    CHECK(spl::tau_upper(kls, 0.0, s) == doctest::Approx(2.5 + std_pop));
    CHECK(spl::tau_upper(kls, 10.0, s) == doctest::Approx(10.0 + 1e-3));
    s.fixed_upper = 7.0;
    CHECK(spl::tau_upper(kls, 10.0, s) == 7.0);
    s.fixed_upper.reset();
    CHECK_THROWS_AS(spl::tau_upper({}, 0.0, s), ValidationError);
  }

  TEST_CASE("band and below-lower keep disjoint sets") {
    auto ts = mixed_triplets(5);
    auto model = fitted(ts, 40);
    for (std::size_t epoch : {0u, 10u, 20u, 25u, 29u}) {
      spl::FilterSchedule band, below;
      below.mode = spl::FilterMode::kBelowLower;
      auto a = spl::filter_trustworthy(ts, model, band, epoch);
      auto b = spl::filter_trustworthy(ts, model, below, epoch);
      for (auto i : a.kept_indices) {
        CHECK(std::find(b.kept_indices.begin(), b.kept_indices.end(), i) == b.kept_indices.end());
        CHECK(a.kls[i] > a.tau_lower);
        CHECK(a.kls[i] < a.tau_upper);
      }
      for (auto i : b.kept_indices) CHECK(b.kls[i] < b.tau_lower);
    }
  }

  TEST_CASE("band retention grows with the upper bound") {
    auto ts = mixed_triplets(7);
    auto model = fitted(ts, 40);
    spl::FilterSchedule s;
    s.tau_lower_initial = 0.05;
    std::size_t last = 0;
    for (double u = 0.1; u < 8.0; u += 0.1) {
      s.fixed_upper = u;
      auto r = spl::filter_trustworthy(ts, model, s, 0);
      CHECK(r.kept.size() >= last);
      last = r.kept.size();
    }
    CHECK(last > 0);
  }

  TEST_CASE("bounds are strict") {
    spl::PreferencePredictor flat(spl::FeatureVocab({"c:x"}));
    std::vector<spl::PreferenceTriplet> ts(2);
    ts[0].label = PreferenceLabel::kConsistent;
    ts[1].label = PreferenceLabel::kIndistinguishable;
    spl::FilterSchedule s;
    s.tau_lower_initial = 0.0;
    s.fixed_upper = std::numbers::ln2;
    auto r = spl::filter_trustworthy(ts, flat, s, 0);
    CHECK(r.kept.empty());
    s.mode = spl::FilterMode::kBelowLower;
    s.tau_lower_initial = std::numbers::ln2;
    s.fixed_upper.reset();
    r = spl::filter_trustworthy(ts, flat, s, 0);
    CHECK(r.kept_indices == std::vector<std::size_t>{1});
  }

  TEST_CASE("an upper bound at or below the lower one is a schedule error") {
    auto ts = mixed_triplets(9);
    auto model = fitted(ts, 5);
    spl::FilterSchedule s;
    s.fixed_upper = 1.0;
    CHECK_THROWS_AS(spl::filter_trustworthy(ts, model, s, 0), ScheduleError);
    CHECK_NOTHROW(spl::filter_trustworthy(ts, model, s, 29));
  }

  TEST_CASE("below-lower filtering drops flipped labels") {
    auto out = fixtures::denoising_run(101, 0.1, 25);
    CHECK(out.flipped > 0);
    CHECK(out.clean_retention() >= 0.95);
    CHECK(out.flipped_retention() <= 0.20);
  }
}
