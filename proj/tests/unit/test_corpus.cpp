#include <doctest.h>

#include <cmath>
#include <fstream>

#include "escrl/corpus.hpp"
#include "escrl/error.hpp"
#include "escrl/labeler.hpp"
#include "fixtures.hpp"

using namespace escrl;

TEST_SUITE("corpus") {
  TEST_CASE("generation is a pure function of the config") {
    auto vocab = DiseaseVocabulary::chexbert14();
    corpus::SyntheticCorpusConfig cfg;
    cfg.num_studies = 12;
    cfg.seed = 4;
    auto a = corpus::generate_synthetic_corpus(cfg, vocab);
    auto b = corpus::generate_synthetic_corpus(cfg, vocab);
    CHECK(a == b);
    cfg.seed = 5;
    CHECK(a != corpus::generate_synthetic_corpus(cfg, vocab));
    CHECK(a.size() == 12);
    for (const auto& r : a) CHECK(r.candidate_observations.size() == 4);
  }

  TEST_CASE("recorded statuses agree with the labeler") {
    auto vocab = DiseaseVocabulary::chexbert14();
    labeler::RuleLabeler lab(vocab);
    corpus::SyntheticCorpusConfig cfg;
    cfg.num_studies = 30;
    for (const auto& s : corpus::generate_synthetic_studies(cfg, vocab)) {
      REQUIRE(s.record.ground_truth_status.has_value());
      CHECK(lab.extract(s.record.ground_truth_report) == *s.record.ground_truth_status);
      for (std::size_t n = 0; n < s.candidate_status.size(); ++n) {
        CHECK(lab.extract(s.record.candidate_observations[n]) == s.candidate_status[n]);
      }
    }
  }

  TEST_CASE("zero noise reproduces the ground truth statuses") {
    auto vocab = DiseaseVocabulary::chexbert14();
    corpus::SyntheticCorpusConfig cfg;
    cfg.num_studies = 10;
    cfg.noise_rate = 0.0;
    for (const auto& s : corpus::generate_synthetic_studies(cfg, vocab)) {
      for (const auto& c : s.candidate_status) CHECK(c == *s.record.ground_truth_status);
    }
  }

  TEST_CASE("JSONL round trip") {
    fixtures::TempDir dir("corpus");
    auto vocab = DiseaseVocabulary::chexbert14();
    corpus::SyntheticCorpusConfig cfg;
    cfg.num_studies = 5;
    auto records = corpus::generate_synthetic_corpus(cfg, vocab);
    records[1].image_ref = "img/1.png";
    records[2].candidate_observations.clear();
    corpus::write_corpus(dir / "c.jsonl", records);
    CHECK(corpus::load_corpus(dir / "c.jsonl", vocab) == records);
    CHECK_FALSE(std::filesystem::exists(dir / "c.jsonl.tmp"));
  }

  TEST_CASE("malformed input names the line") {
    fixtures::TempDir dir("corpus-bad");
    auto vocab = DiseaseVocabulary::chexbert14();
    {
      std::ofstream out(dir / "bad.jsonl");
      out << R"({"study_id":"a","ground_truth_report":"x"})" << "\n\n";
      out << R"({"study_id":"b"})" << "\n";
    }
    try {
      corpus::load_corpus(dir / "bad.jsonl", vocab);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
    }
  }

  TEST_CASE("empty files, duplicate ids and missing fields") {
    fixtures::TempDir dir("corpus-edge");
    auto vocab = DiseaseVocabulary::chexbert14();
    { std::ofstream out(dir / "empty.jsonl"); }
    CHECK(corpus::load_corpus(dir / "empty.jsonl", vocab).empty());
    {
      std::ofstream out(dir / "dup.jsonl");
      out << R"({"study_id":"a","ground_truth_report":"x"})" << "\n" << R"({"study_id":"a","ground_truth_report":"y"})";
    }
    CHECK_THROWS_AS(corpus::load_corpus(dir / "dup.jsonl", vocab), ValidationError);
    {
      std::ofstream out(dir / "missing.jsonl");
      out << R"({"study_id":"a"})";
    }
    CHECK_THROWS_WITH(corpus::load_corpus(dir / "missing.jsonl", vocab),
                      doctest::Contains("ground_truth_report"));
  }

  TEST_CASE("positive rate matches its binomial expectation") {
    auto vocab = DiseaseVocabulary::chexbert14();
    corpus::SyntheticCorpusConfig cfg;
    cfg.seed = 7;
    cfg.num_studies = 50;
    double positives = 0;
    for (const auto& r : corpus::generate_synthetic_corpus(cfg, vocab)) {
      for (auto s : *r.ground_truth_status) positives += s == DiseaseStatus::kPositive;
    }
    const double trials = 50.0 * 14.0;
    const double sigma = std::sqrt(trials * 0.3 * 0.7);
    CHECK(std::abs(positives - trials * 0.3) < 3 * sigma);
  }

  TEST_CASE("candidate count is enforced when requested") {
    fixtures::TempDir dir("corpus-n");
    auto vocab = DiseaseVocabulary::chexbert14();
    corpus::SyntheticCorpusConfig cfg;
    cfg.num_studies = 2;
    cfg.num_candidates = 3;
    corpus::write_corpus(dir / "c.jsonl", corpus::generate_synthetic_corpus(cfg, vocab));
    CHECK_NOTHROW(corpus::load_corpus(dir / "c.jsonl", vocab, 3));
    CHECK_THROWS_AS(corpus::load_corpus(dir / "c.jsonl", vocab, 4), ValidationError);
  }

  TEST_CASE("a failed write leaves nothing behind") {
    fixtures::TempDir dir("corpus-w");
    auto target = dir / "missing" / "c.jsonl";
    CHECK_THROWS(corpus::write_corpus(target, {}));
    CHECK_FALSE(std::filesystem::exists(target));
  }

  TEST_CASE("compose_report keeps disease order") {
    auto lex = labeler::Lexicon::for_vocabulary(DiseaseVocabulary::chexbert14());
    StatusVector s(14, DiseaseStatus::kBlank);
    s[9] = DiseaseStatus::kNegative;
    s[1] = DiseaseStatus::kPositive;
    auto r = corpus::compose_report(lex, s, std::vector<std::size_t>(14, 0));
    CHECK(r.text == "There is cardiomegaly. No pleural effusion.");
    CHECK(r.sentence_disease == std::vector<std::size_t>{1, 9});
  }

  TEST_CASE("invalid rates are rejected") {
    corpus::SyntheticCorpusConfig cfg;
    cfg.noise_rate = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
}
