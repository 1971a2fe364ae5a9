#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "escrl/error.hpp"
#include "escrl/lexicon.hpp"
#include "escrl/predictor.hpp"
#include "escrl/spl.hpp"
#include "fixtures.hpp"

using namespace escrl;
using spl::Example;
using spl::FeatureVocab;
using spl::PreferencePredictor;

namespace {

// Random model over F named features with a batch that touches each of them.
struct Instance {
  PreferencePredictor model;
  std::vector<Example> batch;
  double l2;
};

Instance random_instance(Rng& rng) {
  std::size_t F = 2 + uniform_index(rng, 5);
  std::vector<std::string> names;
  for (std::size_t f = 0; f < F; ++f) names.push_back("c:f" + std::to_string(f));
  Instance in{PreferencePredictor(FeatureVocab(names)), {}, uniform01(rng) * 0.1};
  for (auto& p : in.model.parameters()) p = uniform01(rng) * 4 - 2;
  std::size_t B = 1 + uniform_index(rng, 4);
  for (std::size_t b = 0; b < B; ++b) {
    Example ex;
    for (std::uint32_t f = 0; f < F; ++f) {
      if (bernoulli(rng, 0.5) || f % B == b) ex.features.push_back(f);
    }
    double t = uniform01(rng);
    ex.target = {t, 1.0 - t};
    in.batch.push_back(ex);
  }
  return in;
}

double accuracy(const PreferencePredictor& m, std::span<const spl::PreferenceTriplet> ts) {
  std::size_t hit = 0;
  for (const auto& t : ts) {
    auto p = m.predict(t.candidate, t.reference);
    bool says_consistent = p[0] > p[1];
    hit += says_consistent == (t.label == spl::PreferenceLabel::kConsistent);
  }
  return double(hit) / double(ts.size());
}

}  // namespace

TEST_SUITE("predictor") {
  TEST_CASE("feature names") {
    auto f = FeatureVocab::feature_names("No effusion.", "Effusion is seen.");
    auto has = [&](const std::string& n) { return std::find(f.begin(), f.end(), n) != f.end(); };
    CHECK(has("c:no"));
    CHECK(has("x:effusion"));
    CHECK(has("r:seen"));
    CHECK(has("c:<neg>"));
    CHECK_FALSE(has("r:<neg>"));
    CHECK_FALSE(has("x:<neg>"));
    auto e = FeatureVocab::feature_names("", "Possible edema.");
    CHECK(std::find(e.begin(), e.end(), "c:<empty>") != e.end());
    CHECK(std::find(e.begin(), e.end(), "r:<unc>") != e.end());
  }

  TEST_CASE("encoding drops unknown features and sorts") {
    FeatureVocab v({"r:b", "c:a"});
    CHECK(v.encode("a z", "b") == std::vector<std::uint32_t>{0, 1});
    CHECK(v.encode("q", "q").empty());
    CHECK_THROWS_AS(FeatureVocab({"c:a", "c:a"}), ValidationError);
  }

  TEST_CASE("predictions are distributions, strictly positive") {
    PreferencePredictor m(FeatureVocab({"c:a"}));
    m.parameters()[0] = 500;
    auto p = m.predict(std::vector<std::uint32_t>{0});
    CHECK(p[0] + p[1] == doctest::Approx(1.0));
    CHECK(p[1] > 0.0);
    auto u = PreferencePredictor(FeatureVocab({"c:a"})).predict("a", "");
    CHECK(u[0] == 0.5);
  }

  TEST_CASE("analytic gradient matches central differences") {
    Rng rng(17);
    for (int trial = 0; trial < 25; ++trial) {
      auto in = random_instance(rng);
      auto analytic = in.model.loss_and_gradient(in.batch, in.l2).gradient;
      auto params = in.model.parameters();
      double num_sq = 0, diff_sq = 0, ana_sq = 0;
      for (std::size_t i = 0; i < params.size(); ++i) {
        const double h = 1e-5;
        double keep = params[i];
        params[i] = keep + h;
        double up = in.model.loss_and_gradient(in.batch, in.l2).loss;
        params[i] = keep - h;
        double down = in.model.loss_and_gradient(in.batch, in.l2).loss;
        params[i] = keep;
        double numeric = (up - down) / (2 * h);
        num_sq += numeric * numeric;
        ana_sq += analytic[i] * analytic[i];
        diff_sq += (numeric - analytic[i]) * (numeric - analytic[i]);
      }
      CHECK(std::sqrt(diff_sq) <= 1e-4 * std::max(std::sqrt(num_sq), std::sqrt(ana_sq)));
    }
  }

  TEST_CASE("separable preferences are learned") {
    auto lex = labeler::Lexicon::for_vocabulary(DiseaseVocabulary::chexbert14());
    Rng rng(23);
    auto all = fixtures::separable_triplets(lex, 600, rng);
    std::span<const spl::PreferenceTriplet> train(all.data(), 480), held(all.data() + 480, 120);
    auto model = spl::make_predictor(train);
    spl::train_predictor(model, spl::to_examples(model, train), {});
    CHECK(accuracy(model, held) >= 0.95);
  }

  TEST_CASE("uniform targets drive the loss to ln 2") {
    auto lex = labeler::Lexicon::for_vocabulary(DiseaseVocabulary::chexbert14());
    Rng rng(29);
    auto ts = fixtures::separable_triplets(lex, 200, rng);
    for (auto& t : ts) t.label = spl::PreferenceLabel::kIndistinguishable;
    auto model = spl::make_predictor(ts);
    auto r = spl::train_predictor(model, spl::to_examples(model, ts), {});
    CHECK(std::abs(r.final_loss - std::numbers::ln2) < 1e-2);
  }

  TEST_CASE("minibatch training is seeded") {
    auto lex = labeler::Lexicon::for_vocabulary(DiseaseVocabulary::chexbert14());
    Rng rng(31);
    auto ts = fixtures::separable_triplets(lex, 100, rng);
    spl::PredictorHyperparams hp;
    hp.epochs = 20;
    hp.batch_size = 16;
    hp.seed = 8;
    auto a = spl::make_predictor(ts);
    auto b = spl::make_predictor(ts);
    spl::train_predictor(a, spl::to_examples(a, ts), hp);
    spl::train_predictor(b, spl::to_examples(b, ts), hp);
    CHECK(a == b);
  }

  TEST_CASE("training guards") {
    PreferencePredictor m(FeatureVocab({"c:a"}));
    CHECK_THROWS_AS(spl::train_predictor(m, std::span<const Example>{}, {}), TrainingError);
    std::vector<Example> bad{{{0}, {std::nan(""), 0.5}}};
    CHECK_THROWS_AS(spl::train_predictor(m, bad, {}), TrainingError);
  }

  TEST_CASE("SGD step lowers the loss") {
    Rng rng(37);
    auto in = random_instance(rng);
    double before = spl::sgd_step(in.model, in.batch, 0.01, in.l2);
    CHECK(in.model.loss_and_gradient(in.batch, in.l2).loss < before);
  }

  TEST_CASE("model files") {
    fixtures::TempDir dir("model");
    Rng rng(41);
    auto in = random_instance(rng);
    in.model.save(dir / "m.bin");
    auto back = PreferencePredictor::load(dir / "m.bin");
    CHECK(back.vocab() == in.model.vocab());
    for (std::size_t i = 0; i < back.parameters().size(); ++i) {
      CHECK(back.parameters()[i] == static_cast<float>(in.model.parameters()[i]));
    }
    std::stringstream ss;
    in.model.write_exact(ss);
    CHECK(PreferencePredictor::read_exact(ss) == in.model);

    {
      std::ofstream junk(dir / "junk.bin", std::ios::binary);
      junk << "NOTAMODEL";
    }
    CHECK_THROWS_AS(PreferencePredictor::load(dir / "junk.bin"), ValidationError);
    CHECK_THROWS_AS(PreferencePredictor::load(dir / "absent.bin"), ConfigError);
  }
}
