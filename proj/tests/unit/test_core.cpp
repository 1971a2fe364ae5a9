#include <doctest.h>

#include <array>
#include <cmath>

#include "escrl/error.hpp"
#include "escrl/hash.hpp"
#include "escrl/random.hpp"
#include "escrl/text.hpp"
#include "escrl/types.hpp"

using namespace escrl;

TEST_SUITE("core") {
  TEST_CASE("status codes round trip and reject out-of-range values") {
    for (int c = 0; c < 4; ++c) CHECK(to_int(status_from_int(c)) == c);
    CHECK_THROWS_AS(status_from_int(4), ValidationError);
    CHECK_THROWS_AS(status_from_int(-1), ValidationError);
    CHECK(from_ints({0, 1, 2, 3}) == StatusVector{DiseaseStatus::kBlank, DiseaseStatus::kPositive,
                                                  DiseaseStatus::kNegative, DiseaseStatus::kUncertain});
    CHECK(contradicts(DiseaseStatus::kPositive, DiseaseStatus::kNegative));
    CHECK(contradicts(DiseaseStatus::kNegative, DiseaseStatus::kPositive));
    CHECK_FALSE(contradicts(DiseaseStatus::kPositive, DiseaseStatus::kUncertain));
    CHECK_FALSE(contradicts(DiseaseStatus::kBlank, DiseaseStatus::kNegative));
  }

  TEST_CASE("vocabulary") {
    auto v = DiseaseVocabulary::chexbert14();
    CHECK(v.size() == 14);
    CHECK(v.index_of("Cardiomegaly").has_value());
    CHECK_FALSE(v.index_of("Gills").has_value());
    CHECK_THROWS(DiseaseVocabulary({"A", "B", "A"}));
  }

  TEST_CASE("text helpers") {
    CHECK(text::tokenize("Heart SIZE, normal.") == std::vector<std::string>{"heart", "size", "normal"});
    CHECK(text::tokenize("  ").empty());
    CHECK(text::split_sentences("A b. C d?  e") == std::vector<std::string>{"A b.", "C d?", "e"});
    CHECK(text::split_sentences("size 2.5 cm.") == std::vector<std::string>{"size 2.5 cm."});
    CHECK(text::normalize("  Foo \t  Bar ") == "foo bar");
    CHECK(text::capitalize("no effusion.") == "No effusion.");
    CHECK(text::join({"a", "b"}) == "a b");
  }

  TEST_CASE("FNV-1a reference values") {
    CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a("foobar") == 0x85944171f73967e8ULL);
    CHECK(hex64(0xabcULL) == "0000000000000abc");
  }

  TEST_CASE("generator state survives serialization") {
    Rng a(42);
    for (int i = 0; i < 10; ++i) a();
    Rng b = deserialize_rng(serialize_rng(a));
    for (int i = 0; i < 100; ++i) CHECK(a() == b());
  }

  TEST_CASE("uniform draws stay in range") {
    Rng rng(3);
    for (int i = 0; i < 10000; ++i) {
      double u = uniform01(rng);
      CHECK((u >= 0.0 && u < 1.0));
      CHECK(uniform_index(rng, 7) < 7);
    }
  }

  TEST_CASE("categorical sampling follows the weights") {
    Rng rng(11);
    std::array<double, 3> w{1.0, 0.0, 3.0};
    std::array<int, 3> hits{};
    const int n = 40000;
    for (int i = 0; i < n; ++i) ++hits[sample_categorical(w, rng)];
    CHECK(hits[1] == 0);
    double p = 0.25;
    double sigma = std::sqrt(n * p * (1 - p));
    CHECK(std::abs(hits[0] - n * p) < 4 * sigma);
  }
}
