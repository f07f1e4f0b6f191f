#include <algorithm>
#include <random>

#include <doctest.h>

#include "patchda/error.hpp"
#include "patchda/metrics.hpp"

using namespace patchda;

TEST_CASE("single clip reports") {
  const std::vector<float> v{0.1f, 0.7f, 0.1f, 0.1f};
  const std::vector<float> n_right{0.6f, 0.2f, 0.1f, 0.1f};
  const std::vector<float> n_wrong{0.1f, 0.2f, 0.6f, 0.1f};
  const std::vector<data::Labels> y{{1, 0}};
  const auto both = compute_metrics(v, n_right, y, 4, 4, "s");
  CHECK(both.verb.top1 == 100.0);
  CHECK(both.noun.top1 == 100.0);
  CHECK(both.action.top1 == 100.0);
  const auto half = compute_metrics(v, n_wrong, y, 4, 4, "s");
  CHECK(half.verb.top1 == 100.0);
  CHECK(half.noun.top1 == 0.0);
  CHECK(half.action.top1 == 0.0);
  CHECK(half.noun.top5 == 100.0);
}

TEST_CASE("three-clip hand-built set") {
  // clip 0: both right. clip 1: verb right, noun second. clip 2: verb third, noun right.
  const std::vector<float> v{0.8f, 0.1f, 0.1f, 0.3f, 0.6f, 0.1f, 0.5f, 0.3f, 0.2f};
  const std::vector<float> n{0.9f, 0.1f, 0.2f, 0.7f, 0.1f, 0.9f};
  const std::vector<data::Labels> y{{0, 0}, {1, 0}, {2, 1}};
  const auto r = compute_metrics(v, n, y, 3, 2, "hand");
  CHECK(r.verb.top1 == doctest::Approx(200.0 / 3));
  CHECK(r.noun.top1 == doctest::Approx(200.0 / 3));
  CHECK(r.action.top1 == doctest::Approx(100.0 / 3));
  // pair scores clip 1: (1,0)=0.12 ranks behind (1,1)=0.42, (0,1)=0.21 -> rank 2 (top-5 hit).
  // clip 2: (2,1)=0.18 behind (0,1)=0.45, (1,1)=0.27 -> rank 2.
  CHECK(r.action.top5 == 100.0);
  CHECK(r.clips == 3);
}

TEST_CASE("ties rank the lower index first") {
  const std::vector<float> s{0.25f, 0.25f, 0.25f, 0.25f};
  CHECK(rank_of(s, 0) == 0);
  CHECK(rank_of(s, 3) == 3);
}

TEST_CASE("errors") {
  const std::vector<data::Labels> none;
  CHECK_THROWS_AS(compute_metrics({}, {}, none, 4, 4, "x"), InvalidInput);
  const std::vector<data::Labels> one{{0, 0}};
  const std::vector<float> short_v{1.0f};
  CHECK_THROWS_AS(compute_metrics(short_v, short_v, one, 4, 4, "x"), InvalidInput);
}

TEST_CASE("report json") {
  MetricsReport r;
  r.split = "target/val";
  r.clips = 2;
  r.verb = {50, 100};
  r.counts["target/val"] = 2;
  const auto j = r.to_json();
  CHECK(j.find("\"split\": \"target/val\"") != std::string::npos);
  CHECK(j.find("\"top1\": 50.0") != std::string::npos);
}
