// Copyright 2026 The visorsim Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <doctest.h>

#include <cmath>
#include <initializer_list>

#include "visorsim/stats.hpp"

using namespace visorsim::stats;

namespace {

// Independent oracle: the Wilson bounds are the roots p of
//   (phat - p)^2 = z^2 * p (1 - p) / n
// found by bisection on the score function, with no reference to the
// closed form under test.
double score(double p, double phat, double n, double z) {
  return (phat - p) * (phat - p) - z * z * p * (1.0 - p) / n;
}

double bisect(double lo, double hi, double phat, double n, double z) {
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    if ((score(lo, phat, n, z) <= 0) == (score(mid, phat, n, z) <= 0))
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("wilson 88/100 matches the independently computed interval") {
  // Frozen from statsmodels proportion_confint(88, 100, method='wilson').
  auto iv = wilson_interval(88, 100);
  CHECK(iv.low == doctest::Approx(0.8018790057).epsilon(1e-9));
  CHECK(iv.high == doctest::Approx(0.9300059356).epsilon(1e-9));
}

TEST_CASE("wilson frozen values at campaign-scale n") {
  auto lo_rate = wilson_interval(56, 1000);
  CHECK(lo_rate.low == doctest::Approx(0.0433748134).epsilon(1e-8));
  CHECK(lo_rate.high == doctest::Approx(0.0720233481).epsilon(1e-8));
  auto hi_rate = wilson_interval(958, 1000);
  CHECK(hi_rate.low == doctest::Approx(0.9437155748).epsilon(1e-8));
  CHECK(hi_rate.high == doctest::Approx(0.9687791145).epsilon(1e-8));
}

TEST_CASE("wilson edge cases") {
  auto zero = wilson_interval(0, 10);
  CHECK(zero.low == doctest::Approx(0.0));
  CHECK(zero.high == doctest::Approx(0.2775327999).epsilon(1e-8));
  auto all = wilson_interval(10, 10);
  CHECK(all.low == doctest::Approx(0.7224672001).epsilon(1e-8));
  CHECK(all.high == doctest::Approx(1.0));
  auto none = wilson_interval(0, 0);
  CHECK(none.low == 0.0);
  CHECK(none.high == 1.0);
}

TEST_CASE("wilson agrees with the bisection oracle across a sweep") {
  const double z = 1.959963984540054;
  for (long long n : {10LL, 50LL, 100LL, 1000LL}) {
    for (long long k = 0; k <= n; k += n / 10) {
      auto iv = wilson_interval(k, n);
      double phat = static_cast<double>(k) / static_cast<double>(n);
      double lo =
          k == 0 ? 0.0 : bisect(0.0, phat, phat, static_cast<double>(n), z);
      double hi =
          k == n ? 1.0 : bisect(phat, 1.0, phat, static_cast<double>(n), z);
      CHECK(iv.low == doctest::Approx(lo).epsilon(1e-7));
      CHECK(iv.high == doctest::Approx(hi).epsilon(1e-7));
    }
  }
}

TEST_CASE("interval contains the point estimate and narrows with n") {
  for (long long n : {20LL, 200LL, 2000LL}) {
    auto iv = wilson_interval(n * 4 / 5, n);
    double phat = 0.8;
    CHECK(iv.low <= phat);
    CHECK(iv.high >= phat);
  }
  auto wide = wilson_interval(16, 20);
  auto narrow = wilson_interval(1600, 2000);
  CHECK(narrow.high - narrow.low < wide.high - wide.low);
}
