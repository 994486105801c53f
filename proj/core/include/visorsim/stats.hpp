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

#ifndef VISORSIM_STATS_HPP
#define VISORSIM_STATS_HPP

namespace visorsim::stats {

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

// Wilson score interval for a binomial proportion of `successes` out of
// `trials` at the given confidence (default 95%).
Interval wilson_interval(long long successes, long long trials,
                         double z = 1.959963984540054);

}  // namespace visorsim::stats

#endif  // VISORSIM_STATS_HPP
