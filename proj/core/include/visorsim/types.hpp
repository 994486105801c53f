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

#ifndef VISORSIM_TYPES_HPP
#define VISORSIM_TYPES_HPP

#include <cstdint>
#include <stdexcept>
#include <string>

namespace visorsim {

using CpuId = int;
using ApicId = int;
using DomainId = int;
using PageNum = int;
using Vector = int;       // interrupt vector; priority == vector number
using HeapId = int;       // VMM heap object handle
using LockId = int;
using TimerId = std::int64_t;
using SimTime = std::int64_t;  // logical milliseconds

constexpr DomainId kNoDomain = -1;
constexpr HeapId kNullHandle = 0;

// Owner of a physical page.
struct PageOwner {
  // kFree < 0 < domain ids; kVmm is the hypervisor itself.
  static constexpr int kFree = -1;
  static constexpr int kVmm = -2;
  int value = kFree;

  static PageOwner free() { return {kFree}; }
  static PageOwner vmm() { return {kVmm}; }
  static PageOwner domain(DomainId d) { return {d}; }
  bool is_free() const { return value == kFree; }
  bool is_vmm() const { return value == kVmm; }
  bool is_domain() const { return value >= 0; }
  bool operator==(const PageOwner&) const = default;
};

// Thrown on misuse of the library surface (unknown ids, bad config).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when the simulator's own bookkeeping is broken. A run that trips
// this is marked invalid and excluded from campaign statistics; it is a
// bug surface, never an experiment outcome.
class SimInvariantError : public std::logic_error {
 public:
  explicit SimInvariantError(const std::string& what)
      : std::logic_error(what) {}
};

#define VISORSIM_CHECK(cond, msg)                \
  do {                                           \
    if (!(cond)) throw ::visorsim::SimInvariantError(msg); \
  } while (0)

}  // namespace visorsim

#endif  // VISORSIM_TYPES_HPP
