#pragma once

// Self-checks run by `d2c verify`: small oracle comparisons that need no
// training and finish in seconds.

#include <cstdint>
#include <string>
#include <vector>

namespace d2c::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

std::vector<CheckResult> run_all(std::uint64_t seed);

}  // namespace d2c::verify
