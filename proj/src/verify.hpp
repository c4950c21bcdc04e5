#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pctl {

struct VerifyCheck {
  std::string name;
  double measured = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string detail;
};

struct VerifyReport {
  std::vector<VerifyCheck> checks;
  bool all_passed() const;
  std::string to_text() const;
};

// Built-in self-check: gradient checks for every primitive and every loss,
// the analytic limit cases, the k-means partition oracle, concentration
// normalization, EMA decay and the temperature clamp. When
// inject_info_nce_sign_flip is set, info_nce is corrupted for the duration
// of the run so the report must come back red (a mutation sanity check).
VerifyReport run_verification(bool inject_info_nce_sign_flip = false);

}  // namespace pctl
