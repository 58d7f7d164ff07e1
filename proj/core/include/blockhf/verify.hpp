#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace blockhf {

// One verified property: the measured error against its pinned tolerance.
// For lower-bound style checks (PSD), measured is the worst value and
// tolerance the allowed floor; `sense` says which way the comparison runs.
struct CheckResult {
    std::string name;
    bool passed = false;
    double measured = 0.0;
    double tolerance = 0.0;
    enum class Sense { AtMost, AtLeast } sense = Sense::AtMost;
    std::string note;
};

// Test seam: a nonzero tangent_fault is added to one forward-mode result
// inside the autodiff suite, so the suite must report a failure. Exercised
// by the failure-path tests; the CLI keeps it hidden.
struct FaultInjection {
    double tangent_fault = 0.0;
};

std::vector<CheckResult> verify_autodiff(const FaultInjection& fault = {});
std::vector<CheckResult> verify_cg();
std::vector<CheckResult> verify_optimizer();

// suite is one of: autodiff, cg, optimizer, all.
std::vector<CheckResult> verify_suite(const std::string& suite,
                                      const FaultInjection& fault = {});

bool all_passed(const std::vector<CheckResult>& results);
void print_report(const std::vector<CheckResult>& results, std::ostream& os);

// Lookup by name; throws if absent (acceptance re-asserts named checks at
// criterion tolerances).
const CheckResult& find_check(const std::vector<CheckResult>& results,
                              const std::string& name);

}  // namespace blockhf
