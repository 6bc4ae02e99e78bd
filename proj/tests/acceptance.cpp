// Acceptance suite: one PASS/FAIL line per criterion; exits nonzero if any fail.
// Optional arguments select criterion ids, e.g. `acceptance 1 2 10`.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <vector>

#include "bwlab/verify.hpp"

int main(int argc, char** argv) {
  std::vector<int> ids;
  for (int i = 1; i < argc; ++i) ids.push_back(std::atoi(argv[i]));
  const std::filesystem::path scratch = std::filesystem::current_path() / "acceptance_scratch";
  std::filesystem::create_directories(scratch);
  const auto results = bwlab::run_acceptance(ids, scratch, [](const bwlab::CriterionResult& r) {
    std::printf("%s\n", bwlab::format_criterion(r).c_str());
    std::fflush(stdout);
  });
  int failed = 0;
  for (const auto& r : results) failed += r.passed() ? 0 : 1;
  std::printf("%zu criteria, %d passed, %d failed\n", results.size(), static_cast<int>(results.size()) - failed, failed);
  return failed == 0 ? 0 : 1;
}
