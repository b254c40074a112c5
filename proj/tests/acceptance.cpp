// Prints one PASS/FAIL line per acceptance check; exits non-zero on failure.

#include <cstdlib>
#include <iostream>
#include <string>

#include "slowfast/verification.hpp"

int main(int argc, char **argv) {
  slowfast::VerifyOptions o;
  if (const char *s = std::getenv("SEED")) {
    o.seed = std::stoull(s);
  }
  if (argc > 1) {
    o.workers = static_cast<unsigned>(std::stoul(argv[1]));
  }
  const auto results = slowfast::run_acceptance(o, &std::cout);
  int failures = 0;
  for (const auto &r : results) {
    failures += r.pass ? 0 : 1;
  }
  std::cout << (failures == 0 ? "all checks passed" : std::to_string(failures) + " checks failed")
            << '\n';
  return failures == 0 ? 0 : 1;
}
