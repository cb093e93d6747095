#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace region_gain::cli {

/// Exit codes; a total function of the outcome category.
enum ExitCode : int {
  kCertified = 0,
  kNotCertified = 1,  // refuted or inconclusive
  kSpecError = 2,     // unreadable spec, malformed JSON, missing report inputs
  kEvalError = 3,     // evaluation failure, ensemble blow-up
  kPrerequisite = 4,  // mode cannot run on this spec
};

/// Reference value for sup gamma(delta(s)) on the planar example; the
/// analysis report records the measured difference from it.
inline constexpr double kReferenceComposedSup = 1.11;

/// Runs one command line (without the program name). Diagnostics go to err,
/// summaries to out.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int main(int argc, char** argv);

}  // namespace region_gain::cli
