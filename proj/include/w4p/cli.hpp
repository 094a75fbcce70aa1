#pragma once

#include <ostream>

namespace w4p::cli {

// Exit codes: 0 success, 1 internal, 2 usage or config, 3 bad input data,
// 4 fingerprint or verdict conflict, 5 numeric failure. Failures write one
// JSON object {"error": {...}} to `err`; successes write a JSON summary to
// `out`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace w4p::cli
