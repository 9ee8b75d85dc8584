#pragma once

#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace swvm {

/// Caller broke the acquire/set/release protocol (alternation, single writer).
class ProtocolViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Requested process count does not fit the packed index field.
class CapacityError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A documented precondition of a store or transaction operation was violated.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A handle whose generation tag no longer matches its slot (use after free).
class StaleHandle : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// The tuple arena ran out of slots.
class StoreExhausted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A checker declined to run (input too large, non-quiescent, missing data).
class CheckerRefusal : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

[[noreturn]] inline void fatal(const char* what) {
  std::fprintf(stderr, "swvm: fatal invariant violation: %s\n", what);
  std::fflush(stderr);
  std::abort();
}

}  // namespace swvm
