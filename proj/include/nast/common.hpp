#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nast {

using Index = std::int64_t;

// Caller passed arguments violating a documented precondition.
struct ContractViolation : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Target admits no alignment of the requested length.
struct InfeasibleAlignment : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Target too short for an order-relaxed bigram objective.
struct DegenerateTarget : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Source too short for a lag statistic.
struct DegenerateInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Object used out of protocol (e.g. push after finalize).
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

// Exhaustive enumeration would exceed the configured cap.
struct CapacityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Input longer than the model's position table.
struct LengthError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// 1-based (target position, source position) word links, as in "t-s" link files.
using AlignmentLinks = std::vector<std::pair<Index, Index>>;

inline void check_arg(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

}  // namespace nast
