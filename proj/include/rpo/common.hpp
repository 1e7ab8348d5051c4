#pragma once

/**
 * Shared basic types and the error taxonomy used across the library.
 *
 * Error classes map onto CLI exit codes: UsageError -> 1,
 * AuditError -> 2 (invariant/audit failure), IoError -> 3.
 */

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace rpo {

using Token = int32_t;
using TokenSeq = std::vector<Token>;

struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Violated invariant, failed audit, or broken precondition.
struct AuditError : std::runtime_error {
  explicit AuditError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw AuditError(msg);
}

}  // namespace rpo
