#pragma once

namespace rpo {

// Embedded into every emitted artifact so reports are self-describing.
inline constexpr const char* kCodeVersion = "rpo-0.1.0";

}  // namespace rpo
