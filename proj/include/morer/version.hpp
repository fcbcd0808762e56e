#pragma once

namespace morer {

// Embedded in repository archives; load_repository rejects archives written by
// a different version.
inline constexpr const char* kVersion = "0.3.1";

}  // namespace morer
