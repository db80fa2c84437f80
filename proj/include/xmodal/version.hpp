#pragma once

namespace xmodal {

inline constexpr int kVersionMajor = 1;
inline constexpr int kVersionMinor = 0;
inline constexpr int kVersionPatch = 0;
inline constexpr const char* kVersionString = "1.0.0";

// Format version written into corpus headers, checkpoints and run manifests.
inline constexpr int kFormatVersion = 1;

}  // namespace xmodal
