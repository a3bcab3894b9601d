#pragma once

namespace metastep {

inline constexpr const char* kVersionString = "metastep-0.1.0";
inline constexpr int kMetricsSchemaVersion = 1;

}  // namespace metastep
