#pragma once

#include <array>
#include <cstddef>

namespace tiser {

// Regression targets, in row order of every [5, N] target/prediction matrix.
inline constexpr std::size_t kNumTargets = 5;
inline constexpr std::array<const char*, kNumTargets> kTargetNames = {"pga", "pgv", "sa03", "sa1",
                                                                      "sa3"};

}  // namespace tiser
