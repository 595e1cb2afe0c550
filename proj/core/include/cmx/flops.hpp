#pragma once

#include <cstdint>

namespace cmx::flops {

/// Thread-local forward-pass FLOP accumulator. Kernels report analytic counts;
/// the numbers are for scaling comparisons, not hardware-exact accounting.
void add(std::uint64_t n) noexcept;
void reset() noexcept;
std::uint64_t total() noexcept;

}  // namespace cmx::flops
