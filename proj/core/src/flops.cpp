#include "cmx/flops.hpp"

namespace cmx::flops {

namespace {
thread_local std::uint64_t g_count = 0;
}

void add(std::uint64_t n) noexcept { g_count += n; }
void reset() noexcept { g_count = 0; }
std::uint64_t total() noexcept { return g_count; }

}  // namespace cmx::flops
