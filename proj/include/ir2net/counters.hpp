#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

namespace ir2net {

/// Process-wide execution counters, used to assert which code paths ran.
///
/// Keys in use:
///   "conv.macs"           multiply-accumulates executed by real conv forwards
///   "binary.packed_conv"  XNOR/popcount kernel invocations
///   "binary.packed_macs"  binary multiply-accumulates executed by that kernel
///   "ires.*"              information-restriction steps (attention, mask, apply)
namespace counters {

void add(std::string_view key, std::uint64_t amount = 1);
std::uint64_t get(std::string_view key);
/// Sum of every counter whose key starts with `prefix`.
std::uint64_t sum_prefix(std::string_view prefix);
std::map<std::string, std::uint64_t> snapshot();
void reset();

}  // namespace counters
}  // namespace ir2net
