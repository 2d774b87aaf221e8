#include "ir2net/counters.hpp"

#include <mutex>

namespace ir2net::counters {
namespace {

std::mutex& guard() {
  static std::mutex m;
  return m;
}

std::map<std::string, std::uint64_t, std::less<>>& table() {
  static std::map<std::string, std::uint64_t, std::less<>> t;
  return t;
}

}  // namespace

void add(std::string_view key, std::uint64_t amount) {
  std::lock_guard lock(guard());
  auto& t = table();
  auto it = t.find(key);
  if (it == t.end()) it = t.emplace(std::string(key), 0).first;
  it->second += amount;
}

std::uint64_t get(std::string_view key) {
  std::lock_guard lock(guard());
  auto& t = table();
  auto it = t.find(key);
  return it == t.end() ? 0 : it->second;
}

std::uint64_t sum_prefix(std::string_view prefix) {
  std::lock_guard lock(guard());
  std::uint64_t total = 0;
  for (const auto& [k, v] : table()) {
    if (std::string_view(k).substr(0, prefix.size()) == prefix) total += v;
  }
  return total;
}

std::map<std::string, std::uint64_t> snapshot() {
  std::lock_guard lock(guard());
  return {table().begin(), table().end()};
}

void reset() {
  std::lock_guard lock(guard());
  table().clear();
}

}  // namespace ir2net::counters
