#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace relrefine {

/// Named multiply-accumulate counters. One MAC counts as two FLOPs.
class FlopLedger {
 public:
  void add(const std::string& name, std::uint64_t macs) { counters_[name] += macs; }
  std::uint64_t macs(const std::string& name) const {
    auto it = counters_.find(name);
    return it == counters_.end() ? 0 : it->second;
  }
  std::uint64_t total_macs() const {
    std::uint64_t t = 0;
    for (const auto& [_, v] : counters_) t += v;
    return t;
  }
  double total_flops() const { return 2.0 * static_cast<double>(total_macs()); }
  const std::map<std::string, std::uint64_t>& counters() const { return counters_; }
  void merge(const FlopLedger& other) {
    for (const auto& [k, v] : other.counters_) counters_[k] += v;
  }
  void clear() { counters_.clear(); }

 private:
  std::map<std::string, std::uint64_t> counters_;
};

}  // namespace relrefine
