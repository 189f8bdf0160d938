#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>

#include "otpet/errors.hpp"

// Binned coincidence counts: sparse E_{i,j} over M time bins x N detector
// pairs. Bin index i and pair index j are 1-based; absent keys mean zero.

namespace otpet {

struct ListmodeData {
  int M = 0;             // time bins
  int N = 0;             // detector pairs
  double delta_t = 0.0;  // bin duration, seconds
  std::map<std::pair<int, int>, int64_t> events;

  void add(int i, int j, int64_t count) {
    if (count == 0) return;
    if (i < 1 || i > M || j < 1 || j > N)
      throw ConfigError("listmode: event index out of range");
    if (count < 0) throw ConfigError("listmode: negative count");
    events[{i, j}] += count;
  }

  int64_t total() const {
    int64_t s = 0;
    for (const auto& [k, c] : events) s += c;
    return s;
  }

  bool operator==(const ListmodeData& o) const {
    return M == o.M && N == o.N && delta_t == o.delta_t && events == o.events;
  }
};

// ASCII: header line `M N dT_seconds`, then one `i j count` line per record.
void save_listmode_ascii(const ListmodeData& lm, const std::string& path);
ListmodeData load_listmode_ascii(const std::string& path);

// Binary: little-endian uint32 M, uint32 N, float32 dT, then
// (uint32 i, uint32 j, uint32 count) triples until EOF.
void save_listmode_binary(const ListmodeData& lm, const std::string& path);
ListmodeData load_listmode_binary(const std::string& path);

}  // namespace otpet
