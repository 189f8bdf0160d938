#include "otpet/listmode.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace otpet {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)(v >> 8 & 0xff),
                        (unsigned char)(v >> 16 & 0xff), (unsigned char)(v >> 24)};
  os.write(reinterpret_cast<char*>(b), 4);
}

bool get_u32(std::istream& is, uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 |
      uint32_t(b[3]) << 24;
  return true;
}

void put_f32(std::ostream& os, float f) {
  uint32_t v;
  static_assert(sizeof(f) == sizeof(v));
  std::memcpy(&v, &f, 4);
  put_u32(os, v);
}

bool get_f32(std::istream& is, float& f) {
  uint32_t v;
  if (!get_u32(is, v)) return false;
  std::memcpy(&f, &v, 4);
  return true;
}

}  // namespace

void save_listmode_ascii(const ListmodeData& lm, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open for writing: " + path);
  char head[64];
  std::snprintf(head, sizeof(head), "%d %d %.17g\n", lm.M, lm.N, lm.delta_t);
  os << head;
  for (const auto& [key, count] : lm.events)
    os << key.first << ' ' << key.second << ' ' << count << '\n';
  if (!os) throw ConfigError("write failed: " + path);
}

ListmodeData load_listmode_ascii(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open: " + path);
  ListmodeData lm;
  if (!(is >> lm.M >> lm.N >> lm.delta_t))
    throw ConfigError("bad listmode header in " + path);
  if (lm.M < 0 || lm.N < 0 || lm.delta_t <= 0)
    throw ConfigError("bad listmode header in " + path);
  int i, j;
  int64_t c;
  while (is >> i >> j >> c) lm.add(i, j, c);
  if (!is.eof() && is.fail()) {
    // trailing garbage that isn't a record
    is.clear();
    std::string rest;
    std::getline(is, rest);
    if (!rest.empty()) throw ConfigError("bad listmode record in " + path);
  }
  return lm;
}

void save_listmode_binary(const ListmodeData& lm, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open for writing: " + path);
  put_u32(os, uint32_t(lm.M));
  put_u32(os, uint32_t(lm.N));
  put_f32(os, float(lm.delta_t));
  for (const auto& [key, count] : lm.events) {
    if (count > int64_t(std::numeric_limits<uint32_t>::max()))
      throw ConfigError("count too large for binary listmode format");
    put_u32(os, uint32_t(key.first));
    put_u32(os, uint32_t(key.second));
    put_u32(os, uint32_t(count));
  }
  if (!os) throw ConfigError("write failed: " + path);
}

ListmodeData load_listmode_binary(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open: " + path);
  ListmodeData lm;
  uint32_t m, n;
  float dt;
  if (!get_u32(is, m) || !get_u32(is, n) || !get_f32(is, dt))
    throw ConfigError("bad binary listmode header in " + path);
  lm.M = int(m);
  lm.N = int(n);
  lm.delta_t = dt;
  uint32_t i, j, c;
  while (get_u32(is, i)) {
    if (!get_u32(is, j) || !get_u32(is, c))
      throw ConfigError("truncated binary listmode record in " + path);
    lm.add(int(i), int(j), int64_t(c));
  }
  return lm;
}

}  // namespace otpet
