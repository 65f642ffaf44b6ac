#include "selfdoc/rng.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "selfdoc/common.hpp"

namespace selfdoc {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream));
}

std::string Rng::save_state() const {
  std::ostringstream os;
  os << eng_;
  uint64_t bits = 0;
  static_assert(sizeof(bits) == sizeof(spare_));
  std::memcpy(&bits, &spare_, sizeof(bits));
  os << ' ' << (has_spare_ ? 1 : 0) << ' ' << bits;
  return os.str();
}

void Rng::load_state(const std::string& s) {
  std::istringstream is(s);
  is >> eng_;
  int flag = 0;
  uint64_t bits = 0;
  is >> flag >> bits;
  if (is.fail()) throw ConfigError("rng: malformed state string");
  has_spare_ = flag != 0;
  std::memcpy(&spare_, &bits, sizeof(bits));
}

}  // namespace selfdoc
