#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <string_view>

namespace dgs {

// xoshiro256++ with a fully specified output->double mapping so that streams
// are reproducible across standard libraries and platforms.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& w : state_) w = splitmix64(sm);
    has_cached_normal_ = false;
    cached_normal_ = 0.0;
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // uniform in [0,1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // inclusive bounds
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  double normal() {
    if (has_cached_normal_) {
      has_cached_normal_ = false;
      return cached_normal_;
    }
    double u1 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double two_pi = 6.283185307179586476925286766559;
    cached_normal_ = r * std::sin(two_pi * u2);
    has_cached_normal_ = true;
    return r * std::cos(two_pi * u2);
  }

  std::string serialize() const {
    std::ostringstream os;
    os << state_[0] << ' ' << state_[1] << ' ' << state_[2] << ' ' << state_[3] << ' '
       << (has_cached_normal_ ? 1 : 0) << ' ';
    os.precision(17);
    os << cached_normal_;
    return os.str();
  }

  void deserialize(const std::string& text) {
    std::istringstream is(text);
    int cached = 0;
    is >> state_[0] >> state_[1] >> state_[2] >> state_[3] >> cached >> cached_normal_;
    has_cached_normal_ = cached != 0;
  }

  static std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t state_[4] = {1, 2, 3, 4};
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

// One root seed fans out into independent named streams (data, sds, init, ...)
// so ablations can change one stream without perturbing the others.
inline std::uint64_t derive_stream_seed(std::uint64_t root_seed, std::string_view stream_name) {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : stream_name) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  std::uint64_t mixed = root_seed ^ h;
  return RngStream::splitmix64(mixed);
}

inline RngStream make_stream(std::uint64_t root_seed, std::string_view stream_name) {
  return RngStream(derive_stream_seed(root_seed, stream_name));
}

}  // namespace dgs
