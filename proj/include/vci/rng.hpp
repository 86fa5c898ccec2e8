#pragma once

#include <cstdint>
#include <string_view>

namespace vci {

// Counter-based random stream: every draw is a pure function of (key, counter),
// and independent substreams are derived by hashing (key, id). There is no
// global state anywhere; anything stochastic takes a stream (or pre-drawn
// noise) as an explicit argument. Integer draws are bit-exact across
// platforms; real draws go through libm (sqrt/log/cos) and are documented as
// reproducible to 1e-12 across conforming platforms.
class RngStream {
 public:
  RngStream() = default;
  static RngStream from_seed(uint64_t seed);

  // Substream forked at the current key; drawing from the child never
  // perturbs the parent and vice versa.
  RngStream child(uint64_t id) const;
  RngStream child(std::string_view name) const;

  uint64_t next_u64();
  double uniform01();                 // [0, 1)
  double normal();                    // N(0, 1); consumes two u64 draws
  uint64_t uniform_int(uint64_t n);   // uniform on [0, n), n >= 1

  uint64_t key() const { return key_; }

 private:
  explicit RngStream(uint64_t key) : key_(key) {}

  uint64_t key_ = 0;
  uint64_t counter_ = 0;
};

}  // namespace vci
