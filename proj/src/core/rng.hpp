#pragma once

#include <array>
#include <cstdint>

namespace pfc {

// Philox4x32-10 counter-based generator (Salmon et al., SC 2011).
// A block is a pure function of (counter, key), so any draw can be
// regenerated without replaying the stream.
using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

PhiloxCounter philox4x32_10(PhiloxCounter counter, PhiloxKey key);

// Independent stream addressed by (seed, stream id, purpose). Draws are
// indexed, so a stream consumed out of order yields the same values.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint32_t stream_id,
               std::uint32_t purpose = 0);

  // Uniform on the open interval (0, 1), 53 bits.
  double uniform();
  // Standard normal via Box-Muller; both variates of a pair are used.
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }

  std::uint64_t blocks_used() const { return block_; }

 private:
  void refill();

  PhiloxKey key_;
  std::uint32_t stream_id_;
  std::uint32_t purpose_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buf_{};
  int pos_ = 4;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Mixes a base seed with a replication index so replications get
// unrelated keys.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

}  // namespace pfc
