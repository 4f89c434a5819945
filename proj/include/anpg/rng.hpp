#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace anpg {

/// Counter-based random stream built on the SplitMix64 finalizer.
///
/// Draw i of a stream is a pure function of (seed, i), so a stream can be
/// reconstructed from its seed alone and child streams derived with
/// substream() never overlap their parent. One stream belongs to one run.
class RngStream {
public:
    using result_type = std::uint64_t;

    explicit RngStream(std::uint64_t seed = 0) : seed_(seed) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() { return mix(seed_ + (++counter_) * kGolden); }

    /// Uniform double in [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    /// Uniform double in (0, 1].
    double uniform_open_zero() { return 1.0 - uniform(); }

    bool coin() { return ((*this)() >> 63) != 0; }

    /// Independent child stream keyed by `id`; does not advance this stream.
    RngStream substream(std::uint64_t id) const {
        return RngStream(mix(seed_ ^ mix(id + 0x632be59bd9b4e019ULL)));
    }

    /// Child stream keyed by the next counter value; advances this stream by one.
    RngStream split() { return RngStream(mix((*this)() ^ 0xd1b54a32d192ed03ULL)); }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

private:
    static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

    static constexpr std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

}  // namespace anpg
