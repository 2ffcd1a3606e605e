#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace sfcp {

using DcIndex = std::size_t;
using TimeUnits = double;

/// Raised when an operation is called outside its contract (bad shapes,
/// double release, stepping a finished episode, ...).
class UsageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Raised when a generator cannot produce a valid object for the given
/// parameters.
class GenerationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// CPU amount in fixed-point ticks; one compute node holds exactly
/// `Cpu::kTicksPerNode` ticks. Integer bookkeeping keeps allocate/release
/// exactly invertible.
class Cpu {
public:
    static constexpr std::int64_t kTicksPerNode = 1'000'000'000;

    constexpr Cpu() = default;
    static constexpr Cpu from_ticks(std::int64_t t) { return Cpu{t}; }
    static Cpu from_fraction(double node_fraction);

    constexpr std::int64_t ticks() const { return ticks_; }
    constexpr double fraction() const {
        return static_cast<double>(ticks_) / static_cast<double>(kTicksPerNode);
    }

    constexpr Cpu& operator+=(Cpu o) { ticks_ += o.ticks_; return *this; }
    constexpr Cpu& operator-=(Cpu o) { ticks_ -= o.ticks_; return *this; }
    friend constexpr Cpu operator+(Cpu a, Cpu b) { return a += b; }
    friend constexpr Cpu operator-(Cpu a, Cpu b) { return a -= b; }
    friend constexpr auto operator<=>(Cpu, Cpu) = default;

private:
    constexpr explicit Cpu(std::int64_t t) : ticks_(t) {}
    std::int64_t ticks_ = 0;
};

inline constexpr Cpu kNodeCapacity = Cpu::from_ticks(Cpu::kTicksPerNode);

}  // namespace sfcp
