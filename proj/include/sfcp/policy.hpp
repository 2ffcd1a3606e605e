#pragma once

#include <string>

#include "sfcp/env.hpp"

namespace sfcp {

/// Anything that turns the env's current request into an assignment.
class Policy {
public:
    virtual ~Policy() = default;
    virtual std::string name() const = 0;
    /// Decision for env.current(); must not mutate the env.
    virtual Assignment decide(const SfcEnv& env) = 0;
    /// Verdict for the request most recently decided.
    virtual void observe(const SfcRequest&, const Assignment&, const AdmissionOutcome&) {}
};

/// epsilon starts at `start`, drops by `decrement` after every episode, never
/// below `floor`.
struct EpsilonSchedule {
    double start = 1.0;
    double decrement = 0.1;
    double floor = 0.1;
    double value = 1.0;

    void reset() { value = start; }
    void end_episode() { value = std::max(floor, value - decrement); }
};

}  // namespace sfcp
