#pragma once

#include <map>
#include <optional>
#include <string_view>
#include <vector>

#include "sfcp/diffcomp/tensor.hpp"
#include "sfcp/substrate.hpp"
#include "sfcp/traffic.hpp"

namespace sfcp {

using StateMatrix = dc::Mat;
using ActionMatrix = dc::Mat;

/// Target DC per VNF, in chain order.
struct Assignment {
    std::vector<DcIndex> targets;
    bool operator==(const Assignment&) const = default;
};

/// Derived mapping of every virtual link (src->v1, ..., vn->dst) onto the
/// substrate: its shortest-path latency and the links it traverses.
struct RouteMapping {
    std::vector<TimeUnits> latency;
    std::vector<std::vector<std::size_t>> links;
};

enum class Verdict { Accepted, RejectedCpu, RejectedBandwidth, RejectedSla };

std::string_view verdict_name(Verdict v);

struct AdmissionOutcome {
    Verdict verdict = Verdict::RejectedCpu;
    std::optional<TimeUnits> e2e_latency;  // absent on CPU rejection
    std::optional<DcIndex> failed_dc;      // set on CPU rejection

    bool accepted() const { return verdict == Verdict::Accepted; }
};

struct ActiveService {
    AllocationReceipt receipt;
    TimeUnits expiry = 0.0;
};

struct EnvOptions {
    double lifetime_cap = 5000.0;
    double sla_min = 2.0;
    double sla_max = 4.0;
};

/// Feature count per VNF token for m DCs.
constexpr std::size_t state_dim(std::size_t m) { return 5 + 4 * m; }

/// One row per VNF: [D_v, D_e_out, t_arr/horizon, min(t_delta/cap, 1), sla scaled,
/// onehot(src), onehot(dst), free CPU fraction per DC, free bandwidth fraction per DC].
StateMatrix encode_state(const SfcRequest& request, const SubstrateNetwork& net, TimeUnits horizon,
                         const EnvOptions& options = {});

/// Per-DC free CPU fraction (C-bar normalized by total DC capacity).
std::vector<double> free_cpu_fractions(const SubstrateNetwork& net);

TimeUnits e2e_latency(const Assignment& assignment, const SfcRequest& request, const LatencyMatrix& latency);

RouteMapping route(const Assignment& assignment, const SfcRequest& request, const SubstrateNetwork& net);

/// Per-row argmax with the lowest index winning ties.
Assignment decode_actions(const ActionMatrix& actions);

/// Owns the live substrate and the table of running services; applies the
/// expiry -> CPU -> bandwidth -> SLA admission pipeline transactionally.
class AdmissionController {
public:
    AdmissionController() = default;
    explicit AdmissionController(SubstrateNetwork net) : net_(std::move(net)) {}

    /// Releases every service with expiry <= now.
    void expire(TimeUnits now);

    /// Expects now == request.t_arr; runs expiry first.
    AdmissionOutcome admit(const SfcRequest& request, const Assignment& assignment, TimeUnits now);

    const SubstrateNetwork& network() const { return net_; }
    std::size_t active_services() const { return active_.size(); }
    const std::multimap<TimeUnits, ActiveService>& active() const { return active_; }

private:
    SubstrateNetwork net_;
    std::multimap<TimeUnits, ActiveService> active_;
};

struct StepResult {
    double reward = 0.0;
    StateMatrix next_state;  // 0 rows when done
    bool done = false;
    Assignment assignment;
    AdmissionOutcome outcome;
};

class SfcEnv {
public:
    SfcEnv(SubstrateNetwork pristine, Workload workload, EnvOptions options = {});

    /// Restores the pristine substrate, clears active services, rewinds the cursor.
    StateMatrix reset();
    StateMatrix reset(Workload workload);
    StateMatrix reset(SubstrateNetwork pristine, Workload workload);

    StepResult step(const Assignment& assignment);
    StepResult step(const ActionMatrix& relaxed_actions);

    bool done() const { return cursor_ >= workload_.size(); }
    std::size_t cursor() const { return cursor_; }
    const SfcRequest& current() const;
    StateMatrix state() const;

    const Workload& workload() const { return workload_; }
    const SubstrateNetwork& network() const { return admission_.network(); }
    const SubstrateNetwork& pristine() const { return pristine_; }
    const AdmissionController& admission() const { return admission_; }
    std::size_t num_dcs() const { return pristine_.num_dcs(); }
    TimeUnits horizon() const { return horizon_; }
    const EnvOptions& options() const { return options_; }

private:
    SubstrateNetwork pristine_;
    Workload workload_;
    EnvOptions options_;
    AdmissionController admission_;
    std::size_t cursor_ = 0;
    TimeUnits horizon_ = 1.0;
};

}  // namespace sfcp
