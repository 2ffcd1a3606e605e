#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <variant>
#include <vector>

#include "json.hpp"

#include "sfcp/common.hpp"

namespace sfcp {

inline constexpr double kUnlimited = std::numeric_limits<double>::infinity();

struct SubstrateParams {
    std::size_t num_dcs = 5;
    double edge_prob = 0.5;
    std::vector<std::size_t> node_choices{32, 64, 128, 256};
    double load_min = 0.7;
    double load_max = 1.0;
    TimeUnits link_latency = 1.0;
    double link_bandwidth = kUnlimited;
    double dc_bandwidth = kUnlimited;
    int max_connect_attempts = 1000;
};

void to_json(nlohmann::json& j, const SubstrateParams& p);
void from_json(const nlohmann::json& j, SubstrateParams& p);

struct ComputeNode {
    Cpu capacity = kNodeCapacity;
    Cpu used;

    Cpu residual() const { return capacity - used; }
};

struct DataCenter {
    DcIndex id = 0;
    std::vector<ComputeNode> nodes;
    double bw_capacity = kUnlimited;
    double bw_used = 0.0;

    Cpu total_cpu() const;
    Cpu used_cpu() const;
    Cpu free_cpu() const { return total_cpu() - used_cpu(); }
};

struct Link {
    DcIndex a = 0;
    DcIndex b = 0;
    TimeUnits latency = 1.0;
    double bandwidth = kUnlimited;
    double bw_used = 0.0;
};

/// Dense m x m matrix of shortest-path latencies.
class LatencyMatrix {
public:
    LatencyMatrix() = default;
    explicit LatencyMatrix(std::size_t m)
        : m_(m), d_(m * m, std::numeric_limits<double>::infinity()) {}

    std::size_t size() const { return m_; }
    double operator()(DcIndex a, DcIndex b) const { return d_[a * m_ + b]; }
    double& operator()(DcIndex a, DcIndex b) { return d_[a * m_ + b]; }
    bool operator==(const LatencyMatrix&) const = default;

private:
    std::size_t m_ = 0;
    std::vector<double> d_;
};

struct NodePlacement {
    DcIndex dc = 0;
    std::size_t node = 0;
    Cpu amount;
};

struct AllocationReceipt {
    std::uint64_t id = 0;
    std::vector<NodePlacement> placements;
    std::vector<std::pair<DcIndex, double>> dc_bandwidth;
    std::vector<std::pair<std::size_t, double>> link_bandwidth;
};

struct CapacityFailure {
    DcIndex dc = 0;
};

using AllocationResult = std::variant<AllocationReceipt, CapacityFailure>;

class SubstrateNetwork {
public:
    SubstrateNetwork() = default;
    SubstrateNetwork(std::vector<DataCenter> dcs, std::vector<Link> links);

    std::size_t num_dcs() const { return dcs_.size(); }
    const std::vector<DataCenter>& dcs() const { return dcs_; }
    const DataCenter& dc(DcIndex u) const { return dcs_.at(u); }
    const std::vector<Link>& links() const { return links_; }
    const LatencyMatrix& latency() const { return latency_; }

    /// Link indices of the deterministic shortest path a -> b (empty if a == b).
    std::vector<std::size_t> path(DcIndex a, DcIndex b) const;

    bool bandwidth_limited() const;

    /// Places each DC's demands one by one in the given order onto the node
    /// with the smallest sufficient residual. If that greedy pass strands a
    /// demand, the DC is re-packed by exact search. All-or-nothing.
    AllocationResult allocate(const std::map<DcIndex, std::vector<Cpu>>& demands_by_dc);

    /// Adds bandwidth reservations to an outstanding receipt. Returns false
    /// (and changes nothing) if any DC or link would exceed its capacity.
    bool reserve_bandwidth(AllocationReceipt& receipt,
                           const std::map<DcIndex, double>& dc_demand,
                           const std::map<std::size_t, double>& link_demand);

    void release(const AllocationReceipt& receipt);

    std::size_t outstanding_receipts() const { return outstanding_.size(); }

    std::uint64_t seed = 0;
    SubstrateParams params;

    /// Node-level state equality (used CPU and bandwidth bookkeeping).
    bool same_state(const SubstrateNetwork& other) const;

private:
    std::vector<DataCenter> dcs_;
    std::vector<Link> links_;
    LatencyMatrix latency_;
    // [s*m+v]: predecessor of v and the link used, on the shortest-path tree from s
    std::vector<DcIndex> prev_dc_;
    std::vector<std::size_t> prev_link_;
    std::set<std::uint64_t> outstanding_;
    std::uint64_t next_receipt_ = 1;

    void build_routing();
};

/// Expansion budget for the exact packing search behind allocate().
inline constexpr long kExactPackingBudget = 200000;

/// Node index per demand such that no residual is exceeded, or nullopt if
/// none exists (or the search budget runs out first).
std::optional<std::vector<std::size_t>> pack_exact(const std::vector<Cpu>& residuals, const std::vector<Cpu>& demands,
                                                   long budget);

/// Shortest-path latencies via Dijkstra from every source.
LatencyMatrix all_pairs_latency(std::size_t num_dcs, const std::vector<Link>& links);

/// Erdos-Renyi substrate; disconnected samples are redrawn from derived
/// sub-seeds until connected or attempts run out.
SubstrateNetwork generate_substrate(const SubstrateParams& params, std::uint64_t seed);

nlohmann::json substrate_to_json(const SubstrateNetwork& net);
SubstrateNetwork substrate_from_json(const nlohmann::json& j);

}  // namespace sfcp
