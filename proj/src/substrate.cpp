#include "sfcp/substrate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <tuple>

#include "sfcp/random.hpp"

namespace sfcp {

Cpu Cpu::from_fraction(double node_fraction) {
    return Cpu::from_ticks(std::llround(node_fraction * static_cast<double>(kTicksPerNode)));
}

namespace {

nlohmann::json bw_to_json(double v) {
    return std::isinf(v) ? nlohmann::json(nullptr) : nlohmann::json(v);
}

double bw_from_json(const nlohmann::json& j) {
    return j.is_null() ? kUnlimited : j.get<double>();
}

bool connected(std::size_t m, const std::vector<Link>& links) {
    if (m <= 1) return true;
    std::vector<std::vector<DcIndex>> adj(m);
    for (const auto& l : links) {
        adj[l.a].push_back(l.b);
        adj[l.b].push_back(l.a);
    }
    std::vector<bool> seen(m, false);
    std::vector<DcIndex> stack{0};
    seen[0] = true;
    std::size_t count = 1;
    while (!stack.empty()) {
        DcIndex u = stack.back();
        stack.pop_back();
        for (DcIndex v : adj[u]) {
            if (!seen[v]) {
                seen[v] = true;
                ++count;
                stack.push_back(v);
            }
        }
    }
    return count == m;
}

struct ShortestPathTree {
    std::vector<double> dist;
    std::vector<DcIndex> prev_dc;
    std::vector<std::size_t> prev_link;
};

ShortestPathTree dijkstra(std::size_t m, const std::vector<Link>& links, DcIndex src) {
    constexpr auto kNone = static_cast<std::size_t>(-1);
    std::vector<std::vector<std::pair<DcIndex, std::size_t>>> adj(m);
    for (std::size_t i = 0; i < links.size(); ++i) {
        adj[links[i].a].emplace_back(links[i].b, i);
        adj[links[i].b].emplace_back(links[i].a, i);
    }
    ShortestPathTree t{std::vector<double>(m, std::numeric_limits<double>::infinity()),
                       std::vector<DcIndex>(m, kNone), std::vector<std::size_t>(m, kNone)};
    using Item = std::pair<double, DcIndex>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    t.dist[src] = 0.0;
    pq.emplace(0.0, src);
    while (!pq.empty()) {
        auto [d, u] = pq.top();
        pq.pop();
        if (d > t.dist[u]) continue;
        for (auto [v, li] : adj[u]) {
            double nd = d + links[li].latency;
            if (nd < t.dist[v]) {
                t.dist[v] = nd;
                t.prev_dc[v] = u;
                t.prev_link[v] = li;
                pq.emplace(nd, v);
            }
        }
    }
    return t;
}

}  // namespace

void to_json(nlohmann::json& j, const SubstrateParams& p) {
    j = nlohmann::json{{"num_dcs", p.num_dcs},
                       {"edge_prob", p.edge_prob},
                       {"node_choices", p.node_choices},
                       {"load_min", p.load_min},
                       {"load_max", p.load_max},
                       {"link_latency", p.link_latency},
                       {"link_bandwidth", bw_to_json(p.link_bandwidth)},
                       {"dc_bandwidth", bw_to_json(p.dc_bandwidth)},
                       {"max_connect_attempts", p.max_connect_attempts}};
}

void from_json(const nlohmann::json& j, SubstrateParams& p) {
    SubstrateParams d;
    p.num_dcs = j.value("num_dcs", d.num_dcs);
    p.edge_prob = j.value("edge_prob", d.edge_prob);
    p.node_choices = j.value("node_choices", d.node_choices);
    p.load_min = j.value("load_min", d.load_min);
    p.load_max = j.value("load_max", d.load_max);
    p.link_latency = j.value("link_latency", d.link_latency);
    p.link_bandwidth = j.contains("link_bandwidth") ? bw_from_json(j["link_bandwidth"]) : d.link_bandwidth;
    p.dc_bandwidth = j.contains("dc_bandwidth") ? bw_from_json(j["dc_bandwidth"]) : d.dc_bandwidth;
    p.max_connect_attempts = j.value("max_connect_attempts", d.max_connect_attempts);
}

Cpu DataCenter::total_cpu() const {
    Cpu total;
    for (const auto& n : nodes) total += n.capacity;
    return total;
}

Cpu DataCenter::used_cpu() const {
    Cpu used;
    for (const auto& n : nodes) used += n.used;
    return used;
}

SubstrateNetwork::SubstrateNetwork(std::vector<DataCenter> dcs, std::vector<Link> links)
    : dcs_(std::move(dcs)), links_(std::move(links)) {
    for (std::size_t i = 0; i < dcs_.size(); ++i) dcs_[i].id = i;
    for (const auto& l : links_) {
        if (l.a >= dcs_.size() || l.b >= dcs_.size() || l.a == l.b)
            throw UsageError("link endpoints must be distinct DC indices");
    }
    if (!connected(dcs_.size(), links_))
        throw UsageError("substrate network must be connected");
    build_routing();
}

void SubstrateNetwork::build_routing() {
    const std::size_t m = dcs_.size();
    latency_ = LatencyMatrix(m);
    prev_dc_.assign(m * m, 0);
    prev_link_.assign(m * m, 0);
    for (DcIndex s = 0; s < m; ++s) {
        auto t = dijkstra(m, links_, s);
        for (DcIndex v = 0; v < m; ++v) {
            latency_(s, v) = t.dist[v];
            prev_dc_[s * m + v] = t.prev_dc[v];
            prev_link_[s * m + v] = t.prev_link[v];
        }
    }
}

LatencyMatrix all_pairs_latency(std::size_t num_dcs, const std::vector<Link>& links) {
    LatencyMatrix out(num_dcs);
    for (DcIndex s = 0; s < num_dcs; ++s) {
        auto t = dijkstra(num_dcs, links, s);
        for (DcIndex v = 0; v < num_dcs; ++v) out(s, v) = t.dist[v];
    }
    return out;
}

std::vector<std::size_t> SubstrateNetwork::path(DcIndex a, DcIndex b) const {
    const std::size_t m = dcs_.size();
    if (a >= m || b >= m) throw UsageError("path endpoint out of range");
    std::vector<std::size_t> out;
    for (DcIndex v = b; v != a; v = prev_dc_[a * m + v]) out.push_back(prev_link_[a * m + v]);
    std::reverse(out.begin(), out.end());
    return out;
}

bool SubstrateNetwork::bandwidth_limited() const {
    return std::any_of(dcs_.begin(), dcs_.end(), [](const DataCenter& d) { return !std::isinf(d.bw_capacity); }) ||
           std::any_of(links_.begin(), links_.end(), [](const Link& l) { return !std::isinf(l.bandwidth); });
}

namespace {

// Depth-first search for a node per demand, largest demands first. Nodes with
// equal residuals are interchangeable, so only the first of each is tried.
struct ExactPacker {
    std::vector<Cpu> residual;
    std::vector<Cpu> demand;
    std::vector<std::size_t> order;
    std::vector<std::size_t> chosen;
    long budget = 0;

    bool search(std::size_t k, Cpu remaining) {
        if (k == order.size()) return true;
        if (--budget < 0) return false;
        Cpu free_total;
        for (Cpu r : residual) free_total += r;
        if (remaining > free_total) return false;
        const Cpu d = demand[order[k]];
        std::vector<Cpu> tried;
        for (std::size_t i = 0; i < residual.size(); ++i) {
            if (residual[i] < d) continue;
            if (std::find(tried.begin(), tried.end(), residual[i]) != tried.end()) continue;
            tried.push_back(residual[i]);
            residual[i] -= d;
            chosen[order[k]] = i;
            if (search(k + 1, remaining - d)) return true;
            residual[i] += d;
            if (budget < 0) return false;
        }
        return false;
    }
};

}  // namespace

std::optional<std::vector<std::size_t>> pack_exact(const std::vector<Cpu>& residuals, const std::vector<Cpu>& demands,
                                                   long budget) {
    ExactPacker p{residuals, demands, {}, std::vector<std::size_t>(demands.size(), 0), budget};
    p.order.resize(demands.size());
    std::iota(p.order.begin(), p.order.end(), std::size_t{0});
    std::stable_sort(p.order.begin(), p.order.end(),
                     [&](std::size_t a, std::size_t b) { return demands[a] > demands[b]; });
    Cpu total;
    for (Cpu d : demands) total += d;
    if (!p.search(0, total)) return std::nullopt;
    return p.chosen;
}

AllocationResult SubstrateNetwork::allocate(const std::map<DcIndex, std::vector<Cpu>>& demands_by_dc) {
    AllocationReceipt receipt;
    auto rollback_from = [&](std::size_t start) {
        for (std::size_t k = start; k < receipt.placements.size(); ++k) {
            const auto& p = receipt.placements[k];
            dcs_[p.dc].nodes[p.node].used -= p.amount;
        }
        receipt.placements.resize(start);
    };
    for (const auto& [dc, demands] : demands_by_dc) {
        if (dc >= dcs_.size()) {
            rollback_from(0);
            throw UsageError("allocation targets unknown DC");
        }
        auto& nodes = dcs_[dc].nodes;
        const std::size_t start = receipt.placements.size();
        bool best_fit_ok = true;
        for (Cpu demand : demands) {
            if (demand <= Cpu{} || demand > kNodeCapacity) {
                rollback_from(0);
                throw UsageError("VNF demand must lie in (0, 1] of a node");
            }
            std::size_t best = nodes.size();
            for (std::size_t i = 0; i < nodes.size(); ++i) {
                Cpu r = nodes[i].residual();
                if (r >= demand && (best == nodes.size() || r < nodes[best].residual())) best = i;
            }
            if (best == nodes.size()) {
                best_fit_ok = false;
                break;
            }
            nodes[best].used += demand;
            receipt.placements.push_back({dc, best, demand});
        }
        if (best_fit_ok) continue;

        // Greedy order can strand capacity; fall back to an exact search.
        rollback_from(start);
        std::vector<Cpu> residuals;
        residuals.reserve(nodes.size());
        for (const auto& n : nodes) residuals.push_back(n.residual());
        auto packing = pack_exact(residuals, demands, kExactPackingBudget);
        if (!packing) {
            rollback_from(0);
            return CapacityFailure{dc};
        }
        for (std::size_t j = 0; j < demands.size(); ++j) {
            nodes[(*packing)[j]].used += demands[j];
            receipt.placements.push_back({dc, (*packing)[j], demands[j]});
        }
    }
    receipt.id = next_receipt_++;
    outstanding_.insert(receipt.id);
    return receipt;
}

bool SubstrateNetwork::reserve_bandwidth(AllocationReceipt& receipt,
                                         const std::map<DcIndex, double>& dc_demand,
                                         const std::map<std::size_t, double>& link_demand) {
    if (!outstanding_.contains(receipt.id)) throw UsageError("bandwidth reservation on unknown receipt");
    for (const auto& [u, amount] : dc_demand) {
        const auto& d = dcs_.at(u);
        if (d.bw_used + amount > d.bw_capacity) return false;
    }
    for (const auto& [li, amount] : link_demand) {
        const auto& l = links_.at(li);
        if (l.bw_used + amount > l.bandwidth) return false;
    }
    for (const auto& [u, amount] : dc_demand) {
        dcs_[u].bw_used += amount;
        receipt.dc_bandwidth.emplace_back(u, amount);
    }
    for (const auto& [li, amount] : link_demand) {
        links_[li].bw_used += amount;
        receipt.link_bandwidth.emplace_back(li, amount);
    }
    return true;
}

void SubstrateNetwork::release(const AllocationReceipt& receipt) {
    if (outstanding_.erase(receipt.id) == 0) throw UsageError("release of unknown or already-released receipt");
    for (const auto& p : receipt.placements) dcs_[p.dc].nodes[p.node].used -= p.amount;
    for (const auto& [u, amount] : receipt.dc_bandwidth) dcs_[u].bw_used -= amount;
    for (const auto& [li, amount] : receipt.link_bandwidth) links_[li].bw_used -= amount;
}

bool SubstrateNetwork::same_state(const SubstrateNetwork& other) const {
    if (dcs_.size() != other.dcs_.size() || links_.size() != other.links_.size()) return false;
    for (std::size_t u = 0; u < dcs_.size(); ++u) {
        const auto& a = dcs_[u];
        const auto& b = other.dcs_[u];
        if (a.nodes.size() != b.nodes.size() || a.bw_used != b.bw_used) return false;
        for (std::size_t i = 0; i < a.nodes.size(); ++i) {
            if (a.nodes[i].used != b.nodes[i].used || a.nodes[i].capacity != b.nodes[i].capacity) return false;
        }
    }
    for (std::size_t i = 0; i < links_.size(); ++i) {
        if (links_[i].bw_used != other.links_[i].bw_used) return false;
    }
    return true;
}

SubstrateNetwork generate_substrate(const SubstrateParams& params, std::uint64_t seed) {
    const std::size_t m = params.num_dcs;
    if (m < 1) throw UsageError("num_dcs must be >= 1");
    if (!(params.edge_prob >= 0.0 && params.edge_prob <= 1.0)) throw UsageError("edge_prob must lie in [0, 1]");
    if (!(0.0 <= params.load_min && params.load_min <= params.load_max && params.load_max <= 1.0))
        throw UsageError("load range must lie within [0, 1]");
    if (params.node_choices.empty()) throw UsageError("node_choices must not be empty");
    if (m > 1 && params.edge_prob == 0.0)
        throw GenerationError("edge_prob = 0 cannot produce a connected substrate");

    std::vector<Link> links;
    bool ok = false;
    for (int attempt = 0; attempt < params.max_connect_attempts && !ok; ++attempt) {
        Rng rng = make_rng(seed, 1000 + static_cast<std::uint64_t>(attempt));
        std::bernoulli_distribution edge(params.edge_prob);
        links.clear();
        for (DcIndex a = 0; a < m; ++a)
            for (DcIndex b = a + 1; b < m; ++b)
                if (edge(rng)) links.push_back(Link{a, b, params.link_latency, params.link_bandwidth, 0.0});
        ok = connected(m, links);
    }
    if (!ok) throw GenerationError("could not sample a connected substrate within the attempt budget");

    Rng rng = make_rng(seed, 1);
    std::uniform_int_distribution<std::size_t> pick(0, params.node_choices.size() - 1);
    std::uniform_real_distribution<double> load(params.load_min, params.load_max);
    std::vector<DataCenter> dcs(m);
    for (DcIndex u = 0; u < m; ++u) {
        dcs[u].nodes.resize(params.node_choices[pick(rng)]);
        dcs[u].bw_capacity = params.dc_bandwidth;
        for (auto& n : dcs[u].nodes) n.used = Cpu::from_fraction(load(rng));
    }
    SubstrateNetwork net(std::move(dcs), std::move(links));
    net.seed = seed;
    net.params = params;
    return net;
}

nlohmann::json substrate_to_json(const SubstrateNetwork& net) {
    nlohmann::json dcs = nlohmann::json::array();
    for (const auto& d : net.dcs()) {
        std::vector<std::int64_t> used;
        std::vector<std::int64_t> cap;
        for (const auto& n : d.nodes) {
            used.push_back(n.used.ticks());
            cap.push_back(n.capacity.ticks());
        }
        dcs.push_back({{"id", d.id},
                       {"node_capacity_ticks", cap},
                       {"node_used_ticks", used},
                       {"bw_capacity", bw_to_json(d.bw_capacity)},
                       {"bw_used", d.bw_used}});
    }
    nlohmann::json links = nlohmann::json::array();
    for (const auto& l : net.links()) {
        links.push_back({{"a", l.a},
                         {"b", l.b},
                         {"latency", l.latency},
                         {"bandwidth", bw_to_json(l.bandwidth)},
                         {"bw_used", l.bw_used}});
    }
    return {{"format", "sfcp-substrate"},
            {"version", 1},
            {"seed", net.seed},
            {"ticks_per_node", Cpu::kTicksPerNode},
            {"params", net.params},
            {"dcs", dcs},
            {"links", links}};
}

SubstrateNetwork substrate_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "sfcp-substrate") throw UsageError("not a substrate document");
    if (j.value("version", 0) != 1) throw UsageError("unsupported substrate document version");
    std::vector<DataCenter> dcs;
    for (const auto& jd : j.at("dcs")) {
        DataCenter d;
        auto cap = jd.at("node_capacity_ticks").get<std::vector<std::int64_t>>();
        auto used = jd.at("node_used_ticks").get<std::vector<std::int64_t>>();
        if (cap.size() != used.size()) throw UsageError("node arrays differ in length");
        for (std::size_t i = 0; i < cap.size(); ++i)
            d.nodes.push_back({Cpu::from_ticks(cap[i]), Cpu::from_ticks(used[i])});
        d.bw_capacity = bw_from_json(jd.at("bw_capacity"));
        d.bw_used = jd.value("bw_used", 0.0);
        dcs.push_back(std::move(d));
    }
    std::vector<Link> links;
    for (const auto& jl : j.at("links")) {
        links.push_back(Link{jl.at("a").get<DcIndex>(), jl.at("b").get<DcIndex>(), jl.at("latency").get<double>(),
                             bw_from_json(jl.at("bandwidth")), jl.value("bw_used", 0.0)});
    }
    SubstrateNetwork net(std::move(dcs), std::move(links));
    net.seed = j.value("seed", std::uint64_t{0});
    net.params = j.value("params", SubstrateParams{});
    return net;
}

}  // namespace sfcp
