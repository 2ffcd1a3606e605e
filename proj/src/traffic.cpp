#include "sfcp/traffic.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "sfcp/random.hpp"

namespace sfcp {

void to_json(nlohmann::json& j, const TrafficParams& p) {
    j = nlohmann::json{{"base_rate", p.base_rate},       {"min_chain", p.min_chain},
                       {"max_chain", p.max_chain},       {"min_demand", p.min_demand},
                       {"max_demand", p.max_demand},     {"mean_lifetime", p.mean_lifetime},
                       {"min_sla", p.min_sla},           {"max_sla", p.max_sla},
                       {"min_vlink_bw", p.min_vlink_bw}, {"max_vlink_bw", p.max_vlink_bw}};
}

void from_json(const nlohmann::json& j, TrafficParams& p) {
    TrafficParams d;
    p.base_rate = j.value("base_rate", d.base_rate);
    p.min_chain = j.value("min_chain", d.min_chain);
    p.max_chain = j.value("max_chain", d.max_chain);
    p.min_demand = j.value("min_demand", d.min_demand);
    p.max_demand = j.value("max_demand", d.max_demand);
    p.mean_lifetime = j.value("mean_lifetime", d.mean_lifetime);
    p.min_sla = j.value("min_sla", d.min_sla);
    p.max_sla = j.value("max_sla", d.max_sla);
    p.min_vlink_bw = j.value("min_vlink_bw", d.min_vlink_bw);
    p.max_vlink_bw = j.value("max_vlink_bw", d.max_vlink_bw);
}

double modulated_rate(std::size_t i, std::size_t n, double base_rate) {
    if (n == 0 || i > n) throw UsageError("modulated_rate requires 0 <= i <= n and n >= 1");
    if (!(base_rate > 0.0)) throw UsageError("base rate must be positive");
    const double phase = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
    return base_rate * (0.5 * (std::sin(phase) + 1.0) * 0.9 + 0.1);
}

Workload generate_workload(std::size_t count, std::size_t num_dcs, std::uint64_t seed, const TrafficParams& p) {
    if (count < 1) throw UsageError("workload needs at least one request");
    if (num_dcs < 1) throw UsageError("workload needs at least one DC");
    if (p.min_chain < 1 || p.min_chain > p.max_chain) throw UsageError("invalid chain length range");

    Rng rng = make_rng(seed, 7);
    std::uniform_int_distribution<std::size_t> chain(p.min_chain, p.max_chain);
    std::uniform_real_distribution<double> demand(p.min_demand, p.max_demand);
    std::uniform_real_distribution<double> sla(p.min_sla, p.max_sla);
    std::uniform_real_distribution<double> bw(p.min_vlink_bw, p.max_vlink_bw);
    std::exponential_distribution<double> lifetime(1.0 / p.mean_lifetime);
    std::uniform_int_distribution<DcIndex> endpoint(0, num_dcs - 1);

    Workload out;
    out.reserve(count);
    TimeUnits t = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        std::exponential_distribution<double> gap(modulated_rate(i, count, p.base_rate));
        t += gap(rng);
        SfcRequest r;
        r.id = i;
        r.t_arr = t;
        const std::size_t n = chain(rng);
        r.vnfs.resize(n);
        for (auto& v : r.vnfs) v.cpu_demand = demand(rng);
        r.vlink_bw.resize(n + 1);
        for (auto& b : r.vlink_bw) b = bw(rng);
        r.t_delta = lifetime(rng);
        r.l_sla = sla(rng);
        r.src = endpoint(rng);
        r.dst = endpoint(rng);
        out.push_back(std::move(r));
    }
    return out;
}

nlohmann::json request_to_json(const SfcRequest& r) {
    std::vector<double> demands;
    demands.reserve(r.vnfs.size());
    for (const auto& v : r.vnfs) demands.push_back(v.cpu_demand);
    return {{"id", r.id},         {"cpu", demands},         {"vlink_bw", r.vlink_bw}, {"t_arr", r.t_arr},
            {"t_delta", r.t_delta}, {"l_sla", r.l_sla}, {"src", r.src},           {"dst", r.dst}};
}

SfcRequest request_from_json(const nlohmann::json& j) {
    SfcRequest r;
    r.id = j.at("id").get<std::size_t>();
    for (double d : j.at("cpu").get<std::vector<double>>()) r.vnfs.push_back(Vnf{d});
    r.vlink_bw = j.at("vlink_bw").get<std::vector<double>>();
    r.t_arr = j.at("t_arr").get<double>();
    r.t_delta = j.at("t_delta").get<double>();
    r.l_sla = j.at("l_sla").get<double>();
    r.src = j.at("src").get<DcIndex>();
    r.dst = j.at("dst").get<DcIndex>();
    if (r.vnfs.empty() || r.vlink_bw.size() != r.vnfs.size() + 1)
        throw UsageError("request needs >= 1 VNF and n+1 virtual links");
    return r;
}

std::string workload_to_jsonl(const Workload& w) {
    std::string out;
    for (const auto& r : w) {
        out += request_to_json(r).dump();
        out += '\n';
    }
    return out;
}

Workload workload_from_jsonl(const std::string& text) {
    Workload w;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        w.push_back(request_from_json(nlohmann::json::parse(line)));
    }
    return w;
}

}  // namespace sfcp
