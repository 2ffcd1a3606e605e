#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "sfcp/common.hpp"

namespace sfcp {

struct Vnf {
    double cpu_demand = 0.0;  // fraction of one compute node
};

/// One linear SFC request. `vlink_bw` has one entry per virtual link including
/// the two auxiliary endpoint links: src->v1, v1->v2, ..., vn->dst.
struct SfcRequest {
    std::size_t id = 0;
    std::vector<Vnf> vnfs;
    std::vector<double> vlink_bw;
    TimeUnits t_arr = 0.0;
    TimeUnits t_delta = 0.0;
    TimeUnits l_sla = 0.0;
    DcIndex src = 0;
    DcIndex dst = 0;

    std::size_t size() const { return vnfs.size(); }
};

struct TrafficParams {
    double base_rate = 0.05;
    std::size_t min_chain = 2;
    std::size_t max_chain = 10;
    double min_demand = 0.05;
    double max_demand = 0.20;
    double mean_lifetime = 1000.0;
    double min_sla = 2.0;
    double max_sla = 4.0;
    double min_vlink_bw = 0.01;
    double max_vlink_bw = 0.05;
};

void to_json(nlohmann::json& j, const TrafficParams& p);
void from_json(const nlohmann::json& j, TrafficParams& p);

using Workload = std::vector<SfcRequest>;

/// Sinusoidally modulated arrival rate at step i of n:
/// rate * (0.45 * (sin(2*pi*i/n) + 1) + 0.1), which spans [0.1*rate, rate].
double modulated_rate(std::size_t i, std::size_t n, double base_rate);

Workload generate_workload(std::size_t count, std::size_t num_dcs, std::uint64_t seed, const TrafficParams& params);

nlohmann::json request_to_json(const SfcRequest& r);
SfcRequest request_from_json(const nlohmann::json& j);

/// One JSON document per line.
std::string workload_to_jsonl(const Workload& w);
Workload workload_from_jsonl(const std::string& text);

}  // namespace sfcp
