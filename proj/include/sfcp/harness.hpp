#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sfcp/agents/ddqn.hpp"
#include "sfcp/agents/sdac.hpp"
#include "sfcp/baselines.hpp"

namespace sfcp {

/// One processed request.
struct MetricsRecord {
    std::size_t t = 0;
    Verdict verdict = Verdict::RejectedCpu;
    std::optional<TimeUnits> e2e_latency;
    std::size_t chain_length = 0;
    std::int64_t inference_ns = 0;
    std::vector<std::int64_t> used_ticks;   // per DC, after the step
    std::vector<std::int64_t> total_ticks;  // per DC
    double rate = 0.0;                      // modulated arrival rate at t

    bool accepted() const { return verdict == Verdict::Accepted; }
};

double average_acceptance(const std::vector<MetricsRecord>& records);

/// Trailing-window mean of the acceptance indicator; the first window-1
/// entries average over what is available.
std::vector<double> acceptance_over_time(const std::vector<MetricsRecord>& records, std::size_t window = 500);

struct ViolationBreakdown {
    double cpu = 0.0;
    double sla = 0.0;
    double bandwidth = 0.0;
};

/// Fractions of all requests by rejection cause.
ViolationBreakdown violation_breakdown(const std::vector<MetricsRecord>& records);

/// Mean over DCs of used/total for one record.
double utilization(const MetricsRecord& r);

/// Utilization series; with `peak_only`, restricted to records whose rate is
/// at least peak_fraction of the maximum rate.
std::vector<double> avg_utilization(const std::vector<MetricsRecord>& records, bool peak_only = true,
                                    double peak_fraction = 0.8);

/// exp(-sum p ln p) with p_u = used_u / sum(used).
double load_perplexity(const std::vector<double>& used);
double load_perplexity(const MetricsRecord& r);

double mean(const std::vector<double>& xs);
/// Middle value; mean of the two central values for an even count.
double median(std::vector<double> xs);
/// Index whose value is closest to the median, lowest index on ties.
std::size_t median_index(const std::vector<double>& xs);

/// Runs the policy over the env from reset, timing each decision.
std::vector<MetricsRecord> run_policy(SfcEnv& env, Policy& policy, double base_rate);

/// Mean decision time in nanoseconds over a full pass, skipping the first
/// `warmup` requests.
double bench_inference(SfcEnv& env, Policy& policy, std::size_t warmup = 100);

inline constexpr int kTraceSchemaVersion = 1;

/// One row per request; decision timings are left out so identical runs give
/// identical files.
void write_trace_csv(std::ostream& os, const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> read_trace_csv(std::istream& is);
void write_timing_csv(std::ostream& os, const std::vector<MetricsRecord>& records);

enum class Algo { Gp, Ils, Rails, ParaDdqn, SeqDdqn, Sdac };

Algo parse_algo(const std::string& name);
std::string algo_name(Algo a);
bool is_learning(Algo a);
const std::vector<Algo>& all_algos();

struct RunConfig {
    SubstrateParams substrate;
    TrafficParams traffic;
    std::size_t requests = 10000;
    std::size_t eval_requests = 10000;
    std::size_t episodes = 15;
    std::vector<Algo> algos = all_algos();
    SdacConfig sdac;
    DdqnConfig ddqn;
    RailsConfig rails;
    LocalSearchOptions ils;
    std::uint64_t seed = 1;
    std::size_t topologies = 10;
    std::size_t test_seeds = 10;
    std::size_t window = 500;
    std::string out = "results";

    /// 1,000 requests and 3 episodes.
    void apply_smoke();
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

/// Seed streams derived from RunConfig::seed.
std::uint64_t topology_seed(std::uint64_t base, std::size_t k);
std::uint64_t train_workload_seed(std::uint64_t base, std::size_t k, std::size_t episode);
std::uint64_t eval_workload_seed(std::uint64_t base, std::size_t k);
std::uint64_t test_workload_seed(std::uint64_t base, std::size_t j);
std::uint64_t agent_seed(std::uint64_t base, std::size_t k);
std::uint64_t solver_seed(std::uint64_t base, std::size_t j);

/// A policy plus typed access to its learning side.
struct Agent {
    Algo algo = Algo::Gp;
    std::unique_ptr<Policy> policy;
    SdacAgent* sdac = nullptr;
    DdqnAgent* ddqn = nullptr;
    RailsPolicy* rails = nullptr;

    std::string name() const { return policy->name(); }
    bool learns() const { return sdac != nullptr || ddqn != nullptr; }
    void save(const std::filesystem::path& path);
    void load(const std::filesystem::path& path);
};

Agent make_agent(Algo algo, std::size_t num_dcs, const RunConfig& cfg, std::uint64_t seed);

struct LearningRow {
    std::size_t episode = 0;
    double epsilon = 0.0;
    std::size_t train_steps = 0;
    double loss = 0.0;        // critic or Q loss
    double actor_loss = 0.0;  // SDAC only
    double train_acceptance = 0.0;
    double eval_reward = 0.0;  // greedy mean reward on the held-out workload
};

/// Episodes on per-episode resampled workloads, each followed by a greedy
/// evaluation pass over `eval`.
std::vector<LearningRow> train_agent(Agent& agent, const SubstrateNetwork& net, const RunConfig& cfg,
                                     std::size_t topology, const Workload& eval,
                                     const std::function<void(const LearningRow&)>& on_episode = {});

/// Greedy mean reward of a fresh pass over the workload.
double evaluate_reward(Policy& policy, const SubstrateNetwork& net, const Workload& w);

void write_learning_csv(std::ostream& os, const std::vector<LearningRow>& rows);

/// Scalar summary of one test run.
struct RunSummary {
    double acceptance = 0.0;
    double cpu_violations = 0.0;
    double sla_violations = 0.0;
    double peak_utilization = 0.0;
    double mean_perplexity = 0.0;
};

RunSummary summarize(const std::vector<MetricsRecord>& records);
nlohmann::json summary_to_json(const RunSummary& s);

/// Topology sweep, median-topology selection, then test seeds; writes per-run
/// traces, learning curves, and report.json under cfg.out.
nlohmann::json orchestrate(const RunConfig& cfg, const std::function<void(const std::string&)>& log = {});

}  // namespace sfcp
