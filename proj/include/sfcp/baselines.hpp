#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>

#include "sfcp/agents/replay.hpp"
#include "sfcp/diffcomp/layers.hpp"
#include "sfcp/policy.hpp"

namespace sfcp {

/// Aggregate free CPU per DC.
std::vector<Cpu> free_capacity(const SubstrateNetwork& net);

/// Whole chain to the DC with the most free CPU; lowest index on ties.
Assignment gp_assign(const SfcRequest& request, const std::vector<double>& free);
Assignment gp_assign(const SfcRequest& request, const SubstrateNetwork& net);

struct LocalSearchOptions {
    std::size_t max_iter = 0;  // 0 means 10 * chain length * DC count
    double perturb_prob = 0.2;
};

std::size_t default_max_iter(std::size_t chain_length, std::size_t num_dcs);

/// Whether `count` VNFs with total demand `demand` may go to `dc`.
using FeasibilityCheck = std::function<bool(DcIndex dc, Cpu demand, std::size_t count)>;

struct LocalSearchResult {
    Assignment best;
    TimeUnits latency = 0.0;
    bool feasible = false;  // incumbent passed the check on every DC it uses
    std::size_t iterations = 0;
    std::vector<TimeUnits> accepted;  // incumbent latency after each acceptance, initial first
    std::vector<bool> accepted_feasible;
};

/// Perturb, re-place one random VNF at its best checked DC, then accept if the
/// candidate passes the check where the incumbent does not, or matches it on
/// the check with strictly lower latency. Stops once the incumbent is
/// checked-feasible within the SLA.
LocalSearchResult local_search(const SfcRequest& request, const LatencyMatrix& latency, std::size_t num_dcs,
                               const FeasibilityCheck& feasible, const LocalSearchOptions& opts, Rng& rng);

/// Local search with the aggregate CPU check: co-assigned demand <= free CPU.
LocalSearchResult ils_solve(const SfcRequest& request, const SubstrateNetwork& net, const LocalSearchOptions& opts,
                            Rng& rng);

/// Model inputs: free CPU and demand over the DC's total CPU, VNF count over 10.
using RiskFeatures = std::array<double, 3>;
RiskFeatures risk_features(const DataCenter& dc, Cpu demand, std::size_t count);

struct RiskSample {
    RiskFeatures x{};
    double label = 0.0;
};

struct RiskConfig {
    std::size_t hidden = 32;
    std::size_t memory = 1000;
    double lr = 0.01;
    double weight_decay = 0.01;
    std::size_t batch = 100;
};

/// h = gelu(W1 x); h += gelu(W2 LN(h)); p = sigmoid(w h).
class RiskModel {
public:
    RiskModel() = default;
    RiskModel(const std::string& name, const RiskConfig& cfg, Rng& rng);
    RiskModel(const RiskModel& other);
    RiskModel& operator=(const RiskModel& other);

    double predict(const RiskFeatures& x) const;
    dc::Var logits(dc::Tape& t, dc::Var x);

    void remember(const RiskSample& s) { memory_.push(s); }
    /// One shuffled pass of minibatch cross-entropy steps over the memory;
    /// nullopt when the memory is empty. Returns the mean batch loss.
    std::optional<double> update(Rng& rng);
    /// Mean cross-entropy over the whole memory.
    double memory_loss();

    const ReplayBuffer<RiskSample>& memory() const { return memory_; }
    std::size_t updates() const { return updates_; }
    dc::ParamList params();

    dc::Linear fc1, fc2, out;
    dc::LayerNorm ln;

private:
    RiskConfig cfg_;
    ReplayBuffer<RiskSample> memory_{1};
    dc::AdamW opt_;
    std::size_t updates_ = 0;
};

/// Local search whose check is the DC's risk model >= rho.
LocalSearchResult rails_solve(const SfcRequest& request, const SubstrateNetwork& net,
                              const std::vector<RiskModel>& models, double rho, const LocalSearchOptions& opts,
                              Rng& rng);

class GreedyPolicy : public Policy {
public:
    std::string name() const override { return "gp"; }
    Assignment decide(const SfcEnv& env) override { return gp_assign(env.current(), env.network()); }
};

class IlsPolicy : public Policy {
public:
    IlsPolicy(std::uint64_t seed, LocalSearchOptions opts = {});
    std::string name() const override { return "ils"; }
    Assignment decide(const SfcEnv& env) override;

private:
    LocalSearchOptions opts_;
    Rng rng_;
};

struct RailsConfig {
    double rho = 0.5;
    std::size_t update_every = 100;
    RiskConfig risk;
    LocalSearchOptions search;
};

class RailsPolicy : public Policy {
public:
    RailsPolicy(std::size_t num_dcs, const RailsConfig& cfg, std::uint64_t seed);
    std::string name() const override { return "rails"; }
    Assignment decide(const SfcEnv& env) override;
    /// Labels the decision-time features and refreshes every model each
    /// `update_every` observed requests.
    void observe(const SfcRequest& request, const Assignment& assignment, const AdmissionOutcome& outcome) override;

    std::vector<RiskModel>& models() { return models_; }
    std::size_t processed() const { return processed_; }
    std::size_t refreshes() const { return refreshes_; }

    void save(const std::filesystem::path& path);
    void load(const std::filesystem::path& path);

private:
    RailsConfig cfg_;
    Rng rng_;
    std::vector<RiskModel> models_;
    std::vector<std::optional<RiskFeatures>> pending_;  // per DC, from the last decide
    std::size_t processed_ = 0;
    std::size_t refreshes_ = 0;
};

}  // namespace sfcp
